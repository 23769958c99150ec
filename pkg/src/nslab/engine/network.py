"""Network assembly: layer specs, parameter init, forward/backward, MSE."""

import copy
from dataclasses import dataclass, field

import numpy as np

from nslab.engine import layers as L
from nslab.errors import NumericError, ShapeError
from nslab.rng import derive_rng

SETUPS = ("relu_maxpool", "softplus_avepool")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the conv/tconv/activation/pool vocabulary."""

    kind: str  # conv | transpose_conv | activation | pool
    in_channels: int = 0
    out_channels: int = 0
    kernel_size: int = 0
    stride: int = 1
    padding: int = 0
    output_padding: int = 0
    activation: str = ""  # relu | softplus | identity
    pool: str = ""  # max | average

    def __post_init__(self):
        if self.kind in ("conv", "transpose_conv"):
            if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
                raise ShapeError(f"invalid geometry in {self}")
        elif self.kind == "activation":
            if self.activation not in ("relu", "softplus", "identity"):
                raise ValueError(f"unknown activation {self.activation!r}")
        elif self.kind == "pool":
            if self.pool not in ("max", "average"):
                raise ValueError(f"unknown pool {self.pool!r}")
            if self.kernel_size < 1 or self.stride < 1:
                raise ShapeError(f"invalid geometry in {self}")
        else:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    @staticmethod
    def conv(c_in, c_out, k=3, s=1, p=1):
        return LayerSpec("conv", c_in, c_out, kernel_size=k, stride=s, padding=p)

    @staticmethod
    def transpose_conv(c_in, c_out, k=3, s=1, p=1, op=0):
        return LayerSpec(
            "transpose_conv", c_in, c_out, kernel_size=k, stride=s, padding=p,
            output_padding=op,
        )

    @staticmethod
    def act(kind):
        return LayerSpec("activation", activation=kind)

    @staticmethod
    def pooling(kind, k=2, s=2):
        return LayerSpec("pool", pool=kind, kernel_size=k, stride=s)

    @property
    def has_params(self) -> bool:
        return self.kind in ("conv", "transpose_conv")

    def out_shape(self, chw):
        c, h, w = chw
        if self.kind == "conv":
            if c != self.in_channels:
                raise ShapeError(
                    f"layer expects {self.in_channels} channels, got input shape {chw}"
                )
            return (
                self.out_channels,
                L.conv_output_hw(h, self.kernel_size, self.stride, self.padding),
                L.conv_output_hw(w, self.kernel_size, self.stride, self.padding),
            )
        if self.kind == "transpose_conv":
            if c != self.in_channels:
                raise ShapeError(
                    f"layer expects {self.in_channels} channels, got input shape {chw}"
                )
            return (
                self.out_channels,
                L.transpose_conv_output_hw(
                    h, self.kernel_size, self.stride, self.padding, self.output_padding
                ),
                L.transpose_conv_output_hw(
                    w, self.kernel_size, self.stride, self.padding, self.output_padding
                ),
            )
        if self.kind == "pool":
            k, s = self.kernel_size, self.stride
            if h < k or w < k or (h - k) % s or (w - k) % s:
                raise ShapeError(f"pool {k}x{k}/{s} does not tile input shape {chw}")
            return (c, (h - k) // s + 1, (w - k) // s + 1)
        return chw


_KIND_TAG = {"conv": "conv", "transpose_conv": "tconv", "activation": "act", "pool": "pool"}


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layer list plus the setup tag it was built for."""

    layers: tuple
    setup: str = ""
    input_shape: tuple = (1, 28, 28)

    def __post_init__(self):
        shape = self.input_shape
        for spec in self.layers:
            shape = spec.out_shape(shape)  # raises if the chain is inconsistent

    def shapes(self):
        """Activation shape (C, H, W) at every boundary: index i is the input
        of layer i; the last entry is the network output."""
        out = [self.input_shape]
        for spec in self.layers:
            out.append(spec.out_shape(out[-1]))
        return out

    def layer_names(self):
        """Readable per-kind names in order, e.g. conv1, act1, pool1, conv2, ..."""
        counts = {}
        names = []
        for spec in self.layers:
            tag = _KIND_TAG[spec.kind]
            counts[tag] = counts.get(tag, 0) + 1
            names.append(f"{tag}{counts[tag]}")
        return names

    def layer_index(self, tag: str, ordinal: int) -> int:
        """Index of the ordinal-th (1-based) layer of a given tag ('conv2', ...)."""
        name = f"{tag}{ordinal}"
        names = self.layer_names()
        if name not in names:
            raise KeyError(f"no layer named {name}; have {names}")
        return names.index(name)


def autoencoder_layers(setup: str):
    if setup not in SETUPS:
        raise ValueError(f"unknown setup {setup!r}; expected one of {SETUPS}")
    act = "relu" if setup == "relu_maxpool" else "softplus"
    pool = "max" if setup == "relu_maxpool" else "average"
    return (
        LayerSpec.conv(1, 8, k=3, s=1, p=1),
        LayerSpec.act(act),
        LayerSpec.pooling(pool),
        LayerSpec.conv(8, 16, k=3, s=1, p=1),
        LayerSpec.act(act),
        LayerSpec.pooling(pool),
        LayerSpec.transpose_conv(16, 16, k=3, s=2, p=1, op=1),
        LayerSpec.act(act),
        LayerSpec.transpose_conv(16, 8, k=3, s=2, p=1, op=1),
        LayerSpec.act(act),
        LayerSpec.transpose_conv(8, 1, k=3, s=1, p=1, op=0),
    )


def build_autoencoder(setup: str, input_shape=(1, 28, 28)) -> NetworkSpec:
    """The two-setup autoencoder: conv(1->8)+act+pool, conv(8->16)+act+pool,
    then three transpose convs (16->16->8->1) with activations in between and
    an identity output."""
    return NetworkSpec(autoencoder_layers(setup), setup=setup, input_shape=input_shape)


def _kernel_shape(spec: LayerSpec):
    k = spec.kernel_size
    if spec.kind == "conv":
        return (spec.out_channels, spec.in_channels, k, k)
    return (spec.in_channels, spec.out_channels, k, k)


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> dict:
    """Uniform fan-in-scaled init: He-style bounds for the relu setup,
    Xavier-style for softplus. Biases start at zero."""
    he = spec.setup == "relu_maxpool"
    params = {}
    for i, layer in enumerate(spec.layers):
        if not layer.has_params:
            continue
        k = layer.kernel_size
        fan_in = layer.in_channels * k * k
        fan_out = layer.out_channels * k * k
        bound = np.sqrt(6.0 / fan_in) if he else np.sqrt(6.0 / (fan_in + fan_out))
        params[f"W{i}"] = rng.uniform(-bound, bound, size=_kernel_shape(layer))
        params[f"b{i}"] = np.zeros(layer.out_channels)
    return params


@dataclass
class Network:
    """A NetworkSpec bound to concrete parameter tensors."""

    spec: NetworkSpec
    params: dict = field(default_factory=dict)

    @staticmethod
    def initialized(spec: NetworkSpec, seed: int) -> "Network":
        return Network(spec, init_params(spec, derive_rng(seed, "init")))

    def copy(self) -> "Network":
        return Network(self.spec, copy.deepcopy(self.params))

    def layer_forward(self, i: int, x):
        spec = self.spec.layers[i]
        if spec.kind == "conv":
            y = L.conv2d_forward(
                x, self.params[f"W{i}"], self.params[f"b{i}"], spec.stride, spec.padding
            )
            return y, x
        if spec.kind == "transpose_conv":
            y = L.transpose_conv2d_forward(
                x, self.params[f"W{i}"], self.params[f"b{i}"],
                spec.stride, spec.padding, spec.output_padding,
            )
            return y, x
        if spec.kind == "activation":
            return L.activation_apply(x, spec.activation), x
        y, routing = L.pool_forward(x, spec.pool, spec.kernel_size, spec.stride)
        return y, (x.shape, routing)

    def layer_backward(self, i: int, cache, dy):
        """Returns (dx, {param grads}) for layer i."""
        spec = self.spec.layers[i]
        if spec.kind == "conv":
            x = cache
            dx = L.conv2d_input_grad(
                dy, self.params[f"W{i}"], x.shape[2:], spec.stride, spec.padding
            )
            dw = L.conv2d_kernel_grad(x, dy, spec.kernel_size, spec.stride, spec.padding)
            return dx, {f"W{i}": dw, f"b{i}": dy.sum(axis=(0, 2, 3))}
        if spec.kind == "transpose_conv":
            x = cache
            # out = adjoint-of-conv applied to x, so dx is the plain conv of dy
            dx = L.conv2d_forward(dy, self.params[f"W{i}"], None, spec.stride, spec.padding)
            dw = L.conv2d_kernel_grad(dy, x, spec.kernel_size, spec.stride, spec.padding)
            return dx, {f"W{i}": dw, f"b{i}": dy.sum(axis=(0, 2, 3))}
        if spec.kind == "activation":
            return dy * L.activation_grad(cache, spec.activation), {}
        x_shape, routing = cache
        dx = L.pool_backward(dy, routing, x_shape, spec.pool, spec.kernel_size, spec.stride)
        return dx, {}

    def forward(self, x) -> np.ndarray:
        for i in range(len(self.spec.layers)):
            x, _ = self.layer_forward(i, x)
        return x

    def forward_collect(self, x):
        """Forward pass returning every boundary activation: entry 0 is the
        input, entry i+1 the output of layer i."""
        acts = [np.asarray(x, dtype=np.float64)]
        for i in range(len(self.spec.layers)):
            y, _ = self.layer_forward(i, acts[-1])
            acts.append(y)
        return acts


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def backward_and_grads(net: Network, batch_in, batch_target):
    """MSE loss of the network on a batch plus gradients for every parameter."""
    caches = []
    x = np.asarray(batch_in, dtype=np.float64)
    for i in range(len(net.spec.layers)):
        x, cache = net.layer_forward(i, x)
        caches.append(cache)
    loss, dy = mse_loss(x, batch_target)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    grads = {}
    for i in reversed(range(len(net.spec.layers))):
        dy, layer_grads = net.layer_backward(i, caches[i], dy)
        grads.update(layer_grads)
    return loss, grads
