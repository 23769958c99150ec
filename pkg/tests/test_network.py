"""Network assembly, loss, and gradients against finite differences."""

import numpy as np
import pytest

from nslab.engine import (
    LayerSpec,
    Network,
    NetworkSpec,
    backward_and_grads,
    build_autoencoder,
    mse_loss,
)
from nslab.errors import ShapeError


def finite_diff_param_grad(net, name, batch, target, h=1e-5):
    """Central finite differences of the MSE loss w.r.t. one parameter."""
    grad = np.zeros_like(net.params[name])
    flat = net.params[name].ravel()
    gflat = grad.ravel()
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        lp, _ = mse_loss(net.forward(batch), target)
        flat[idx] = orig - h
        lm, _ = mse_loss(net.forward(batch), target)
        flat[idx] = orig
        gflat[idx] = (lp - lm) / (2 * h)
    return grad


def single_layer_net(layer, input_shape, seed=0):
    spec = NetworkSpec((layer,), setup="relu_maxpool", input_shape=input_shape)
    return Network.initialized(spec, seed)


class TestSpecs:
    def test_autoencoder_shape_chain(self):
        spec = build_autoencoder("relu_maxpool")
        shapes = spec.shapes()
        assert shapes[0] == (1, 28, 28)
        assert shapes[-1] == (1, 28, 28)
        assert (16, 7, 7) in shapes  # bottleneck after the second pool

    def test_setups_differ_only_in_activation_and_pool(self):
        a = build_autoencoder("relu_maxpool").layers
        b = build_autoencoder("softplus_avepool").layers
        for la, lb in zip(a, b):
            assert la.kind == lb.kind
            assert (la.in_channels, la.out_channels, la.kernel_size, la.stride,
                    la.padding, la.output_padding) == (
                    lb.in_channels, lb.out_channels, lb.kernel_size, lb.stride,
                    lb.padding, lb.output_padding)
            if la.kind == "activation" and la.activation != "identity":
                assert (la.activation, lb.activation) == ("relu", "softplus")
            if la.kind == "pool":
                assert (la.pool, lb.pool) == ("max", "average")

    def test_layer_names_and_lookup(self):
        spec = build_autoencoder("relu_maxpool")
        names = spec.layer_names()
        assert names[0] == "conv1"
        assert names[3] == "conv2"
        assert names[-1] == "tconv3"
        assert spec.layer_index("conv", 2) == 3

    def test_inconsistent_channel_chain_rejected(self):
        with pytest.raises(ShapeError):
            NetworkSpec(
                (LayerSpec.conv(1, 8), LayerSpec.conv(4, 8)), input_shape=(1, 8, 8)
            )


class TestLossAndBackward:
    def test_mse_hand_value(self):
        loss, _ = mse_loss(np.array([1.0, 2.0]), np.array([0.0, 0.0]))
        assert loss == pytest.approx(2.5, abs=1e-15)

    def test_identity_net_perfect_fit(self):
        net = single_layer_net(LayerSpec.conv(1, 1, k=3, s=1, p=1), (1, 4, 4))
        k = np.zeros((1, 1, 3, 3))
        k[0, 0, 1, 1] = 1.0
        net.params["W0"] = k
        net.params["b0"] = np.zeros(1)
        x = np.random.default_rng(3).normal(size=(2, 1, 4, 4))
        loss, grads = backward_and_grads(net, x, x)
        assert loss == 0.0
        for g in grads.values():
            np.testing.assert_array_equal(g, np.zeros_like(g))

    @pytest.mark.parametrize(
        "layer,shape",
        [
            (LayerSpec.conv(2, 3, k=3, s=1, p=1), (2, 4, 4)),
            (LayerSpec.conv(1, 2, k=2, s=2, p=0), (1, 4, 4)),
            (LayerSpec.transpose_conv(2, 1, k=3, s=2, p=1, op=1), (2, 4, 4)),
            (LayerSpec.transpose_conv(1, 2, k=3, s=1, p=1, op=0), (1, 4, 4)),
        ],
    )
    def test_param_grads_match_finite_differences(self, layer, shape):
        net = single_layer_net(layer, shape, seed=11)
        rng = np.random.default_rng(5)
        batch = rng.normal(size=(2, *shape))
        target = rng.normal(size=(2, *layer.out_shape(shape)))
        _, grads = backward_and_grads(net, batch, target)
        for name in net.params:
            fd = finite_diff_param_grad(net, name, batch, target)
            denom = np.maximum(np.abs(fd), 1e-6)
            assert np.max(np.abs(grads[name] - fd) / denom) < 1e-4

    def test_grads_through_full_autoencoder(self):
        net = Network.initialized(build_autoencoder("softplus_avepool", (1, 8, 8)), 2)
        batch = np.random.default_rng(9).normal(size=(1, 1, 8, 8))
        target = np.zeros_like(batch)
        _, grads = backward_and_grads(net, batch, target)

        def loss_of():
            l, _ = mse_loss(net.forward(batch), target)
            return l

        for name in ("b6", "W10"):
            flat = net.params[name].ravel()
            for idx in range(min(flat.size, 8)):
                orig = flat[idx]
                flat[idx] = orig + 1e-5
                lp = loss_of()
                flat[idx] = orig - 1e-5
                lm = loss_of()
                flat[idx] = orig
                fd_val = (lp - lm) / 2e-5
                assert abs(grads[name].ravel()[idx] - fd_val) / max(abs(fd_val), 1e-8) < 1e-4

    def test_shape_mismatch_raises(self):
        net = single_layer_net(LayerSpec.conv(1, 1, k=3, s=1, p=1), (1, 4, 4))
        with pytest.raises(ShapeError):
            backward_and_grads(net, np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 5, 5)))
