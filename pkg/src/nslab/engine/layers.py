"""Layer primitives on rank-4 tensors of shape (batch, channels, height, width).

All arrays are float64 and row-major. Convolution is cross-correlation (no
kernel flip), matching the usual deep-learning convention; the transpose
convolution is its exact adjoint, so <conv(x), y> == <x, tconv(y)> holds to
rounding error.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from nslab.errors import NumericError, ShapeError


def _check_tensor4(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank-4 (B, C, H, W), got shape {x.shape}")
    return x


def _check_finite(x: np.ndarray, name: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"{name} contains non-finite values")


def conv_output_hw(hw: int, k: int, s: int, p: int) -> int:
    return (hw + 2 * p - k) // s + 1


def transpose_conv_output_hw(hw: int, k: int, s: int, p: int, op: int) -> int:
    return (hw - 1) * s - 2 * p + k + op


def _im2col(x: np.ndarray, k: int, s: int, p: int) -> np.ndarray:
    """Patch matrix of shape (B*H'*W', C*k*k) for a padded, strided window scan."""
    b, c, h, w = x.shape
    ho, wo = conv_output_hw(h, k, s, p), conv_output_hw(w, k, s, p)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p > 0 else x
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b * ho * wo, c * k * k
    )


def _col2im(cols: np.ndarray, x_shape, k: int, s: int, p: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patch rows back onto the image grid."""
    b, c, h, w = x_shape
    ho, wo = conv_output_hw(h, k, s, p), conv_output_hw(w, k, s, p)
    cols6 = cols.reshape(b, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((b, c, h + 2 * p, w + 2 * p))
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + s * ho : s, j : j + s * wo : s] += cols6[:, :, i, j]
    if p == 0:
        return xp
    return xp[:, :, p:-p, p:-p]


def conv2d_forward(x, kernel, bias, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Strided 2-D convolution: each output node is the windowed dot product
    of the input against its kernel, plus the output channel's bias."""
    x = _check_tensor4(x, "input")
    kernel = _check_tensor4(kernel, "kernel")
    c_out, c_in, k, k2 = kernel.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got shape {kernel.shape}")
    if x.shape[1] != c_in:
        raise ShapeError(
            f"input shape {x.shape} does not match kernel shape {kernel.shape}: "
            f"expected {c_in} input channels"
        )
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride/padding ({stride}, {padding})")
    ho = conv_output_hw(x.shape[2], k, stride, padding)
    wo = conv_output_hw(x.shape[3], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"conv output would be {ho}x{wo} for input {x.shape} and kernel {kernel.shape}"
        )
    _check_finite(x, "input")
    bias = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    cols = _im2col(x, k, stride, padding)
    out = cols @ kernel.reshape(c_out, -1).T + bias
    return np.ascontiguousarray(
        out.reshape(x.shape[0], ho, wo, c_out).transpose(0, 3, 1, 2)
    )


def conv2d_input_grad(dout, kernel, input_hw, stride: int, padding: int) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input (also the transpose-conv map)."""
    dout = _check_tensor4(dout, "dout")
    kernel = np.asarray(kernel, dtype=np.float64)
    c_out, c_in, k, _ = kernel.shape
    b = dout.shape[0]
    h, w = input_hw
    dcols = dout.transpose(0, 2, 3, 1).reshape(-1, c_out) @ kernel.reshape(c_out, -1)
    return _col2im(dcols, (b, c_in, h, w), k, stride, padding)


def conv2d_kernel_grad(x, dout, k: int, stride: int, padding: int) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. the kernel."""
    x = _check_tensor4(x, "input")
    dout = _check_tensor4(dout, "dout")
    c_out = dout.shape[1]
    cols = _im2col(x, k, stride, padding)
    dw = dout.transpose(0, 2, 3, 1).reshape(-1, c_out).T @ cols
    return dw.reshape(c_out, x.shape[1], k, k)


def transpose_conv2d_forward(
    x, kernel, bias, stride: int = 1, padding: int = 0, output_padding: int = 0
) -> np.ndarray:
    """Transpose convolution, the exact adjoint of conv2d_forward.

    The kernel has shape (C_in, C_out, k, k): the same array acts as the
    kernel of the conv this layer is adjoint to.
    """
    x = _check_tensor4(x, "input")
    kernel = _check_tensor4(kernel, "kernel")
    c_in, c_out, k, k2 = kernel.shape
    if k != k2:
        raise ShapeError(f"kernel must be square, got shape {kernel.shape}")
    if x.shape[1] != c_in:
        raise ShapeError(
            f"input shape {x.shape} does not match kernel shape {kernel.shape}: "
            f"expected {c_in} input channels"
        )
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride/padding ({stride}, {padding})")
    if not 0 <= output_padding < stride:
        raise ShapeError(
            f"output_padding must lie in [0, stride), got {output_padding} with stride {stride}"
        )
    ho = transpose_conv_output_hw(x.shape[2], k, stride, padding, output_padding)
    wo = transpose_conv_output_hw(x.shape[3], k, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError(
            f"transpose conv output would be {ho}x{wo} for input {x.shape} "
            f"and kernel {kernel.shape}"
        )
    _check_finite(x, "input")
    bias = np.zeros(c_out) if bias is None else np.asarray(bias, dtype=np.float64)
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    out = conv2d_input_grad(x, kernel, (ho, wo), stride, padding)
    return out + bias[None, :, None, None]


def activation_apply(x, kind: str) -> np.ndarray:
    """Elementwise activation: relu, softplus (overflow-safe), or identity."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "softplus":
        return np.logaddexp(0.0, x)
    if kind == "identity":
        return x.copy()
    raise ValueError(f"unknown activation kind {kind!r}")


def activation_grad(x, kind: str) -> np.ndarray:
    """Derivative of the activation at pre-activation x. ReLU uses subgradient
    0 at exactly 0."""
    x = np.asarray(x, dtype=np.float64)
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "softplus":
        # sigmoid, computed stably on both tails
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    if kind == "identity":
        return np.ones_like(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def _pool_windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    b, c, h, w = x.shape
    if h < k or w < k or (h - k) % s or (w - k) % s:
        raise ShapeError(
            f"pool window {k}x{k} stride {s} does not tile input of shape {x.shape}"
        )
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def pool_forward(x, kind: str, k: int = 2, s: int = 2):
    """Window pooling. Max pooling also returns the routing map: the flat
    row-major index within each window of the (first) maximum. Average
    pooling returns routing None."""
    x = _check_tensor4(x, "input")
    win = _pool_windows(x, k, s)
    if kind == "max":
        flat = win.reshape(*win.shape[:4], k * k)
        routing = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, routing[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(out), routing
    if kind == "average":
        return win.mean(axis=(-2, -1)), None
    raise ValueError(f"unknown pool kind {kind!r}")


def pool_backward(dout, routing, x_shape, kind: str, k: int = 2, s: int = 2) -> np.ndarray:
    """Scatter pooled gradients back: max pooling routes each window's
    gradient only to its argmax node; average pooling spreads it evenly."""
    dout = _check_tensor4(dout, "dout")
    b, c, h, w = x_shape
    ho, wo = dout.shape[2], dout.shape[3]
    if kind == "max":
        if s == k:
            # non-overlapping windows: scatter within each window, then fold
            scat = np.zeros((b, c, ho, wo, k * k))
            np.put_along_axis(scat, routing[..., None], dout[..., None], axis=-1)
            return np.ascontiguousarray(
                scat.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
            ).reshape(x_shape)
        dx = np.zeros(x_shape)
        bi, ci, ri, qi = np.indices(dout.shape, sparse=False)
        np.add.at(dx, (bi, ci, ri * s + routing // k, qi * s + routing % k), dout)
        return dx
    if kind == "average":
        dx = np.zeros(x_shape)
        g = dout / (k * k)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += g
        return dx
    raise ValueError(f"unknown pool kind {kind!r}")
