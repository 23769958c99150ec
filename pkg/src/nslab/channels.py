"""Propagation channel models for nonsmoothness events.

Conv and transpose-conv layers propagate SMPs as a weighted sum over the
receptive field with nonnegative weights |W| (actual mode) or a single
expected weight w0 (expected mode). The ReLU block behaves like a
Bernoulli-Gaussian channel: an input event is annihilated with probability
1 - theta, otherwise passed with Gaussian perturbation. The max-pool block is
a two-branch model: small inputs produce a plain Gaussian output, larger ones
a two-component mixture whose first component tracks the input.

A Monte Carlo pipeline composes the three stages to predict output-SMP
distributions; plain OLS/Pearson/Wasserstein utilities quantify the fits.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from nslab.engine.layers import conv2d_forward, pool_forward, transpose_conv2d_forward
from nslab.errors import NumericError, ShapeError

DEFAULT_POOL_SPLIT = 0.0025  # input-SMP threshold between the two max-pool branches


@dataclass
class ConvChannelModel:
    """Linear SMP propagation through a conv or transpose-conv layer.

    mode "actual" uses the per-weight magnitudes |W| (kernel tensor in the
    layer's own axis convention); mode "expected" uses the scalar w0 with
    channel-mean input SMPs.

    The structural receptive-field sum counts every contributing event; in
    recorded data, event collisions and the relative peak threshold make real
    output SMPs a roughly affine function of that sum. cal_slope/cal_intercept
    hold that fitted linear model (identity by default, so the raw sum is
    returned unless a calibration was fitted).
    """

    kind: str  # conv | transpose_conv
    stride: int
    padding: int
    output_padding: int = 0
    mode: str = "actual"
    weights: np.ndarray | None = None  # |W|, actual mode
    w0: float = 0.0
    kernel_size: int = 0  # expected mode geometry
    in_channels: int = 0
    cal_slope: float = 1.0
    cal_intercept: float = 0.0

    def __post_init__(self):
        if self.kind not in ("conv", "transpose_conv"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.mode == "actual":
            if self.weights is None:
                raise ValueError("actual mode requires a weight tensor")
            self.weights = np.abs(np.asarray(self.weights, dtype=np.float64))
            self.kernel_size = self.weights.shape[2]
            if self.kind == "conv":
                self.in_channels = self.weights.shape[1]
            else:
                self.in_channels = self.weights.shape[0]
        elif self.mode == "expected":
            if self.w0 < 0:
                raise ValueError("w0 must be nonnegative")
            if self.kernel_size < 1 or self.in_channels < 1:
                raise ValueError("expected mode requires kernel_size and in_channels")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")

    @staticmethod
    def from_layer(layer_spec, kernel, mode: str = "actual") -> "ConvChannelModel":
        kind = layer_spec.kind
        if kind not in ("conv", "transpose_conv"):
            raise ValueError(f"layer kind {kind} has no conv channel model")
        common = dict(
            kind=kind, stride=layer_spec.stride, padding=layer_spec.padding,
            output_padding=layer_spec.output_padding,
        )
        if mode == "actual":
            return ConvChannelModel(mode="actual", weights=kernel, **common)
        return ConvChannelModel(
            mode="expected", w0=estimate_w0(kernel),
            kernel_size=layer_spec.kernel_size, in_channels=layer_spec.in_channels,
            **common,
        )


def estimate_w0(kernel) -> float:
    """Sample mean of |W| over all kernel entries."""
    k = np.asarray(kernel, dtype=np.float64)
    if k.size == 0:
        raise ShapeError("empty kernel")
    return float(np.mean(np.abs(k)))


def predict_conv_smp(input_smp, model: ConvChannelModel) -> np.ndarray:
    """Predicted output SMPs.

    input_smp is (C_in, H, W). Actual mode returns per-output-node values
    (C_out, H', W'): the sum of |W| * X over each receptive field, padding
    contributing zero. Expected mode returns per-location expected values
    (H', W'): w0 * C_in * (window sum of channel-mean input SMPs).
    """
    x = np.asarray(input_smp, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"input SMP map must be (C, H, W), got {x.shape}")
    forward = conv2d_forward if model.kind == "conv" else transpose_conv2d_forward
    kwargs = {} if model.kind == "conv" else {"output_padding": model.output_padding}
    if model.mode == "actual":
        if x.shape[0] != model.in_channels:
            raise ShapeError(
                f"input SMP channels {x.shape[0]} != model channels {model.in_channels}"
            )
        out = forward(x[None], model.weights, None, model.stride, model.padding, **kwargs)[0]
    else:
        mean_x = x.mean(axis=0)
        k = model.kernel_size
        window = np.full((1, 1, k, k), model.w0 * model.in_channels)
        out = forward(mean_x[None, None], window, None, model.stride, model.padding,
                      **kwargs)[0, 0]
    if model.cal_slope == 1.0 and model.cal_intercept == 0.0:
        return out
    return np.maximum(model.cal_slope * out + model.cal_intercept, 0.0)


@dataclass
class ReluChannelParams:
    """Bernoulli-Gaussian ReLU channel: pass probability theta, perturbation
    std sigma, and the tolerance below which an output SMP counts as zero."""

    theta: float
    sigma: float
    eps_zero: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")


def fit_relu_channel(x, y, eps_zero: float) -> ReluChannelParams:
    """theta = fraction of pairs whose output survives (y > eps_zero);
    sigma = std of (y - x) over the surviving pairs."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size == 0:
        raise ShapeError(f"need matching nonempty pair arrays, got {x.size} and {y.size}")
    alive = y > eps_zero
    theta = float(alive.mean())
    sigma = float(np.std(y[alive] - x[alive])) if alive.any() else 0.0
    return ReluChannelParams(theta=theta, sigma=sigma, eps_zero=eps_zero)


def sample_relu_channel(x, params: ReluChannelParams, rng: np.random.Generator):
    """Draw output SMPs: zero with probability 1 - theta, else Gaussian around
    the input, clamped at zero (SMP cannot be negative)."""
    x = np.asarray(x, dtype=np.float64)
    passed = rng.random(x.shape) < params.theta
    out = x + params.sigma * rng.standard_normal(x.shape)
    return np.where(passed, np.maximum(out, 0.0), 0.0)


@dataclass
class MaxPoolChannelParams:
    """Two-branch max-pool channel split at input SMP a: below, a plain
    Gaussian (mu0, sigma0); at or above, a mixture of a diagonal component
    N(x, sigma1) with weight pi0 and an off-diagonal N(mu2, sigma2)."""

    a: float = DEFAULT_POOL_SPLIT
    mu0: float = 0.0
    sigma0: float = 0.0
    pi0: float = 1.0
    sigma1: float = 0.0
    mu2: float = 0.0
    sigma2: float = 0.0
    below_fit: bool = False
    above_fit: bool = False

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError(f"split threshold must be positive, got {self.a}")
        if not 0.0 <= self.pi0 <= 1.0:
            raise ValueError(f"pi0 must be in [0, 1], got {self.pi0}")
        if min(self.sigma0, self.sigma1, self.sigma2) < 0:
            raise ValueError("standard deviations must be nonnegative")


_SIGMA_FLOOR = 1e-12


def _norm_pdf(y, mu, sigma):
    s = max(float(sigma), _SIGMA_FLOOR)
    z = (y - mu) / s
    return np.exp(-0.5 * z * z) / (s * np.sqrt(2.0 * np.pi))


def fit_maxpool_channel(
    x, y, a: float = DEFAULT_POOL_SPLIT, max_rounds: int = 100, tol: float = 1e-8,
    min_pairs: int = 10,
) -> MaxPoolChannelParams:
    """Fit both branches from paired (input max-window SMP, output SMP) data.

    Below the split, (mu0, sigma0) are the sample mean/std of y. At or above,
    a two-component EM runs with the first component's mean tied per sample to
    x. A branch with fewer than min_pairs pairs is left unfit.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size == 0:
        raise ShapeError(f"need matching nonempty pair arrays, got {x.size} and {y.size}")
    params = MaxPoolChannelParams(a=a)

    below = y[x < a]
    if below.size >= min_pairs:
        params.mu0 = float(below.mean())
        params.sigma0 = float(below.std())
        params.below_fit = True

    xa, ya = x[x >= a], y[x >= a]
    if xa.size >= min_pairs:
        pi0 = 0.5
        sigma1 = max(float(np.median(np.abs(ya - xa))), _SIGMA_FLOOR)
        mu2, sigma2 = float(ya.mean()), max(float(ya.std()), _SIGMA_FLOOR)
        prev_ll = -np.inf
        for _ in range(max_rounds):
            p1 = pi0 * _norm_pdf(ya, xa, sigma1)
            p2 = (1.0 - pi0) * _norm_pdf(ya, mu2, sigma2)
            total = p1 + p2
            total[total == 0.0] = _SIGMA_FLOOR
            r = p1 / total
            ll = float(np.sum(np.log(total)))
            pi0 = float(r.mean())
            w1 = r.sum()
            if w1 > 0:
                sigma1 = float(np.sqrt(np.sum(r * (ya - xa) ** 2) / w1))
            w2 = (1.0 - r).sum()
            if w2 > 0:
                mu2 = float(np.sum((1.0 - r) * ya) / w2)
                sigma2 = float(np.sqrt(np.sum((1.0 - r) * (ya - mu2) ** 2) / w2))
            if not np.isfinite(ll) or abs(ll - prev_ll) < tol:
                break
            prev_ll = ll
        params.pi0 = min(max(pi0, 0.0), 1.0)
        params.sigma1 = sigma1 if sigma1 > _SIGMA_FLOOR else 0.0
        params.mu2 = mu2
        params.sigma2 = sigma2 if sigma2 > _SIGMA_FLOOR else 0.0
        params.above_fit = True

    return params


def sample_maxpool_channel(x, params: MaxPoolChannelParams, rng: np.random.Generator):
    """Draw output SMPs from whichever branch each input falls in; negative
    draws are clamped to zero."""
    x = np.asarray(x, dtype=np.float64)
    below = x < params.a
    if below.any() and not params.below_fit:
        raise NumericError("max-pool channel: below-split branch was never fitted")
    if (~below).any() and not params.above_fit:
        raise NumericError("max-pool channel: above-split branch was never fitted")
    out = np.empty_like(x)
    n_below = int(below.sum())
    if n_below:
        out[below] = params.mu0 + params.sigma0 * rng.standard_normal(n_below)
    n_above = x.size - n_below
    if n_above:
        xa = x[~below]
        diagonal = rng.random(n_above) < params.pi0
        draws = np.where(
            diagonal,
            xa + params.sigma1 * rng.standard_normal(n_above),
            params.mu2 + params.sigma2 * rng.standard_normal(n_above),
        )
        out[~below] = draws
    return np.maximum(out, 0.0)


@dataclass
class ChannelStack:
    """conv -> ReLU -> max-pool pipeline stages with the pool geometry."""

    conv: ConvChannelModel
    relu: ReluChannelParams
    pool: MaxPoolChannelParams
    pool_k: int = 2
    pool_s: int = 2


def window_max(smp_map, k: int = 2, s: int = 2) -> np.ndarray:
    """Per pooling window, the max input SMP over the corresponding locations."""
    x = np.asarray(smp_map, dtype=np.float64)
    out, _ = pool_forward(x[None] if x.ndim == 3 else x[None, None], "max", k, s)
    return out[0] if x.ndim == 3 else out[0, 0]


def monte_carlo_pipeline(
    input_smp, stack: ChannelStack, n_trials: int, rng: np.random.Generator
) -> np.ndarray:
    """Sample the composed channel: deterministic conv prediction, per-node
    ReLU channel draw, windowed max, then max-pool channel draw.

    Returns (n_trials, C, H', W') output-node samples. Each trial uses its own
    child RNG stream, so results do not depend on evaluation order.
    """
    if n_trials < 1:
        raise ValueError("need n_trials >= 1")
    conv_pred = predict_conv_smp(input_smp, stack.conv)
    if conv_pred.ndim == 2:  # expected-mode single map behaves as one channel
        conv_pred = conv_pred[None]
    streams = rng.spawn(n_trials)
    samples = []
    for trial_rng in streams:
        relu_out = sample_relu_channel(conv_pred, stack.relu, trial_rng)
        pooled_x = window_max(relu_out, stack.pool_k, stack.pool_s)
        samples.append(sample_maxpool_channel(pooled_x, stack.pool, trial_rng))
    return np.stack(samples)


@dataclass
class RegressionResult:
    slope: float
    intercept: float
    r2: float


def linreg_r2(pred, real) -> RegressionResult:
    """OLS of real on pred; R^2 = 1 - SSres/SStot."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    real = np.asarray(real, dtype=np.float64).ravel()
    if pred.size != real.size or pred.size < 3:
        raise ShapeError(f"need matching arrays of length >= 3, got {pred.size}, {real.size}")
    if np.ptp(pred) == 0.0:
        raise NumericError("constant predictor: degenerate fit")
    fit = stats.linregress(pred, real)
    resid = real - (fit.slope * pred + fit.intercept)
    ss_tot = float(np.sum((real - real.mean()) ** 2))
    if ss_tot == 0.0:
        raise NumericError("constant response: degenerate fit")
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot
    return RegressionResult(slope=float(fit.slope), intercept=float(fit.intercept), r2=r2)


def pearson(xs, ys) -> float:
    """Sample Pearson correlation."""
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.size != ys.size or xs.size < 3:
        raise ShapeError(f"need matching arrays of length >= 3, got {xs.size}, {ys.size}")
    if np.ptp(xs) == 0.0 or np.ptp(ys) == 0.0:
        raise NumericError("zero variance input to correlation")
    return float(stats.pearsonr(xs, ys).statistic)


def wasserstein1(samples_a, samples_b) -> float:
    """1-D earth-mover distance between two empirical sample sets."""
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ShapeError("empty sample set")
    return float(stats.wasserstein_distance(a, b))


PARAMS_FORMAT_VERSION = 1


def save_channel_params(params, path) -> None:
    """Versioned key-value text persistence for fitted channel parameters."""
    lines = [f"version={PARAMS_FORMAT_VERSION}"]
    if isinstance(params, ReluChannelParams):
        lines.append("kind=relu")
        for name in ("theta", "sigma", "eps_zero"):
            lines.append(f"{name}={getattr(params, name)!r}")
    elif isinstance(params, MaxPoolChannelParams):
        lines.append("kind=maxpool")
        for name in ("a", "mu0", "sigma0", "pi0", "sigma1", "mu2", "sigma2"):
            lines.append(f"{name}={getattr(params, name)!r}")
        lines.append(f"below_fit={int(params.below_fit)}")
        lines.append(f"above_fit={int(params.above_fit)}")
    else:
        raise TypeError(f"cannot persist {type(params)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_channel_params(path):
    fields = {}
    for line in Path(path).read_text().splitlines():
        if line:
            key, _, value = line.partition("=")
            fields[key] = value
    if int(fields.get("version", -1)) != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported channel params version in {path}")
    kind = fields.get("kind")
    if kind == "relu":
        return ReluChannelParams(
            theta=float(fields["theta"]), sigma=float(fields["sigma"]),
            eps_zero=float(fields["eps_zero"]),
        )
    if kind == "maxpool":
        return MaxPoolChannelParams(
            a=float(fields["a"]), mu0=float(fields["mu0"]), sigma0=float(fields["sigma0"]),
            pi0=float(fields["pi0"]), sigma1=float(fields["sigma1"]),
            mu2=float(fields["mu2"]), sigma2=float(fields["sigma2"]),
            below_fit=bool(int(fields["below_fit"])), above_fit=bool(int(fields["above_fit"])),
        )
    raise ValueError(f"unknown channel params kind {kind!r} in {path}")
