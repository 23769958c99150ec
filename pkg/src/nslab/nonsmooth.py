"""Nonsmoothness detection and quantification for sampled time series.

A uniformly sampled series f has second-order difference
delta2 f(t) = f(t+1) + f(t-1) - 2 f(t) at each interior index. Large |delta2|
marks a nonsmooth point; a *peak* is a |delta2| value more than ten times both
the series mean and the series median. SMP is the sum of peak magnitudes, the
per-node statistic used by the propagation channel models; AveNonSmooth is the
plain mean of |delta2| over a whole video.
"""

from dataclasses import dataclass

import numpy as np

from nslab.errors import ShapeError

DEFAULT_TAU_D = 0.02
PEAK_FACTOR = 10.0


@dataclass
class PeakSet:
    """Detected peaks of a |delta2| series: strictly increasing indices into
    the interior (length T-2) grid and the magnitudes there."""

    indices: np.ndarray
    magnitudes: np.ndarray

    def __len__(self):
        return len(self.indices)


def second_order_difference(series) -> np.ndarray:
    """Signed delta2 series of length T-2, evaluated at interior samples only."""
    f = np.asarray(series, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] < 3:
        raise ShapeError(f"need a 1-D series of length >= 3, got shape {f.shape}")
    return f[2:] + f[:-2] - 2.0 * f[1:-1]


def detect_nonsmooth(series, tau_d: float = DEFAULT_TAU_D) -> np.ndarray:
    """Interior indices (into the delta2 grid) where |delta2| exceeds tau_d."""
    if tau_d <= 0:
        raise ValueError(f"tau_d must be positive, got {tau_d}")
    return np.flatnonzero(np.abs(second_order_difference(series)) > tau_d)


def find_peaks(absd2) -> PeakSet:
    """Peaks of a nonnegative |delta2| series: entries exceeding ten times
    both the sample mean and the sample median. An all-zero series has no
    peaks (nothing exceeds ten times its own mean)."""
    a = np.asarray(absd2, dtype=np.float64)
    if a.ndim != 1:
        raise ShapeError(f"need a 1-D series, got shape {a.shape}")
    if a.size and a.min() < 0:
        raise ValueError("|delta2| series must be nonnegative")
    if a.size == 0:
        return PeakSet(np.empty(0, dtype=np.intp), np.empty(0))
    mask = (a > PEAK_FACTOR * a.mean()) & (a > PEAK_FACTOR * np.median(a))
    idx = np.flatnonzero(mask)
    return PeakSet(idx, a[idx])


def smp(series) -> float:
    """Sum of the magnitudes of peaks in the |delta2| series of a raw node
    trace; 0.0 when no peaks are detected."""
    peaks = find_peaks(np.abs(second_order_difference(series)))
    return float(peaks.magnitudes.sum())


def smp_field(traces) -> np.ndarray:
    """smp() applied along axis 0 of an array of node traces, vectorized.

    traces has shape (T, ...); the result drops the time axis.
    """
    x = np.asarray(traces, dtype=np.float64)
    if x.shape[0] < 3:
        raise ShapeError(f"need >= 3 samples along axis 0, got shape {x.shape}")
    a = np.abs(x[2:] + x[:-2] - 2.0 * x[1:-1])
    mean = a.mean(axis=0)
    median = np.median(a, axis=0)
    mask = (a > PEAK_FACTOR * mean) & (a > PEAK_FACTOR * median)
    return np.where(mask, a, 0.0).sum(axis=0)


def ave_nonsmooth(video) -> float:
    """Mean |delta2| over all pixels and interior times of a video.

    Accepts a VideoSequence or a (T, H, W) array; the divisor is the count of
    actually summed terms, M*N*(T-2).
    """
    frames = getattr(video, "frames", video)
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] < 3:
        raise ShapeError(f"need (T >= 3, H, W) frames, got shape {x.shape}")
    d2 = x[2:] + x[:-2] - 2.0 * x[1:-1]
    return float(np.mean(np.abs(d2)))
