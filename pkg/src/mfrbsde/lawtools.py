"""Empirical one-dimensional laws and Wasserstein distances between them."""

from __future__ import annotations

import numpy as np

from .model import LawView

__all__ = ["LawCurve", "law_of", "wasserstein_p", "curve_distance"]


class LawCurve(list):
    """One :class:`LawView` per grid point ``t_0 .. t_N``."""

    def means(self) -> np.ndarray:
        return np.array([lv.mean for lv in self])


def law_of(y_paths, i=None, weights=None) -> LawView:
    """Law of column ``i`` of ``y_paths`` (or of a 1-D array when ``i`` is None)."""
    v = np.asarray(y_paths, dtype=float)
    if i is not None:
        v = v[:, i] if v.ndim == 2 else v[i]
    return LawView.from_values(v, weights)


def _quantile_integral(a: LawView, b: LawView, p: float) -> float:
    # exact integral of |F_a^{-1}(u) - F_b^{-1}(u)|^p over u in (0, 1)
    wa = a.weights if a.weights is not None else np.full(a.size, 1.0 / a.size)
    wb = b.weights if b.weights is not None else np.full(b.size, 1.0 / b.size)
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    u = np.union1d(ca, cb)
    du = np.diff(np.concatenate([[0.0], u]))
    mid = u - 0.5 * du
    ia = np.minimum(np.searchsorted(ca, mid, side="left"), a.size - 1)
    ib = np.minimum(np.searchsorted(cb, mid, side="left"), b.size - 1)
    return float(np.dot(du, np.abs(a.sample[ia] - b.sample[ib]) ** p))


def _resample(sample: np.ndarray, n: int) -> np.ndarray:
    # linear interpolation of the empirical quantile function at midpoints
    m = sample.size
    src = (np.arange(m) + 0.5) / m
    dst = (np.arange(n) + 0.5) / n
    return np.interp(dst, src, sample)


def wasserstein_p(a: LawView, b: LawView, p: float = 2.0) -> float:
    """p-Wasserstein distance between two one-dimensional laws.

    Equal-size empirical laws are coupled through their order statistics,
    which is optimal on the line.  Samples of different sizes are brought to
    the larger size by linear quantile interpolation.  Weighted (lattice)
    laws use the exact quantile-function integral.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if a.size == 0 or b.size == 0:
        raise ValueError("empty sample")
    if a.weights is not None or b.weights is not None:
        return _quantile_integral(a, b, p) ** (1.0 / p)
    sa, sb = a.sample, b.sample
    if sa.size != sb.size:
        n = max(sa.size, sb.size)
        sa = sa if sa.size == n else _resample(sa, n)
        sb = sb if sb.size == n else _resample(sb, n)
    return float(np.mean(np.abs(sa - sb) ** p) ** (1.0 / p))


def curve_distance(a, b, p: float = 2.0, mode: str = "mean_only", indices=None) -> float:
    """Sup over time of the mean gap (``mean_only``) or of ``W_p``."""
    if len(a) != len(b):
        raise ValueError(f"grid mismatch: {len(a)} vs {len(b)} points")
    idx = range(len(a)) if indices is None else indices
    if mode == "mean_only":
        return max((abs(a[i].mean - b[i].mean) for i in idx), default=0.0)
    if mode == "wasserstein":
        return max((wasserstein_p(a[i], b[i], p) for i in idx), default=0.0)
    raise ValueError(f"unknown mode {mode!r}")
