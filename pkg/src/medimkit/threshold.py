"""Histograms, global thresholds (iterative optimal, Otsu) and local mean binarization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import AlgorithmError, ConfigError
from .imgcore import as_float, as_mask


@dataclass(frozen=True)
class Histogram:
    bins: np.ndarray  # int64 counts for levels 0..L-1

    @property
    def total(self) -> int:
        return int(self.bins.sum())

    @property
    def L(self) -> int:
        return int(self.bins.size)

    @classmethod
    def from_counts(cls, counts):
        b = np.asarray(counts)
        if b.ndim != 1 or b.size == 0:
            raise ConfigError("histogram counts must be a non-empty 1D array")
        if np.any(b < 0):
            raise ConfigError("negative histogram count")
        if not np.all(b == np.floor(b)):
            raise ConfigError("histogram counts must be integers")
        return cls(b.astype(np.int64))


@dataclass(frozen=True)
class ThresholdResult:
    theta: float
    mu1: float
    mu2: float
    iterations: int


def to_levels(img) -> np.ndarray:
    a = np.rint(as_float(img))
    if a.min() < 0:
        raise ConfigError("gray levels must be non-negative")
    return a.astype(np.int64)


def histogram(img, mask=None, levels=None) -> Histogram:
    a = to_levels(img)
    if mask is not None:
        m = as_mask(mask)
        if m.shape != a.shape:
            raise ConfigError("mask and image differ in shape")
        a = a[m]
        if a.size == 0:
            raise ConfigError("histogram over an empty mask")
    L = levels if levels is not None else max(256, int(a.max()) + 1)
    if a.max() >= L:
        raise ConfigError("image value exceeds histogram level count")
    return Histogram(np.bincount(a.ravel(), minlength=L).astype(np.int64))


def _populated(hist):
    h = hist.bins
    lv = np.flatnonzero(h)
    if lv.size < 2:
        raise AlgorithmError("histogram has fewer than two populated levels")
    w = h[lv]
    return lv.astype(np.int64), w.astype(np.int64)


def iots(hist: Histogram, eps_tol=0.5, max_iter=100) -> ThresholdResult:
    """Iterative optimal threshold: theta <- midpoint of the two class means.

    Class 1 holds levels <= theta, class 2 levels > theta. The returned theta
    satisfies |theta - (mu1 + mu2)/2| <= eps_tol unless max_iter ran out.
    """
    lv, w = _populated(hist)
    cn = np.cumsum(w)
    cs = np.cumsum(w * lv)
    N, S = int(cn[-1]), int(cs[-1])

    def means(theta):
        # clamp so both classes stay populated
        k = int(np.searchsorted(lv, theta, side="right")) - 1
        k = min(max(k, 0), lv.size - 2)
        n1, s1 = int(cn[k]), int(cs[k])
        return s1 / n1, (S - s1) / (N - n1)

    theta = S / N
    it = 0
    while True:
        mu1, mu2 = means(theta)
        nxt = (mu1 + mu2) / 2.0
        if abs(nxt - theta) <= eps_tol or it >= max_iter:
            return ThresholdResult(float(theta), mu1, mu2, it)
        theta = nxt
        it += 1


def otsu(hist: Histogram) -> ThresholdResult:
    """Level maximizing between-class variance; ties go to the smallest level."""
    lv, w = _populated(hist)
    h = hist.bins
    L = h.size
    levels = np.arange(L, dtype=np.int64)
    n0 = np.cumsum(h)[:-1]
    s0 = np.cumsum(h * levels)[:-1]
    N, S = int(h.sum()), int((h * levels).sum())
    n1 = N - n0
    valid = (n0 > 0) & (n1 > 0)
    num = (S * n0.astype(float) - N * s0.astype(float)) ** 2
    den = np.where(valid, n0.astype(float) * n1, 1.0)
    var = np.where(valid, num / den, -1.0)
    best = var.max()
    # exact comparison among near-maximal candidates
    cand = np.flatnonzero(var >= best * (1 - 1e-9))
    bt, bnum, bden = None, 0, 1
    for t in cand.tolist():
        a, b = int(n0[t]), int(s0[t])
        nu = (S * a - N * b) ** 2
        de = a * (N - a)
        if bt is None or nu * bden > bnum * de:
            bt, bnum, bden = t, nu, de
    a, b = int(n0[bt]), int(s0[bt])
    return ThresholdResult(float(bt), b / a, (S - b) / (N - a), 0)


def binarize(img, theta, polarity="above"):
    a = as_float(img)
    if polarity == "above":
        return a > theta
    if polarity == "below":
        return a <= theta
    raise ConfigError(f"unknown polarity {polarity!r}")


def local_window(shape):
    M, N = shape
    return max(3, 2 * (M // 16) + 1), max(3, 2 * (N // 16) + 1)


def box_sum(img, window):
    """Window sums with replicate padding; exact for integer-valued images."""
    a = np.asarray(img)
    wy, wx = window
    hy, hx = wy // 2, wx // 2
    integral = np.issubdtype(a.dtype, np.integer) or bool(np.all(a == np.rint(a)))
    if not integral:
        # direct separable sums: no cancellation error from a running integral
        s = ndi.correlate1d(a.astype(np.float64), np.ones(wy), axis=0, mode="nearest")
        return ndi.correlate1d(s, np.ones(wx), axis=1, mode="nearest")
    p = np.pad(a.astype(np.int64 if integral else np.float64), ((hy, hy), (hx, hx)), mode="edge")
    c = np.zeros((p.shape[0] + 1, p.shape[1] + 1), p.dtype)
    c[1:, 1:] = p.cumsum(0).cumsum(1)
    H, W = a.shape
    return c[wy:wy + H, wx:wx + W] - c[:H, wx:wx + W] - c[wy:wy + H, :W] + c[:H, :W]


def local_adaptive_threshold(img, polarity="above", window=None):
    """Pixel is foreground iff strictly above (below) the mean of its window."""
    a = np.asarray(img)
    as_float(a)
    win = local_window(a.shape) if window is None else tuple(window)
    if win[0] % 2 == 0 or win[1] % 2 == 0:
        raise ConfigError("window sides must be odd")
    area = win[0] * win[1]
    s = box_sum(a, win)
    if np.issubdtype(s.dtype, np.integer):
        lhs = a.astype(np.int64) * area
    else:
        lhs = a.astype(np.float64) * area
    if polarity == "above":
        return lhs > s
    if polarity == "below":
        return lhs < s
    raise ConfigError(f"unknown polarity {polarity!r}")


def local_mean(img, window):
    return ndi.uniform_filter(as_float(img), size=window, mode="nearest")
