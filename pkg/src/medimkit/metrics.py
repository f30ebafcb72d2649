"""Segmentation (volume, overlap, distance) and enhancement quality metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi
from scipy.spatial import cKDTree

from .errors import ConfigError
from .imgcore import as_float, as_mask, canny_edges


@dataclass(frozen=True)
class OverlapMetrics:
    dsc: float
    ji: float
    sen: float
    spc: float
    fpr: float
    fnr: float
    undefined: tuple = field(default=())


@dataclass(frozen=True)
class DistanceMetrics:
    avg_d: float
    max_d: float
    hd: float
    mhd: float


@dataclass(frozen=True)
class EnhancementMetrics:
    psnr: float  # math.inf when the images coincide
    num_edges: int
    ambe: float
    ssim: float


def _pair(S, G):
    s, g = as_mask(S), as_mask(G)
    if s.shape != g.shape:
        raise ConfigError("masks differ in shape")
    return s, g


def _pct(num, den):
    return 100.0 * num / den if den else math.nan


def overlap_metrics(S, G) -> OverlapMetrics:
    """Percentages. Undefined ratios are NaN and listed in ``undefined``."""
    s, g = _pair(S, G)
    tp = int(np.count_nonzero(s & g))
    fp = int(np.count_nonzero(s & ~g))
    fn = int(np.count_nonzero(~s & g))
    tn = int(s.size - tp - fp - fn)
    ns, ng = tp + fp, tp + fn
    vals = dict(
        dsc=_pct(2 * tp, ns + ng),
        ji=_pct(tp, tp + fp + fn),
        sen=_pct(tp, tp + fn),
        spc=100.0 * (1.0 - fp / ns) if ns else math.nan,
        fpr=_pct(fp, fp + tn),
        fnr=_pct(fn, fn + tp),
    )
    und = tuple(k for k, v in vals.items() if math.isnan(v))
    return OverlapMetrics(undefined=und, **vals)


def volume_metrics(S, G):
    """(AVD, VS) on pixel counts."""
    s, g = np.asarray(S, bool), np.asarray(G, bool)
    vs_, vg = int(s.sum()), int(g.sum())
    if vg == 0:
        raise ConfigError("volume metrics need a non-empty gold standard")
    avd = abs(vs_ - vg) / vg
    vs = 1.0 - abs(vs_ - vg) / (vs_ + vg)
    return avd, vs


def boundary(mask):
    """Foreground pixels with at least one background 4-neighbour (outside counts as background)."""
    m = as_mask(mask)
    inner = ndi.binary_erosion(m, ndi.generate_binary_structure(2, 1), border_value=0)
    return m & ~inner


def _mhd(s, g):
    ps = np.argwhere(s).astype(float)
    pg = np.argwhere(g).astype(float)
    d = ps.mean(0) - pg.mean(0)
    if not np.any(d):
        return 0.0
    c1 = np.cov(ps.T, bias=True) if len(ps) > 1 else np.zeros((2, 2))
    c2 = np.cov(pg.T, bias=True) if len(pg) > 1 else np.zeros((2, 2))
    cov = (len(ps) * c1 + len(pg) * c2) / (len(ps) + len(pg))
    if abs(np.linalg.det(cov)) < 1e-12:
        return math.nan
    return float(np.sqrt(d @ np.linalg.solve(cov, d)))


def distance_metrics(S, G) -> DistanceMetrics:
    s, g = _pair(S, G)
    if not s.any() or not g.any():
        raise ConfigError("distance metrics need two non-empty masks")
    bs = np.argwhere(boundary(s)).astype(float)
    bg = np.argwhere(boundary(g)).astype(float)
    ds, _ = cKDTree(bg).query(bs)
    dg, _ = cKDTree(bs).query(bg)
    return DistanceMetrics(
        avg_d=float(ds.mean()),
        max_d=float(ds.max()),
        hd=float(max(ds.max(), dg.max())),
        mhd=_mhd(s, g),
    )


def remap(enh, orig):
    """Linearly map the enhanced range onto the original range."""
    e, o = as_float(enh), as_float(orig)
    lo, hi = e.min(), e.max()
    if hi == lo:
        return np.full_like(e, o.min())
    if lo == o.min() and hi == o.max():
        return e.copy()
    return (e - lo) * (o.max() - o.min()) / (hi - lo) + o.min()


def psnr(orig, enh):
    o, e = as_float(orig), as_float(enh)
    mse = float(np.mean((o - e) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(o.max() ** 2 / mse)


def ambe(orig, enh):
    o, e = as_float(orig), as_float(enh)
    L = o.max() - o.min()
    if L == 0:
        L = 1.0
    return abs(float(o.mean()) - float(e.mean())) / L


def _window_mean(a, w):
    # mean over every w x w window fully inside the image
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    s = c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]
    return s / (w * w)


def ssim_terms(x, y, L, window=8):
    """Per-window luminance term and contrast-structure product."""
    w = min(window, x.shape[0], x.shape[1])
    k1 = (0.01 * L) ** 2
    k2 = (0.03 * L) ** 2
    mx, my = _window_mean(x, w), _window_mean(y, w)
    # second moments about a common offset keep precision
    ref = 0.5 * (x.mean() + y.mean())
    xc, yc = x - ref, y - ref
    mxc, myc = mx - ref, my - ref
    vx = _window_mean(xc * xc, w) - mxc * mxc
    vy = _window_mean(yc * yc, w) - myc * myc
    cxy = _window_mean(xc * yc, w) - mxc * myc
    lum = (2 * mx * my + k1) / (mx * mx + my * my + k1)
    cs = (2 * cxy + k2) / (vx + vy + k2)
    return lum, cs


def ssim(x, y, L=None, window=8):
    """Mean SSIM over sliding windows; kappa3 = kappa2/2 folds contrast and structure."""
    a, b = as_float(x), as_float(y)
    if a.shape != b.shape:
        raise ConfigError("images differ in shape")
    if L is None:
        L = a.max() - a.min()
    if L == 0:
        L = 1.0
    lum, cs = ssim_terms(a, b, L, window)
    return float(np.mean(lum * cs))


def enhancement_metrics(orig, enh, do_remap=True, canny_sigma=1.0, canny_lo=0.1, canny_hi=0.2):
    o = as_float(orig)
    e = as_float(enh)
    if o.shape != e.shape:
        raise ConfigError("images differ in shape")
    if do_remap:
        e = remap(e, o)
    L = o.max() - o.min()
    return EnhancementMetrics(
        psnr=psnr(o, e),
        num_edges=int(canny_edges(e, canny_sigma, canny_lo, canny_hi).sum()),
        ambe=ambe(o, e),
        ssim=ssim(o, e, L if L > 0 else 1.0),
    )


def pearson(x, y):
    a = np.asarray(x, float)
    b = np.asarray(y, float)
    if a.shape != b.shape or a.ndim != 1:
        raise ConfigError("pearson needs two equal-length 1D series")
    if a.size < 3:
        raise ConfigError("pearson needs at least 3 samples")
    da, db = a - a.mean(), b - b.mean()
    va, vb = float(da @ da), float(db @ db)
    if va == 0 or vb == 0:
        raise ConfigError("pearson undefined for a zero-variance series")
    # one square root keeps r(x, x) = 1 exact
    r = float(da @ db) / math.sqrt(va * vb)
    return max(-1.0, min(1.0, r))
