"""Clonogenic assay analysis: well detection, colony extraction, ACC and surviving fraction."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage as ndi

from .errors import AlgorithmError, ConfigError
from .imgcore import fill_holes
from .threshold import histogram, local_adaptive_threshold, local_mean, local_window, otsu

log = logging.getLogger(__name__)

# sRGB (D65) -> XYZ
_M = np.array([[0.4124564, 0.3575761, 0.1804375],
               [0.2126729, 0.7151522, 0.0721750],
               [0.0193339, 0.1191920, 0.9503041]])
_WHITE = _M.sum(1)  # XYZ of sRGB white, Y = 1


def _as_rgb(img):
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ConfigError("expected an H x W x 3 color image")
    if a.dtype.kind == "f" and a.max() <= 1.0:
        return a.astype(float)
    return a.astype(float) / 255.0


def rgb_to_luv(img):
    """CIE L*u*v* of an sRGB image under D65. Returns (L, u, v) rasters."""
    c = _as_rgb(img)
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    X, Y, Z = np.moveaxis(lin @ _M.T, -1, 0)
    Xn, Yn, Zn = _WHITE
    yr = Y / Yn
    eps, kappa = 216 / 24389, 24389 / 27
    L = np.where(yr > eps, 116 * np.cbrt(yr) - 16, kappa * yr)
    den = X + 15 * Y + 3 * Z
    with np.errstate(invalid="ignore", divide="ignore"):
        up = np.where(den > 0, 4 * X / den, 0.0)
        vp = np.where(den > 0, 9 * Y / den, 0.0)
    dn = Xn + 15 * Yn + 3 * Zn
    un, vn = 4 * Xn / dn, 9 * Yn / dn
    u = np.where(den > 0, 13 * L * (up - un), 0.0)
    v = np.where(den > 0, 13 * L * (vp - vn), 0.0)
    return L, u, v


def chroma_channel(img, channel="-u"):
    """One chromatic plane with the stain darker than the well background."""
    L, u, v = rgb_to_luv(img)
    planes = {"u": u, "-u": -u, "v": v, "-v": -v, "L": L}
    if channel not in planes:
        raise ConfigError(f"unknown channel {channel!r}")
    return planes[channel]


@dataclass(frozen=True)
class WellCircle:
    x: float
    y: float
    r: float
    strength: float

    @property
    def center(self):
        return (self.x, self.y)


def _luma(img):
    a = np.asarray(img, float)
    return a @ np.array([0.299, 0.587, 0.114]) if a.ndim == 3 else a


def _circle_offsets(r):
    # one offset per boundary pixel of a digital circle
    n = max(8, int(math.ceil(2 * math.pi * r)))
    t = np.arange(n) * 2 * math.pi / n
    off = np.unique(np.stack([np.rint(r * np.sin(t)), np.rint(r * np.cos(t))], 1).astype(int), axis=0)
    return off


def cht_accumulator(img, r_w):
    """Vote a circle of radius r_w around every edge pixel.

    Edge pixels are those whose Sobel magnitude exceeds the Otsu level of the
    magnitude histogram. The accumulator is normalized by the circumference, so
    a clean ring of one-pixel edges scores about 1.
    """
    g = _luma(img)
    mag = np.hypot(ndi.sobel(g, 0), ndi.sobel(g, 1))
    if mag.max() <= 0:
        return np.zeros(g.shape)
    q = np.rint(mag / mag.max() * 255)
    t = otsu(histogram(q, levels=256)).theta
    ey, ex = np.nonzero(q > t)
    H, W = g.shape
    off = _circle_offsets(r_w)
    acc = np.zeros(H * W)
    step = max(1, 2_000_000 // len(off))
    for s in range(0, ey.size, step):
        yy = ey[s:s + step, None] + off[None, :, 0]
        xx = ex[s:s + step, None] + off[None, :, 1]
        ok = (yy >= 0) & (yy < H) & (xx >= 0) & (xx < W)
        acc += np.bincount((yy[ok] * W + xx[ok]), minlength=H * W)
    acc = ndi.gaussian_filter(acc.reshape(H, W), 1.0)
    return acc / len(off)


def _peaks(acc, thr, min_dist):
    cand = (acc == ndi.maximum_filter(acc, size=3)) & (acc >= thr)
    ys, xs = np.nonzero(cand)
    order = np.lexsort((xs, ys, -acc[ys, xs]))
    kept = []
    for i in order:
        y, x = ys[i], xs[i]
        if all((y - ky) ** 2 + (x - kx) ** 2 >= min_dist ** 2 for ky, kx in kept):
            kept.append((y, x))
    return kept


def _subpixel(acc, y, x):
    H, W = acc.shape
    y0, y1, x0, x1 = max(y - 1, 0), min(y + 2, H), max(x - 1, 0), min(x + 2, W)
    w = acc[y0:y1, x0:x1]
    w = w - w.min()
    if w.sum() <= 0:
        return float(x), float(y)
    yy, xx = np.mgrid[y0:y1, x0:x1]
    return float((xx * w).sum() / w.sum()), float((yy * w).sum() / w.sum())


def find_circles(img, r_w, sensitivity=0.98, acc=None):
    """All circle candidates whose normalized peak reaches 1 - sensitivity, strongest first."""
    if not 0 < sensitivity < 1:
        raise ConfigError("sensitivity must be in (0, 1)")
    if acc is None:
        acc = cht_accumulator(img, r_w)
    # the acceptance fraction is relative to the strongest peak
    thr = (1.0 - sensitivity) * 10.0 * acc.max() if acc.max() > 0 else np.inf
    out = []
    for y, x in _peaks(acc, thr, r_w):
        cx, cy = _subpixel(acc, y, x)
        out.append(WellCircle(cx, cy, float(r_w), float(acc[y, x])))
    return out


class WellDetectionError(AlgorithmError):
    def __init__(self, msg, partial):
        super().__init__(msg)
        self.partial = partial


def detect_wells(img, r_w, n_wells, sensitivity=(0.98, 0.99)):
    """Fixed-radius circle Hough detection with sensitivity escalation and skimming.

    Too few circles at the first sensitivity triggers a rerun at the second; too
    many are skimmed to the ``n_wells`` strongest.
    """
    if n_wells < 1 or not r_w > 0:
        raise ConfigError("need n_wells >= 1 and r_w > 0")
    acc = cht_accumulator(img, r_w)
    found = []
    for s in sensitivity:
        found = find_circles(img, r_w, s, acc)
        if len(found) >= n_wells:
            break
        log.info("found %d of %d wells at sensitivity %.2f", len(found), n_wells, s)
    if len(found) < n_wells:
        raise WellDetectionError(f"only {len(found)} of {n_wells} wells detected", found)
    return found[:n_wells]


def order_wells(wells):
    """Row-major order: cluster rows by y with tolerance r/2, then sort by x."""
    if not wells:
        raise ConfigError("no wells to order")
    ws = sorted(wells, key=lambda w: w.y)
    rows = [[ws[0]]]
    for w in ws[1:]:
        ref = np.mean([v.y for v in rows[-1]])
        if abs(w.y - ref) <= w.r / 2:
            rows[-1].append(w)
        else:
            rows.append([w])
    return [w for row in rows for w in sorted(row, key=lambda v: v.x)]


def _well_crop(shape, well):
    H, W = shape[:2]
    r = well.r
    x0, x1 = max(int(math.floor(well.x - r)), 0), min(int(math.ceil(well.x + r)) + 1, W)
    y0, y1 = max(int(math.floor(well.y - r)), 0), min(int(math.ceil(well.y + r)) + 1, H)
    if x0 >= x1 or y0 >= y1:
        raise ConfigError("well lies outside the image")
    yy, xx = np.mgrid[y0:y1, x0:x1]
    inside = (xx - well.x) ** 2 + (yy - well.y) ** 2 <= r * r
    return (slice(y0, y1), slice(x0, x1)), inside


def noise_sigma(a, mask=None):
    """Robust noise level from horizontal neighbour differences (MAD)."""
    d = np.diff(np.asarray(a, float), axis=1)
    if mask is not None:
        m = np.asarray(mask, bool)
        d = d[m[:, 1:] & m[:, :-1]]
    if d.size == 0:
        return 0.0
    return float(np.median(np.abs(d - np.median(d))) / 0.6745 / math.sqrt(2))


def extract_colonies(plate, well: WellCircle, channel="-u", mask_value="white", window=None,
                     noise_k=3.0):
    """Colony mask inside one well (full-image raster).

    The well's bounding square is cropped; pixels outside the circle are set to
    the in-well channel maximum ('white') or minimum ('black'). A pixel is a
    colony pixel when it lies below its local window mean by more than
    ``noise_k`` robust noise deviations; holes are then filled.
    """
    c = np.round(chroma_channel(plate, channel), 6)
    sl, inside = _well_crop(c.shape, well)
    crop = c[sl].copy()
    if mask_value == "white":
        crop[~inside] = crop[inside].max()
    elif mask_value == "black":
        crop[~inside] = crop[inside].min()
    else:
        raise ConfigError("mask_value must be 'white' or 'black'")
    off = noise_k * noise_sigma(crop, inside)
    if window is None:
        window = local_window(crop.shape)
    m = (crop < local_mean(crop, window) - off) & inside if off > 0 else \
        local_adaptive_threshold(crop, "below", window) & inside
    m = fill_holes(m) & inside
    out = np.zeros(c.shape, bool)
    out[sl] = m
    return out


def circle_mask(shape, well: WellCircle):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    return (xx - well.x) ** 2 + (yy - well.y) ** 2 <= well.r ** 2


def acc(mask, well: WellCircle):
    """Percentage of the well disc covered by colony pixels."""
    m = np.asarray(mask, bool)
    disc = circle_mask(m.shape, well)
    n = int(disc.sum())
    if n == 0:
        raise ConfigError("well circle has zero area")
    return 100.0 * int((m & disc).sum()) / n


def surviving_fraction(acc_treated, acc_untreated):
    """SF = 100 ACC_t / ACC_u (vectorized)."""
    u = np.asarray(acc_untreated, float)
    if np.any(u <= 0):
        raise ConfigError("control ACC must be positive")
    out = 100.0 * np.asarray(acc_treated, float) / u
    return float(out) if out.ndim == 0 else out


def plating_efficiency(colonies_control, plated_control):
    if plated_control <= 0:
        raise ConfigError("plated count must be positive")
    return 100.0 * colonies_control / plated_control


def conventional_sf(colonies_treated, plated_treated, colonies_control, plated_control, protocol="printed"):
    """Surviving fraction from colony counts.

    'printed': SF = colonies_t / plated_t x PE. 'standard': SF = 100 (colonies_t / plated_t) / (PE / 100).
    """
    if plated_treated <= 0 or plated_control <= 0 or colonies_control <= 0:
        raise ConfigError("plated counts and control colonies must be positive")
    pe = plating_efficiency(colonies_control, plated_control)
    ratio = colonies_treated / plated_treated
    if protocol == "printed":
        return ratio * pe
    if protocol == "standard":
        return 100.0 * ratio / (pe / 100.0)
    raise ConfigError(f"unknown protocol {protocol!r}")


@dataclass
class AssayResult:
    wells: list
    acc: list
    sf: list


def analyze_plate(img, r_w, n_wells, control=0, channel="-u", sensitivity=(0.98, 0.99)):
    """Detect and order the wells, extract colonies, ACC per well and SF against well ``control``."""
    wells = order_wells(detect_wells(img, r_w, n_wells, sensitivity))
    masks = [extract_colonies(img, w, channel) for w in wells]
    accs = [acc(m, w) for m, w in zip(masks, wells)]
    if not 0 <= control < len(wells):
        raise ConfigError("control well index out of range")
    ref = accs[control]
    sfs = [surviving_fraction(a, ref) if ref > 0 else math.nan for a in accs]
    return AssayResult(wells, accs, sfs), masks


def write_assay_csv(path, res: AssayResult):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["well_index", "acc_percent", "sf_percent"])
        for i, (a, s) in enumerate(zip(res.acc, res.sf), 1):
            w.writerow([i, f"{a:.4f}", f"{s:.4f}"])
