"""Raster containers and the low-level operators every pipeline builds on.

Images are 2D numpy arrays indexed ``[row, col]``; masks are boolean arrays.
Coordinates handed to users are ``(x, y) = (col, row)``.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage as ndi
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _graph_components

from .errors import ConfigError


class LabelMap(NamedTuple):
    labels: np.ndarray  # int32, 0 = background
    count: int


@dataclass(frozen=True)
class StructuringElement:
    kind: str = "disk"  # disk | square | diamond
    radius: int = 1

    def __post_init__(self):
        if self.kind not in ("disk", "square", "diamond"):
            raise ConfigError(f"unknown structuring element kind {self.kind!r}")
        if int(self.radius) != self.radius or self.radius < 0:
            raise ConfigError("structuring element radius must be a non-negative integer")

    def row_halfwidths(self) -> list[tuple[int, int]]:
        """(dy, half-width) pairs; the footprint is a union of centred row runs."""
        r = int(self.radius)
        out = []
        for dy in range(-r, r + 1):
            if self.kind == "square":
                a = r
            elif self.kind == "diamond":
                a = r - abs(dy)
            else:
                a = int(np.floor(np.sqrt(r * r - dy * dy) + 1e-12))
            out.append((dy, a))
        return out

    def footprint(self) -> np.ndarray:
        r = int(self.radius)
        fp = np.zeros((2 * r + 1, 2 * r + 1), bool)
        for dy, a in self.row_halfwidths():
            fp[dy + r, r - a:r + a + 1] = True
        return fp


def disk(r):
    return StructuringElement("disk", r)


def square(h):
    return StructuringElement("square", h)


def diamond(r):
    return StructuringElement("diamond", r)


@dataclass(frozen=True)
class ComponentFeatures:
    area: int
    centroid: tuple[float, float]  # (x, y)
    eccentricity: float
    extent: float


def as_float(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 2:
        raise ConfigError(f"expected a 2D image, got shape {a.shape}")
    if a.size == 0:
        raise ConfigError("empty image")
    return a.astype(np.float64, copy=False)


def as_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ConfigError(f"expected a 2D mask, got shape {m.shape}")
    return m.astype(bool, copy=False)


# ---------------------------------------------------------------- intensity

def contrast_stretch(img, out_lo=0.0, out_hi=255.0, mask=None, rounded=True):
    """Linear min-max rescale to [out_lo, out_hi].

    With ``mask`` the range is measured on the masked pixels only (all pixels are
    still rescaled). A constant input is returned unchanged.
    """
    a = as_float(img)
    if not out_lo < out_hi:
        raise ConfigError("contrast_stretch needs out_lo < out_hi")
    vals = a if mask is None else a[as_mask(mask)]
    if vals.size == 0:
        raise ConfigError("contrast_stretch: empty selection")
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        return a.copy()
    out = (a - lo) * ((out_hi - out_lo) / (hi - lo)) + out_lo
    if rounded:
        out = np.rint(out)
    return out


def _stick_kernels(length, thickness):
    h = (length - 1) // 2
    ring = []
    for dy in range(-h, h + 1):
        for dx in range(-h, h + 1):
            if max(abs(dy), abs(dx)) == h:
                ring.append((dy, dx))
    seen, kernels = set(), []
    for dy, dx in ring:
        if (-dy, -dx) in seen:
            continue
        seen.add((dy, dx))
        k = np.zeros((length, length))
        # perpendicular offsets for thick sticks go along the minor axis
        perp = (0, 1) if abs(dy) == h else (1, 0)
        offs = [j - (thickness - 1) // 2 for j in range(thickness)]
        for s in range(-h, h + 1):
            y = int(np.rint(s * dy / h))
            x = int(np.rint(s * dx / h))
            for o in offs:
                yy, xx = y + o * perp[0], x + o * perp[1]
                if -h <= yy <= h and -h <= xx <= h:
                    k[yy + h, xx + h] = 1.0
        kernels.append(k / k.sum())
    return kernels


def stick_filter(img, length=5, thickness=1):
    """Max over the 2*length-2 oriented stick means in a length x length window."""
    if length < 3 or length % 2 == 0:
        raise ConfigError("stick length must be odd and >= 3")
    if not 1 <= thickness < length:
        raise ConfigError("stick thickness must be in [1, length)")
    a = as_float(img)
    out = None
    for k in _stick_kernels(length, thickness):
        r = ndi.correlate(a, k, mode="nearest")
        out = r if out is None else np.maximum(out, r)
    return out


def bilateral_window(sigma_spatial):
    return int(max(5, 2 * np.ceil(3 * sigma_spatial) + 1))


def bilateral_filter(img, sigma_spatial=1.0, sigma_range=np.inf, window=0):
    """Closeness x similarity weighted mean; ``window=0`` picks max(5, 2*ceil(3*sigma)+1)."""
    if not sigma_spatial > 0 or not sigma_range > 0:
        raise ConfigError("bilateral sigmas must be positive")
    if window == 0:
        window = bilateral_window(sigma_spatial)
    if window < 1 or window % 2 == 0:
        raise ConfigError("bilateral window must be odd")
    a = as_float(img)
    h = window // 2
    pad = np.pad(a, h, mode="edge")
    H, W = a.shape
    num = np.zeros_like(a)
    den = np.zeros_like(a)
    for dy in range(-h, h + 1):
        for dx in range(-h, h + 1):
            nb = pad[h + dy:h + dy + H, h + dx:h + dx + W]
            w = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_spatial ** 2))
            if np.isfinite(sigma_range):
                w = w * np.exp(-((nb - a) ** 2) / (2.0 * sigma_range ** 2))
            num += w * nb
            den += w
    return num / den


# ------------------------------------------------------------ gray morphology

def _gray_rank(a, se, op):
    """Flat gray erosion/dilation; outside the image is ignored."""
    a = as_float(a)
    fill = np.inf if op == "min" else -np.inf
    filt = ndi.minimum_filter1d if op == "min" else ndi.maximum_filter1d
    reduce_ = np.minimum if op == "min" else np.maximum
    H, W = a.shape
    out = np.full_like(a, fill)
    runs = {}
    for dy, hw in se.row_halfwidths():
        if hw not in runs:
            runs[hw] = filt(a, 2 * hw + 1, axis=1, mode="constant", cval=fill)
        f = runs[hw]
        # out[i] = reduce over rows i+dy
        if dy >= 0:
            if dy < H:
                out[:H - dy] = reduce_(out[:H - dy], f[dy:])
        else:
            if -dy < H:
                out[-dy:] = reduce_(out[-dy:], f[:H + dy])
    return out


def gray_erode(img, se):
    return _gray_rank(img, se, "min")


def gray_dilate(img, se):
    return _gray_rank(img, se, "max")


def gray_open(img, se):
    return gray_dilate(gray_erode(img, se), se)


def white_tophat(img, se=StructuringElement("disk", 21)):
    a = as_float(img)
    return np.maximum(a - gray_open(a, se), 0.0)


# ---------------------------------------------------------- binary morphology

def morphology(mask, op, se):
    m = as_mask(mask)
    fp = se.footprint()
    if op == "erode":
        return ndi.binary_erosion(m, fp, border_value=1)
    if op == "dilate":
        return ndi.binary_dilation(m, fp, border_value=0)
    if op == "open":
        return morphology(morphology(m, "erode", se), "dilate", se)
    if op == "close":
        return morphology(morphology(m, "dilate", se), "erode", se)
    raise ConfigError(f"unknown morphology op {op!r}")


def _structure(connectivity):
    if connectivity == 4:
        return ndi.generate_binary_structure(2, 1)
    if connectivity == 8:
        return np.ones((3, 3), bool)
    raise ConfigError("connectivity must be 4 or 8")


def connected_components(mask, connectivity=8) -> LabelMap:
    """Labels 1..count numbered in raster order of each component's first pixel."""
    lab, n = ndi.label(as_mask(mask), structure=_structure(connectivity))
    return LabelMap(lab.astype(np.int32), int(n))


def remove_small(mask, min_area, connectivity=8):
    if min_area < 0:
        raise ConfigError("min_area must be >= 0")
    m = as_mask(mask)
    if min_area == 0:
        return m.copy()
    lab, n = connected_components(m, connectivity)
    if n == 0:
        return m.copy()
    areas = np.bincount(lab.ravel(), minlength=n + 1)
    keep = areas >= min_area
    keep[0] = False
    return keep[lab]


def fill_holes(mask):
    return ndi.binary_fill_holes(as_mask(mask))


def _hull_points(pts):
    # Andrew's monotone chain on integer points; counter-clockwise, no collinear points
    pts = sorted(set(map(tuple, pts)))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def convex_hull(mask):
    """Filled hull of the foreground pixel centres."""
    m = as_mask(mask)
    if not m.any():
        raise ConfigError("convex_hull of an empty mask")
    # only boundary pixels can be hull vertices
    edge = m & ~ndi.binary_erosion(m, border_value=0)
    ys, xs = np.nonzero(edge)
    hull = _hull_points(np.column_stack([xs, ys]).tolist())
    y0, y1, x0, x1 = ys.min(), ys.max(), xs.min(), xs.max()
    yy, xx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    yy = yy.astype(np.int64)
    xx = xx.astype(np.int64)
    out = np.zeros_like(m)
    if len(hull) == 1:
        inside = np.ones_like(yy, bool)
    elif len(hull) == 2:
        (ax, ay), (bx, by) = hull
        cr = (bx - ax) * (yy - ay) - (by - ay) * (xx - ax)
        dot = (xx - ax) * (bx - ax) + (yy - ay) * (by - ay)
        L2 = (bx - ax) ** 2 + (by - ay) ** 2
        inside = (cr == 0) & (dot >= 0) & (dot <= L2)
    else:
        inside = np.ones_like(yy, bool)
        for i in range(len(hull)):
            (ax, ay), (bx, by) = hull[i], hull[(i + 1) % len(hull)]
            inside &= (bx - ax) * (yy - ay) - (by - ay) * (xx - ax) >= 0
    out[y0:y1 + 1, x0:x1 + 1] = inside
    return out | m


# ---------------------------------------------------------- distance transform

_CH_FWD = [(-1, -2, 11), (-1, -1, 7), (-1, 0, 5), (-1, 1, 7), (-1, 2, 11), (-2, -1, 11), (-2, 1, 11)]


def _chamfer_pass(d, offsets):
    H, W = d.shape
    j5 = 5.0 * np.arange(W)
    for i in range(H):
        row = d[i]
        for dy, dx, c in offsets:
            k = i + dy
            if not 0 <= k < H:
                continue
            src = d[k]
            if dx > 0:
                np.minimum(row[:W - dx], src[dx:] + c, out=row[:W - dx])
            elif dx < 0:
                np.minimum(row[-dx:], src[:W + dx] + c, out=row[-dx:])
            else:
                np.minimum(row, src + c, out=row)
        # horizontal sweep: row[j] = min_k<=j row[k] + 5(j-k)
        row[:] = np.minimum.accumulate(row - j5) + j5


def _chamfer5(m):
    big = 5.0 * (m.shape[0] + m.shape[1]) * 3 + 10
    d = np.where(m, big, 0.0)
    _chamfer_pass(d, _CH_FWD)
    # backward pass = forward pass on the point-reflected raster
    r = d[::-1, ::-1].copy()
    _chamfer_pass(r, _CH_FWD)
    return r[::-1, ::-1] / 5.0


def distance_transform(mask, mode="exact"):
    """Distance from each foreground pixel to the nearest background pixel.

    ``mode='chamfer5'`` uses the 5-7-11 chamfer mask (5x5 neighbourhood), scaled so
    that one axial step is 1. A mask without background gives ``inf``.
    """
    m = as_mask(mask)
    if not m.any():
        return np.zeros(m.shape)
    if m.all():
        return np.full(m.shape, np.inf)
    if mode == "exact":
        return ndi.distance_transform_edt(m)
    if mode == "chamfer5":
        return _chamfer5(m)
    raise ConfigError(f"unknown distance mode {mode!r}")


# ---------------------------------------------------------- maxima, watershed

def _equal_value_components(a):
    """8-connected plateaus of exactly equal value."""
    H, W = a.shape
    idx = np.arange(H * W).reshape(H, W)
    rows, cols = [], []
    for sl_a, sl_b in [
        ((slice(None), slice(0, W - 1)), (slice(None), slice(1, W))),
        ((slice(0, H - 1), slice(None)), (slice(1, H), slice(None))),
        ((slice(0, H - 1), slice(0, W - 1)), (slice(1, H), slice(1, W))),
        ((slice(0, H - 1), slice(1, W)), (slice(1, H), slice(0, W - 1))),
    ]:
        eq = a[sl_a] == a[sl_b]
        rows.append(idx[sl_a][eq])
        cols.append(idx[sl_b][eq])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    g = coo_matrix((np.ones(r.size, np.int8), (r, c)), shape=(H * W, H * W))
    _, comp = _graph_components(g, directed=False)
    return comp.reshape(H, W)


def regional_maxima(img, se=StructuringElement("square", 2)):
    """Plateaus with no strictly higher pixel inside the se-neighbourhood of any member."""
    a = as_float(img)
    ok = gray_dilate(a, se) <= a
    comp = _equal_value_components(a)
    bad = np.bincount(comp.ravel(), weights=(~ok).ravel().astype(float))
    return bad[comp] == 0


def watershed(relief, markers, mask=None, connectivity=4) -> LabelMap:
    """Marker-driven priority flood; ties leave the queue first-in first-out.

    Every pixel reachable from a marker (inside ``mask`` if given) gets the label of
    the marker reached along the path of lowest maximum relief.
    """
    rel = as_float(relief)
    lab0 = markers.labels if isinstance(markers, LabelMap) else np.asarray(markers)
    if lab0.shape != rel.shape:
        raise ConfigError("relief and markers differ in shape")
    if not (lab0 > 0).any():
        raise ConfigError("watershed needs at least one marker")
    H, W = rel.shape
    allowed = np.ones(H * W, bool) if mask is None else as_mask(mask).ravel().copy()
    lab = lab0.astype(np.int32).ravel().copy()
    allowed |= lab > 0
    flat = rel.ravel().tolist()
    if connectivity == 4:
        nbr = [(-1, 0), (0, -1), (0, 1), (1, 0)]
    elif connectivity == 8:
        nbr = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    else:
        raise ConfigError("connectivity must be 4 or 8")
    done = lab > 0
    heap = []
    counter = 0
    for p in np.flatnonzero(done).tolist():
        heap.append((flat[p], counter, p))
        counter += 1
    heapq.heapify(heap)
    lab_l = lab.tolist()
    done_l = done.tolist()
    allowed_l = allowed.tolist()
    while heap:
        v, _, p = heapq.heappop(heap)
        y, x = divmod(p, W)
        lp = lab_l[p]
        for dy, dx in nbr:
            yy, xx = y + dy, x + dx
            if 0 <= yy < H and 0 <= xx < W:
                q = yy * W + xx
                if not done_l[q] and allowed_l[q]:
                    done_l[q] = True
                    lab_l[q] = lp
                    fq = flat[q]
                    heapq.heappush(heap, (fq if fq > v else v, counter, q))
                    counter += 1
    out = np.asarray(lab_l, np.int32).reshape(H, W)
    return LabelMap(out, int(out.max()))


def laplacian_relief(img):
    """Absolute 3x3 discrete Laplacian, replicate borders."""
    return np.abs(ndi.laplace(as_float(img), mode="nearest"))


# ---------------------------------------------------------------- edges

def canny_edges(img, sigma=1.0, lo=0.1, hi=0.2):
    """Canny edgels; lo/hi are fractions of the maximum gradient magnitude."""
    if not 0 <= lo < hi <= 1:
        raise ConfigError("canny thresholds need 0 <= lo < hi <= 1")
    a = as_float(img)
    s = ndi.gaussian_filter(a, sigma, mode="nearest") if sigma > 0 else a
    gx = ndi.sobel(s, axis=1, mode="nearest")
    gy = ndi.sobel(s, axis=0, mode="nearest")
    mag = np.hypot(gx, gy)
    top = mag.max()
    H, W = a.shape
    if top <= 0 or H < 3 or W < 3:
        return np.zeros(a.shape, bool)
    mag = mag / top
    # quantised gradient direction: 0 horizontal, 1 diagonal /, 2 vertical, 3 diagonal \
    ang = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    q = np.zeros(a.shape, np.int8)
    q[(ang >= 22.5) & (ang < 67.5)] = 1
    q[(ang >= 67.5) & (ang < 112.5)] = 2
    q[(ang >= 112.5) & (ang < 157.5)] = 3
    pad = np.pad(mag, 1)
    c = pad[1:-1, 1:-1]

    def sh(dy, dx):
        return pad[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]

    keep = np.zeros(a.shape, bool)
    for k, (dy, dx) in enumerate([(0, 1), (1, 1), (1, 0), (1, -1)]):
        fwd, back = sh(dy, dx), sh(-dy, -dx)
        # strict against the backward neighbour so a symmetric ridge keeps one pixel
        keep |= (q == k) & (c > back) & (c >= fwd)
    keep[0, :] = keep[-1, :] = False
    keep[:, 0] = keep[:, -1] = False
    weak = keep & (mag >= lo)
    strong = keep & (mag >= hi)
    lab, n = ndi.label(weak, structure=np.ones((3, 3), bool))
    if n == 0:
        return weak
    hit = np.zeros(n + 1, bool)
    hit[lab[strong]] = True
    hit[0] = False
    return hit[lab]


# ---------------------------------------------------------------- features

def shape_features(labels, label) -> ComponentFeatures:
    lab = labels.labels if isinstance(labels, LabelMap) else np.asarray(labels)
    ys, xs = np.nonzero(lab == label)
    if ys.size == 0:
        raise ConfigError(f"label {label} not present")
    area = int(ys.size)
    cx, cy = float(xs.mean()), float(ys.mean())
    mxx = float(((xs - cx) ** 2).mean())
    myy = float(((ys - cy) ** 2).mean())
    mxy = float(((xs - cx) * (ys - cy)).mean())
    d = np.sqrt(((mxx - myy) / 2) ** 2 + mxy ** 2)
    l1 = (mxx + myy) / 2 + d
    l2 = (mxx + myy) / 2 - d
    if l1 <= 0:
        ecc = 0.0
    else:
        ecc = float(np.sqrt(max(0.0, 1.0 - max(l2, 0.0) / l1)))
        ecc = min(ecc, 0.999)
    bbox = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
    return ComponentFeatures(area, (cx, cy), ecc, area / float(bbox))
