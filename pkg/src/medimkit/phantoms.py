"""Seeded synthetic images with known ground truth."""
from __future__ import annotations

import numpy as np
from scipy import ndimage as ndi

from .errors import ConfigError


def _disk_mask(shape, cy, cx, r):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def _clip8(a):
    return np.clip(np.rint(a), 0, 255).astype(np.uint8)


def bimodal_blob(seed=0, shape=(96, 96), mu=(70.0, 150.0), sigma=(14.0, 22.0), radius=None,
                 dark_blob=False):
    """Blob on a background, each class Gaussian. Returns (image, blob mask, roi).

    The roi is the full frame; with ``dark_blob`` the blob is the darker class.
    """
    rng = np.random.default_rng(seed)
    H, W = shape
    r = radius if radius is not None else rng.uniform(0.18, 0.3) * min(H, W)
    cy = rng.uniform(0.4, 0.6) * H
    cx = rng.uniform(0.4, 0.6) * W
    yy, xx = np.mgrid[:H, :W]
    # slightly irregular outline
    ang = np.arctan2(yy - cy, xx - cx)
    wob = 1 + 0.08 * np.sin(3 * ang + rng.uniform(0, 2 * np.pi))
    truth = np.hypot(yy - cy, xx - cx) <= r * wob
    lo, hi = (1, 0) if dark_blob else (0, 1)
    img = np.where(truth, rng.normal(mu[hi], sigma[hi], shape), rng.normal(mu[lo], sigma[lo], shape))
    return _clip8(img), truth, np.ones(shape, bool)


def fibroid(seed=0, shape=(128, 128), n_fibroids=2, uterus=200.0, fib=110.0, noise=6.0):
    """Bright uterus disk with darker inner disks. Returns (image, truth, uterus roi)."""
    rng = np.random.default_rng(seed)
    H, W = shape
    cy, cx = H / 2, W / 2
    R = 0.42 * min(H, W)
    roi = _disk_mask(shape, cy, cx, R)
    truth = np.zeros(shape, bool)
    placed = []
    tries = 0
    while len(placed) < n_fibroids:
        tries += 1
        if tries > 1000:
            raise ConfigError("could not place fibroids")
        r = rng.uniform(0.1, 0.16) * min(H, W)
        a = rng.uniform(0, 2 * np.pi)
        d = rng.uniform(0, R - r - 6)
        y, x = cy + d * np.sin(a), cx + d * np.cos(a)
        if any(np.hypot(y - py, x - px) < r + pr + 4 for py, px, pr in placed):
            continue
        placed.append((y, x, r))
        truth |= _disk_mask(shape, y, x, r)
    img = np.where(roi, uterus, 0.0)
    img = np.where(truth, fib, img)
    img = img + np.where(roi, rng.normal(0, noise, shape), 0.0)
    return _clip8(img), truth, roi


def gtv(seed=0, shape=(64, 64), core=None, bg=60.0, rim=230.0, core_val=140.0, noise=4.0, radius=None):
    """Pseudo-spherical bright lesion, optionally with a darker core.

    Returns (image, truth, core mask, bbox) with bbox = (x0, y0, x1, y1), ends exclusive.
    """
    rng = np.random.default_rng(seed)
    H, W = shape
    if core is None:
        core = bool(rng.integers(0, 2))
    r = radius if radius is not None else rng.uniform(0.2, 0.28) * min(H, W)
    cy = H / 2 + rng.uniform(-2, 2)
    cx = W / 2 + rng.uniform(-2, 2)
    yy, xx = np.mgrid[:H, :W]
    ang = np.arctan2(yy - cy, xx - cx)
    wob = 1 + 0.06 * np.sin(2 * ang + rng.uniform(0, 2 * np.pi))
    dist = np.hypot(yy - cy, xx - cx)
    truth = dist <= r * wob
    cmask = truth & (dist <= 0.45 * r) if core else np.zeros(shape, bool)
    img = np.full(shape, bg)
    img[truth] = rim
    img[cmask] = core_val
    img = ndi.gaussian_filter(img, 0.7) + rng.normal(0, noise, shape)
    m = int(np.ceil(r * 1.06)) + 6
    bbox = (int(cx) - m, int(cy) - m, int(cx) + m + 1, int(cy) + m + 1)
    return _clip8(img), truth, cmask, bbox


def nuclei(seed=0, shape=(512, 512), n=50, rmin=5, rmax=15, gap=3, overlap_pairs=0,
           max_overlap=0.3):
    """Fluorescence-like nuclei. Returns (image, truth labels).

    ``n`` counts connected blobs: with ``overlap_pairs`` the first pairs of nuclei
    overlap (centre distance r1 + r2 - overlap*min(r1, r2), overlap <= max_overlap),
    so the image holds n + overlap_pairs nuclei in total.
    """
    rng = np.random.default_rng(seed)
    H, W = shape
    disks = []  # (cy, cx, r, group)
    groups = []
    tries = 0

    def free(cy, cx, r, skip=()):
        for i, (py, px, pr, _) in enumerate(disks):
            if i in skip:
                continue
            if np.hypot(cy - py, cx - px) < r + pr + gap:
                return False
        return True

    g = 0
    while len(groups) < overlap_pairs:
        tries += 1
        if tries > 20000:
            raise ConfigError("could not place nuclei; lower n or radius")
        r1, r2 = rng.uniform(rmin + 3, rmax), rng.uniform(rmin + 3, rmax)
        ov = rng.uniform(0.1, max_overlap)
        d = r1 + r2 - ov * min(r1, r2)
        a = rng.uniform(0, np.pi)
        cy = rng.uniform(rmax + 2, H - rmax - 2 - d)
        cx = rng.uniform(rmax + 2 + d, W - rmax - 2 - d)
        y2, x2 = cy + d * np.sin(a), cx + d * np.cos(a)
        if not (rmax < y2 < H - rmax and rmax < x2 < W - rmax):
            continue
        if free(cy, cx, r1) and free(y2, x2, r2):
            disks.append((cy, cx, r1, g))
            disks.append((y2, x2, r2, g))
            groups.append(g)
            g += 1
    while len(disks) < n + overlap_pairs:
        tries += 1
        if tries > 200000:
            raise ConfigError("could not place nuclei; lower n or radius")
        r = rng.uniform(rmin, rmax)
        cy = rng.uniform(r + 2, H - r - 2)
        cx = rng.uniform(r + 2, W - r - 2)
        if free(cy, cx, r):
            disks.append((cy, cx, r, g))
            g += 1
    yy, xx = np.mgrid[:H, :W]
    labels = np.zeros(shape, np.int32)
    img = np.zeros(shape)
    for k, (cy, cx, r, _) in enumerate(disks, start=1):
        y0, y1 = int(max(cy - r - 2, 0)), int(min(cy + r + 3, H))
        x0, x1 = int(max(cx - r - 2, 0)), int(min(cx + r + 3, W))
        d2 = (yy[y0:y1, x0:x1] - cy) ** 2 + (xx[y0:y1, x0:x1] - cx) ** 2
        inside = d2 <= r * r
        sub = labels[y0:y1, x0:x1]
        # in an overlap the nearer centre owns the pixel
        take = inside & ((sub == 0) | (d2 / (r * r) < 0.5))
        sub[take] = k
        bright = rng.uniform(150, 220)
        prof = bright * (1 - 0.35 * d2 / (r * r))
        img[y0:y1, x0:x1] = np.maximum(img[y0:y1, x0:x1], np.where(inside, prof, 0))
    img = ndi.gaussian_filter(img, 1.0) + 20 + rng.normal(0, 4, shape)
    return _clip8(img), labels


def plate(seed=0, n_wells=6, r_w=50, spacing=None, margin=30, angle_deg=0.0, shift=(0.0, 0.0),
          colonies=True, extra=0):
    """RGB multiwell plate: light wells with violet colonies on a dark plate body.

    Returns (rgb image, centres (x, y) row-major, colony mask). ``extra`` adds weak
    ring artifacts that a detector should rank below real wells.
    """
    layouts = {6: (2, 3), 12: (3, 4), 24: (4, 6)}
    if n_wells not in layouts:
        raise ConfigError("n_wells must be 6, 12 or 24")
    rng = np.random.default_rng(seed)
    rows, cols = layouts[n_wells]
    sp = spacing if spacing is not None else int(2.25 * r_w)
    W = 2 * margin + (cols - 1) * sp + 2 * r_w
    H = 2 * margin + (rows - 1) * sp + 2 * r_w
    cxp = W / 2 + shift[0]
    cyp = H / 2 + shift[1]
    th = np.deg2rad(angle_deg)
    centres = []
    for i in range(rows):
        for j in range(cols):
            ox = (j - (cols - 1) / 2) * sp
            oy = (i - (rows - 1) / 2) * sp
            x = cxp + ox * np.cos(th) - oy * np.sin(th)
            y = cyp + ox * np.sin(th) + oy * np.cos(th)
            centres.append((x, y))
    pad = int(abs(shift[0]) + abs(shift[1]) + 0.1 * max(H, W)) + 10
    H2, W2 = H + 2 * pad, W + 2 * pad
    centres = [(x + pad, y + pad) for x, y in centres]
    yy, xx = np.mgrid[:H2, :W2]
    body = np.array([70.0, 70.0, 80.0])
    well = np.array([235.0, 232.0, 238.0])
    violet = np.array([120.0, 60.0, 150.0])
    img = np.broadcast_to(body, (H2, W2, 3)).copy()
    colony = np.zeros((H2, W2), bool)
    for x, y in centres:
        inside = (xx - x) ** 2 + (yy - y) ** 2 <= r_w ** 2
        img[inside] = well
        if colonies:
            for _ in range(int(rng.integers(2, 6))):
                rr = rng.uniform(3, 8)
                a = rng.uniform(0, 2 * np.pi)
                d = rng.uniform(0, r_w - rr - 4)
                c = (xx - x - d * np.cos(a)) ** 2 + (yy - y - d * np.sin(a)) ** 2 <= rr * rr
                colony |= c
    img[colony] = violet
    for _ in range(extra):
        # faint partial ring somewhere on the plate body
        x = rng.uniform(r_w, W2 - r_w)
        y = rng.uniform(r_w, H2 - r_w)
        ring = np.abs(np.hypot(xx - x, yy - y) - r_w) < 1.5
        ring &= np.cos(np.arctan2(yy - y, xx - x) - rng.uniform(0, 2 * np.pi)) > 0.3
        img[ring] = img[ring] * 0.6 + well * 0.4
    img = ndi.gaussian_filter(img, (1.0, 1.0, 0)) + rng.normal(0, 3, img.shape)
    return _clip8(img), centres, colony


def half_covered_well(r_w=40, margin=8, stain=(120, 60, 150)):
    """Single well whose left half is stained. Returns (rgb, centre (x, y), analytic 50%)."""
    S = 2 * (r_w + margin) + 1
    c = S // 2
    yy, xx = np.mgrid[:S, :S]
    img = np.zeros((S, S, 3)) + 70
    inside = (xx - c) ** 2 + (yy - c) ** 2 <= r_w ** 2
    img[inside] = 235
    img[inside & (xx < c)] = stain
    return _clip8(img), (float(c), float(c)), 50.0


def smooth_texture(seed=0, shape=(96, 96)):
    """Smooth random texture in [0, 255] used as a registration target."""
    rng = np.random.default_rng(seed)
    H, W = shape
    a = ndi.gaussian_filter(rng.normal(size=shape), 5.0)
    a += 0.6 * ndi.gaussian_filter(rng.normal(size=shape), 2.0) * a.std() / 0.2
    yy, xx = np.mgrid[:H, :W]
    for _ in range(4):
        cy, cx = rng.uniform(0.2, 0.8) * H, rng.uniform(0.2, 0.8) * W
        r = rng.uniform(0.08, 0.18) * min(H, W)
        a += 1.5 * a.std() * (np.hypot(yy - cy, xx - cx) < r)
    a = ndi.gaussian_filter(a, 1.0)
    a = (a - a.min()) / (a.max() - a.min())
    # fade toward the border so content is not cut when shifting
    win = np.outer(np.hanning(H) ** 0.3, np.hanning(W) ** 0.3)
    return a * win * 255.0


def prostate(seed=0, shape=(96, 96), noise=6.0):
    """Two co-registered channels; only their joint feature separates the gland.

    Returns (t2, t1, gland truth, roi). The gland is mid-gray on t2 like the fat
    ring around it and mid-gray on t1 like the muscle ring, so neither channel alone
    separates it.
    """
    rng = np.random.default_rng(seed)
    H, W = shape
    cy, cx = H / 2 + rng.uniform(-3, 3), W / 2 + rng.uniform(-3, 3)
    yy, xx = np.mgrid[:H, :W]
    d = np.hypot((yy - cy) / 1.1, xx - cx)
    R = 0.22 * min(H, W)
    gland = d <= R
    ring1 = (d > R) & (yy < cy)  # upper surround
    t2 = np.where(gland, 150.0, np.where(ring1, 150.0, 60.0))
    t1 = np.where(gland, 150.0, np.where(ring1, 60.0, 150.0))
    t2 = ndi.gaussian_filter(t2, 0.8) + rng.normal(0, noise, shape)
    t1 = ndi.gaussian_filter(t1, 0.8) + rng.normal(0, noise, shape)
    return _clip8(t2), _clip8(t1), gland, np.ones(shape, bool)
