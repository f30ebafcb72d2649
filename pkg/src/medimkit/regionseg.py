"""Quadtree split-and-merge seed detection and multi-seeded region growing."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .imgcore import (as_float, as_mask, connected_components, contrast_stretch, diamond,
                      disk, morphology, square)
from .metrics import boundary
from .threshold import histogram, otsu

_NB8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True)
class SplitMergeConfig:
    mean_lo: float = 0.0
    mean_hi: float = 0.58
    rho_min: int = 4  # side of the smallest quad
    open_radius: int = 1  # diamond opening in seed cleanup
    edge_dilate: int = 1  # square half-width dilating the roi edge
    touch_ratio: float = 0.25  # max share of a component lying on the dilated edge
    erode_radius: int = 1
    seed_step: int = 5
    seed_trim: bool = True  # drop seed pixels above the Otsu level before growing

    def __post_init__(self):
        if not 0 <= self.mean_lo < self.mean_hi <= 1:
            raise ConfigError("need 0 <= mean_lo < mean_hi <= 1")
        if self.rho_min < 1:
            raise ConfigError("rho_min must be >= 1")
        if not 0 <= self.touch_ratio <= 1:
            raise ConfigError("touch_ratio must be in [0, 1]")


def split_and_merge(img, cfg: SplitMergeConfig = SplitMergeConfig(), roi=None):
    """Union of quads whose mean (over roi pixels) lies strictly inside the band.

    A quad failing the predicate is split into four until its side reaches
    ``rho_min``. Accepted quads touching each other form the merged regions.
    """
    a = as_float(img)
    r = np.ones(a.shape, bool) if roi is None else as_mask(roi)
    if r.shape != a.shape:
        raise ConfigError("roi and image differ in shape")
    H, W = a.shape
    S = 1
    while S < max(H, W):
        S *= 2
    val = np.zeros((S, S))
    cnt = np.zeros((S, S))
    val[:H, :W] = np.where(r, a, 0.0)
    cnt[:H, :W] = r
    iv = np.zeros((S + 1, S + 1))
    ic = np.zeros((S + 1, S + 1))
    iv[1:, 1:] = val.cumsum(0).cumsum(1)
    ic[1:, 1:] = cnt.cumsum(0).cumsum(1)

    def box(t, y, x, s):
        return t[y + s, x + s] - t[y, x + s] - t[y + s, x] + t[y, x]

    acc = np.zeros((S, S), bool)
    stack = [(0, 0, S)]
    while stack:
        y, x, s = stack.pop()
        n = box(ic, y, x, s)
        if n == 0:
            continue
        mu = box(iv, y, x, s) / n
        if cfg.mean_lo < mu < cfg.mean_hi:
            acc[y:y + s, x:x + s] = True
        elif s > cfg.rho_min:
            h = s // 2
            stack.extend([(y, x, h), (y, x + h, h), (y + h, x, h), (y + h, x + h, h)])
    return acc[:H, :W] & r


def seed_cleanup(sm_mask, roi, cfg: SplitMergeConfig = SplitMergeConfig()):
    """Diamond opening, then drop components lying mostly on the roi edge."""
    m = as_mask(sm_mask)
    r = as_mask(roi)
    if m.shape != r.shape:
        raise ConfigError("mask and roi differ in shape")
    m = morphology(m, "open", diamond(cfg.open_radius)) if cfg.open_radius > 0 else m.copy()
    edge = morphology(boundary(r), "dilate", square(cfg.edge_dilate))
    lab, n = connected_components(m, 8)
    if n == 0:
        return m
    area = np.bincount(lab.ravel(), minlength=n + 1)
    touch = np.bincount(lab[edge], minlength=n + 1)
    keep = touch <= cfg.touch_ratio * area
    keep[0] = False
    return keep[lab]


def _grow(f, region, starts, theta_opt, domain, trace):
    """FIFO growth of one region; rejected pixels are not re-tested."""
    H, W = f.shape
    inr = region.copy()
    seen = region.copy()
    total = float(f[region].sum())
    n = int(region.sum())
    q = deque()
    for y, x in starts:
        for dy, dx in _NB8:
            yy, xx = y + dy, x + dx
            if 0 <= yy < H and 0 <= xx < W and not seen[yy, xx] and domain[yy, xx]:
                seen[yy, xx] = True
                q.append((yy, xx))
    while q:
        y, x = q.popleft()
        mu = total / n
        theta = theta_opt - mu
        v = f[y, x]
        if abs(v - mu) < theta:
            if trace is not None:
                trace.append((y, x, v, mu, theta))
            inr[y, x] = True
            total += v
            n += 1
            for dy, dx in _NB8:
                yy, xx = y + dy, x + dx
                if 0 <= yy < H and 0 <= xx < W and not seen[yy, xx] and domain[yy, xx]:
                    seen[yy, xx] = True
                    q.append((yy, xx))
    return inr


def region_growing(img, seeds, theta_opt, cfg: SplitMergeConfig = SplitMergeConfig(),
                   domain=None, mode="incremental", trace=None):
    """Grow every seed region under |f - mu_R| < theta_opt - mu_R.

    ``mode='incremental'`` starts each region from the whole (eroded) seed region,
    growing from one edge pixel in ``seed_step``. ``mode='classic'`` starts from the
    single seed pixel nearest to the region centroid. ``trace`` (a list) collects
    (row, col, value, mean, threshold) for every accepted pixel.
    """
    f = as_float(img)
    s = as_mask(seeds)
    if not s.any():
        raise ConfigError("region growing needs a non-empty seed mask")
    dom = np.ones(f.shape, bool) if domain is None else as_mask(domain)
    if cfg.erode_radius > 0:
        s = morphology(s, "erode", disk(cfg.erode_radius))
    out = np.zeros(f.shape, bool)
    lab, n = connected_components(s, 8)
    for k in range(1, n + 1):
        reg = lab == k
        if mode == "incremental":
            ys, xs = np.nonzero(boundary(reg))
            starts = list(zip(ys[::cfg.seed_step].tolist(), xs[::cfg.seed_step].tolist()))
            start = reg
        elif mode == "classic":
            ys, xs = np.nonzero(reg)
            i = int(np.argmin((ys - ys.mean()) ** 2 + (xs - xs.mean()) ** 2))
            start = np.zeros_like(reg)
            start[ys[i], xs[i]] = True
            starts = [(int(ys[i]), int(xs[i]))]
        else:
            raise ConfigError(f"unknown growing mode {mode!r}")
        out |= _grow(f, start, starts, theta_opt, dom, trace)
    return out


def normalize_roi(img, roi):
    """Min-max normalization of the roi-masked image (background forced to 0)."""
    a = np.where(as_mask(roi), as_float(img), 0.0)
    return contrast_stretch(a, 0.0, 1.0, rounded=False)


def fibroid_pipeline(img, uterus_roi, cfg: SplitMergeConfig = SplitMergeConfig(), mode="incremental"):
    r = as_mask(uterus_roi)
    if not r.any():
        raise ConfigError("empty uterus roi")
    f = normalize_roi(img, r)
    sm = split_and_merge(f, cfg, r)
    seeds = seed_cleanup(sm, r, cfg)
    # Otsu on the roi histogram of the normalized image, in 8-bit steps
    q = np.rint(f * 255)
    t = otsu(histogram(q, r, 256)).theta
    theta = t / 255.0
    if cfg.seed_trim:
        # quads mixing lesion and tissue can pass the mean test; keep their dark class
        seeds &= q <= t
    if not seeds.any():
        return np.zeros(r.shape, bool)
    grown = region_growing(f, seeds, theta, cfg, domain=r, mode=mode)
    if not grown.any():
        return grown
    return grown | seeds if mode == "incremental" else grown
