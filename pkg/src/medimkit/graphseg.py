"""Seeded graph segmentation: strength-propagating cellular automaton and random walker."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla
from scipy.sparse.csgraph import connected_components as _graph_components

from .errors import AlgorithmError, ConfigError
from .imgcore import as_float, as_mask, contrast_stretch, convex_hull, disk, morphology

log = logging.getLogger(__name__)

# scan order used to break ties between equally strong attackers
NEIGHBOURS = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)]


@dataclass(frozen=True)
class SeedSet:
    fg: tuple  # ((x, y), ...)
    bg: tuple

    def validate(self, shape):
        H, W = shape
        f, b = set(map(tuple, self.fg)), set(map(tuple, self.bg))
        if not f or not b:
            raise ConfigError("both seed classes must be non-empty")
        if f & b:
            raise ConfigError("a pixel is both foreground and background seed")
        for x, y in f | b:
            if not (0 <= x < W and 0 <= y < H):
                raise ConfigError(f"seed ({x}, {y}) outside the image")

    def label_image(self, shape):
        lab = np.zeros(shape, np.int8)
        for x, y in self.fg:
            lab[y, x] = 1
        for x, y in self.bg:
            lab[y, x] = 2
        return lab


def adaptive_seeds(crop_w, crop_h) -> SeedSet:
    """Centre block of foreground seeds and border background seeds.

    Area > 100: 3x3 block plus corners and border midpoints (9/8); otherwise a
    5-pixel cross and the four corners (5/4). The centre is (w//2, h//2).
    """
    w, h = int(crop_w), int(crop_h)
    if w < 5 or h < 5:
        raise ConfigError("crop must be at least 5 x 5")
    cx, cy = w // 2, h // 2
    corners = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)]
    if w * h > 100:
        fg = [(cx + dx, cy + dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
        bg = corners + [(cx, 0), (cx, h - 1), (0, cy), (w - 1, cy)]
    else:
        fg = [(cx, cy), (cx, cy - 1), (cx - 1, cy), (cx + 1, cy), (cx, cy + 1)]
        bg = corners
    return SeedSet(tuple(fg), tuple(bg))


def _similarity(kind, c, cq):
    d = np.abs(c - cq)
    if kind == "GM":
        return np.exp(-d)
    if kind == "IFD":
        top = np.max(np.abs(c))
        return 1.0 - d / top if top > 0 else np.ones_like(d)
    raise ConfigError(f"unknown similarity {kind!r}")


def ca_grow(img, seeds: SeedSet, similarity="GM", max_iter=None, history=None):
    """Synchronous GrowCut-style automaton on the Moore neighbourhood.

    Returns the label raster (0 unlabeled, 1 fg, 2 bg) and the strengths.
    ``history`` (a list) receives the strength raster after every iteration.
    """
    c = as_float(img)
    seeds.validate(c.shape)
    H, W = c.shape
    lab = seeds.label_image(c.shape)
    th = (lab > 0).astype(float)
    if max_iter is None:
        max_iter = H * W + 10
    top = np.max(np.abs(c))
    cp = np.pad(c, 1, mode="edge")
    g = []
    for dy, dx in NEIGHBOURS:
        cq = cp[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
        if similarity == "IFD" and top > 0:
            gi = 1.0 - np.abs(c - cq) / top
        else:
            gi = _similarity(similarity, c, cq)
        valid = np.zeros((H, W), bool)
        valid[max(0, -dy):H - max(0, dy), max(0, -dx):W - max(0, dx)] = True
        g.append(np.where(valid, gi, 0.0))
    for _ in range(max_iter):
        tp = np.pad(th, 1)
        lp = np.pad(lab, 1)
        best = th.copy()
        blab = lab.copy()
        for (dy, dx), gi in zip(NEIGHBOURS, g):
            att = gi * tp[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
            win = att > best
            best[win] = att[win]
            blab[win] = lp[1 + dy:1 + dy + H, 1 + dx:1 + dx + W][win]
        if np.array_equal(best, th) and np.array_equal(blab, lab):
            return lab, th
        th, lab = best, blab
        if history is not None:
            history.append(th.copy())
    raise AlgorithmError("cellular automaton did not converge within the iteration cap")


@dataclass(frozen=True)
class GtvcutInfo:
    area: int
    degenerate: bool


def gtvcut_pipeline(img, bbox, similarity="GM", min_fraction=0.02, return_info=False):
    """Crop, stretch to [0,1], seed, grow, hull, open(disk 1), paste back.

    ``bbox`` is (x0, y0, x1, y1) with exclusive ends. A result covering less than
    ``min_fraction`` of the box is flagged as degenerate.
    """
    a = as_float(img)
    H, W = a.shape
    x0, y0, x1, y1 = (int(v) for v in bbox)
    if not (0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H):
        raise ConfigError("bbox outside the image")
    crop = contrast_stretch(a[y0:y1, x0:x1], 0.0, 1.0, rounded=False)
    seeds = adaptive_seeds(x1 - x0, y1 - y0)
    lab, _ = ca_grow(crop, seeds, similarity)
    m = lab == 1
    if m.any():
        m = morphology(convex_hull(m), "open", disk(1))
    out = np.zeros(a.shape, bool)
    out[y0:y1, x0:x1] = m
    area = int(out.sum())
    bad = area < max(len(seeds.fg) + 1, min_fraction * (x1 - x0) * (y1 - y0))
    if bad:
        log.warning("gtvcut: segmentation collapsed to %d pixels", area)
    return (out, GtvcutInfo(area, bad)) if return_info else out


# ---------------------------------------------------------------- random walker

@dataclass
class RwGraph:
    shape: tuple
    i: np.ndarray  # edge endpoints (flat pixel indices)
    j: np.ndarray
    w: np.ndarray
    beta: float
    nodes: np.ndarray = field(default=None)  # bool mask of pixels that are graph nodes

    def laplacian(self):
        n = int(np.prod(self.shape))
        A = sparse.coo_matrix((np.r_[self.w, self.w], (np.r_[self.i, self.j], np.r_[self.j, self.i])),
                              shape=(n, n)).tocsr()
        d = np.asarray(A.sum(1)).ravel()
        return (sparse.diags(d) - A).tocsr()


def rw_build(img, beta=90.0, normalize=True, mask=None) -> RwGraph:
    """4-neighbour lattice with w_ij = exp(-beta (g_i - g_j)^2) on [0,1]-scaled values."""
    if not beta > 0:
        raise ConfigError("beta must be positive")
    a = as_float(img)
    if normalize:
        lo, hi = a.min(), a.max()
        a = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    H, W = a.shape
    nodes = np.ones(a.shape, bool) if mask is None else as_mask(mask)
    idx = np.arange(H * W).reshape(H, W)
    ii, jj, ww = [], [], []
    for sa, sb in [((slice(None), slice(0, W - 1)), (slice(None), slice(1, W))),
                   ((slice(0, H - 1), slice(None)), (slice(1, H), slice(None)))]:
        keep = nodes[sa] & nodes[sb]
        ii.append(idx[sa][keep])
        jj.append(idx[sb][keep])
        ww.append(np.exp(-beta * (a[sa][keep] - a[sb][keep]) ** 2))
    w = np.maximum(np.concatenate(ww), np.finfo(float).tiny)
    return RwGraph((H, W), np.concatenate(ii), np.concatenate(jj), w, float(beta), nodes)


def suv_convert(activity, injected_dose, weight):
    """SUV = activity / (dose / body weight)."""
    if not injected_dose > 0 or not weight > 0:
        raise ConfigError("dose and weight must be positive")
    return np.asarray(activity, float) / (injected_dose / weight)


def _solve(LU, rhs, solver, rtol):
    n = LU.shape[0]
    if solver == "auto":
        solver = "direct" if n < 10_000 else "cg"
    if solver == "direct":
        return spla.spsolve(LU.tocsc(), rhs)
    if solver == "cg":
        dinv = 1.0 / LU.diagonal()
        M = spla.LinearOperator(LU.shape, matvec=lambda v: dinv * v)
        x, info = spla.cg(LU, rhs, rtol=rtol, atol=0.0, maxiter=20 * n + 100, M=M)
        if info != 0:
            raise AlgorithmError(f"conjugate gradient did not converge (info={info})")
        return x
    raise ConfigError(f"unknown solver {solver!r}")


def random_walker(graph: RwGraph, seeds: SeedSet, prob_threshold=0.5, solver="auto", rtol=1e-10):
    """Foreground probabilities from the combinatorial Dirichlet problem.

    Returns (probability raster, mask p >= threshold). Pixels outside the graph's
    node mask get probability 0.
    """
    if not 0 < prob_threshold < 1:
        raise ConfigError("probability threshold must be in (0, 1)")
    seeds.validate(graph.shape)
    H, W = graph.shape
    lab = seeds.label_image(graph.shape).ravel()
    nodes = graph.nodes.ravel()
    if np.any(lab[~nodes] > 0):
        raise ConfigError("seed outside the graph mask")
    L = graph.laplacian()
    marked = lab > 0
    U = np.flatnonzero(nodes & ~marked)
    M = np.flatnonzero(marked)
    xm = (lab[M] == 1).astype(float)
    p = np.zeros(H * W)
    p[M] = xm
    if U.size:
        LU = L[U][:, U]
        B = L[U][:, M]
        # every unlabeled component must reach a seed
        n_comp, comp = _graph_components(LU, directed=False)
        seeded = np.zeros(n_comp, bool)
        touch = np.asarray(abs(B).sum(1)).ravel() > 0
        seeded[comp[touch]] = True
        if not seeded.all():
            k = int(np.flatnonzero(~seeded)[0])
            px = U[comp == k]
            y, x = divmod(int(px[0]), W)
            raise AlgorithmError(
                f"unlabeled region of {px.size} pixels starting at (x={x}, y={y}) has no seed")
        p[U] = _solve(LU, -(B @ xm), solver, rtol)
    p = np.clip(p, 0.0, 1.0).reshape(H, W)
    return p, (p >= prob_threshold) & graph.nodes


def rw_weighted(pet, mri_mask, seeds: SeedSet, gain_in=1.1, gain_out=0.9, beta=90.0,
                prob_threshold=0.5, solver="auto"):
    """Random walker on PET values boosted inside and damped outside an MRI mask."""
    if not gain_in > 0 or not gain_out > 0:
        raise ConfigError("gains must be positive")
    a = as_float(pet)
    m = as_mask(mri_mask)
    scaled = np.where(m, a * gain_in, a * gain_out)
    g = rw_build(scaled, beta)
    return random_walker(g, seeds, prob_threshold, solver)[1]
