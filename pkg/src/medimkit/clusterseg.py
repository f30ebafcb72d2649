"""Fuzzy C-means and the GTV, necrosis and multispectral prostate pipelines."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AlgorithmError, ConfigError
from .imgcore import (as_float, as_mask, connected_components, contrast_stretch, convex_hull,
                      disk, fill_holes, morphology, remove_small, square, stick_filter)


@dataclass
class FuzzyPartition:
    U: np.ndarray  # C x N
    V: np.ndarray  # C x D
    J_history: list

    @property
    def C(self):
        return self.U.shape[0]


def _dist2(X, V):
    # squared Euclidean distances, C x N
    return ((X[None, :, :] - V[:, None, :]) ** 2).sum(-1)


def _memberships(d2, m):
    """u_ik = 1 / sum_j (d_ik / d_jk)^(2/(m-1)), computed in log space.

    Samples sitting exactly on a centroid get a one-hot column.
    """
    C, N = d2.shape
    U = np.empty_like(d2)
    zero = d2 <= 0
    hit = zero.any(0)
    if np.any(~hit):
        p = 1.0 / (m - 1.0)
        lg = -p * np.log(d2[:, ~hit])
        lg -= lg.max(0, keepdims=True)
        e = np.exp(lg)
        U[:, ~hit] = e / e.sum(0, keepdims=True)
    if np.any(hit):
        first = np.argmax(zero[:, hit], axis=0)
        col = np.zeros((C, int(hit.sum())))
        col[first, np.arange(col.shape[1])] = 1.0
        U[:, hit] = col
    return U


def fcm(data, C=2, m=2.0, eps_tol=1e-6, max_iter=300, seed=0) -> FuzzyPartition:
    """Alternating optimisation of J_m = sum u_ik^m ||x_k - v_i||^2.

    Each iteration updates the centroids from U, then U from the centroids, then J.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ConfigError("fcm data must be N x D")
    if not np.all(np.isfinite(X)):
        raise ConfigError("fcm data contains NaN or inf")
    N = X.shape[0]
    if not m > 1:
        raise ConfigError("fuzzifier m must be > 1")
    if C < 2 or N < C:
        raise ConfigError("fcm needs C >= 2 and N >= C")
    rng = np.random.default_rng(seed)
    U = rng.random((C, N))
    U /= U.sum(0, keepdims=True)
    J = []
    for _ in range(max_iter):
        Um = U ** m
        V = (Um @ X) / Um.sum(1, keepdims=True)
        d2 = _dist2(X, V)
        U = _memberships(d2, m)
        J.append(float(((U ** m) * d2).sum()))
        if len(J) > 1 and abs(J[-1] - J[-2]) <= eps_tol:
            break
    return FuzzyPartition(U, V, J)


def defuzzify(part: FuzzyPartition, select="brightest"):
    """Boolean vector over samples whose argmax membership is the selected cluster.

    ``select`` is 'brightest', 'darkest' (by the first centroid coordinate) or an index.
    Ties in the argmax go to the lower cluster index.
    """
    arg = np.argmax(part.U, axis=0)
    if select == "brightest":
        k = int(np.argmax(part.V[:, 0]))
    elif select == "darkest":
        k = int(np.argmin(part.V[:, 0]))
    elif isinstance(select, (int, np.integer)) and 0 <= select < part.C:
        k = int(select)
    else:
        raise ConfigError(f"bad cluster selection {select!r}")
    return arg == k


def _roi_cluster(img, roi, C, select, m=2.0, seed=0):
    a = as_float(img)
    r = as_mask(roi)
    if not r.any():
        raise ConfigError("empty roi")
    vals = contrast_stretch(a, 0, 1, mask=r, rounded=False)[r]
    if np.ptp(vals) == 0:
        raise AlgorithmError("roi has a single intensity level; clustering is degenerate")
    part = fcm(vals, C=C, m=m, seed=seed)
    out = np.zeros(a.shape, bool)
    out[r] = defuzzify(part, select)
    return out, part


@dataclass(frozen=True)
class GtvConfig:
    min_area: int = 10  # small-area removal before the hull
    m: float = 2.0
    seed: int = 0


def gtv_pipeline(img, roi, cfg: GtvConfig = GtvConfig(), return_stages=False):
    """Bright-cluster FCM inside the roi, cleaned and closed by the convex hull."""
    bright, _ = _roi_cluster(img, roi, 2, "brightest", cfg.m, cfg.seed)
    pre = remove_small(bright, cfg.min_area, 8)
    if not pre.any():
        raise AlgorithmError("no bright component survived small-area removal")
    post = convex_hull(pre)
    return (post, pre) if return_stages else post


def necrosis_inclusion(img, roi, pre_hull, post_hull, m=2.0, seed=0):
    """Add dark-cluster components touching the band the hull added."""
    dark, _ = _roi_cluster(img, roi, 3, "darkest", m, seed)
    band = as_mask(post_hull) ^ as_mask(pre_hull)
    lab, n = connected_components(dark, 8)
    if n == 0:
        return as_mask(post_hull).copy()
    hit = np.zeros(n + 1, bool)
    hit[lab[band]] = True
    hit[0] = False
    return as_mask(post_hull) | hit[lab]


@dataclass(frozen=True)
class NextConfig:
    min_area: int = 5
    min_contrast: float = 0.2  # minimum centroid gap, as a fraction of the mean GTV intensity
    m: float = 2.0
    seed: int = 0


def next_pipeline(img, gtv, cfg: NextConfig = NextConfig()):
    """Necrotic core inside a GTV: erode, FCM C=2, darkest cluster, clean, fill."""
    g = as_mask(gtv)
    if not g.any():
        raise ConfigError("empty GTV mask")
    rad = 2 if g.sum() > 80 else 1
    inner = morphology(g, "erode", disk(rad))
    if inner.sum() < 2:
        raise AlgorithmError("GTV too small after erosion")
    a = as_float(img)
    vals = a[inner]
    if np.ptp(vals) == 0:
        return np.zeros(g.shape, bool)
    x = contrast_stretch(a, 0, 1, mask=inner, rounded=False)[inner]
    part = fcm(x, C=2, m=cfg.m, seed=cfg.seed)
    # a homogeneous GTV splits its noise into two close clusters: compare the
    # centroids in original units against the mean GTV intensity
    v = np.sort(part.V[:, 0]) * np.ptp(vals) + vals.min()
    if v[-1] - v[0] < cfg.min_contrast * abs(vals.mean()):
        return np.zeros(g.shape, bool)
    dark = np.zeros(g.shape, bool)
    dark[inner] = defuzzify(part, "darkest")
    dark = remove_small(dark, cfg.min_area, 4)
    return fill_holes(dark)


@dataclass(frozen=True)
class ProstateConfig:
    stick_length: int = 5
    stick_thickness: int = 1
    min_area: int = 500
    open_square: int = 2  # 5x5 square
    final_open: int = 3
    m: float = 2.0
    seed: int = 0


def _nearest_component(mask, cy, cx):
    lab, n = connected_components(mask, 8)
    if n == 0:
        return mask
    if lab[int(cy), int(cx)] > 0:
        return lab == lab[int(cy), int(cx)]
    ys, xs = np.nonzero(lab)
    d = (ys - cy) ** 2 + (xs - cx) ** 2
    return lab == lab[ys[np.argmin(d)], xs[np.argmin(d)]]


def prostate_pipeline(t2, t1, roi, cfg: ProstateConfig = ProstateConfig(), channels=("t2", "t1")):
    """Multispectral FCM (C=3) with morphological refinement.

    The gland cluster is the one owning the roi centre pixel. ``channels`` may
    restrict the feature vector to a single series for comparison runs.
    """
    r = as_mask(roi)
    if not r.any():
        raise ConfigError("empty roi")
    a2, a1 = as_float(t2), as_float(t1)
    if a2.shape != a1.shape or a2.shape != r.shape:
        raise ConfigError("prostate inputs must share one grid")
    feats = []
    for name, a in (("t2", a2), ("t1", a1)):
        if name in channels:
            f = stick_filter(a, cfg.stick_length, cfg.stick_thickness)
            feats.append(contrast_stretch(f, 0, 1, mask=r, rounded=False)[r])
    if not feats:
        raise ConfigError("no channel selected")
    X = np.column_stack(feats)
    part = fcm(X, C=3, m=cfg.m, seed=cfg.seed)
    ys, xs = np.nonzero(r)
    cy, cx = (ys.min() + ys.max()) / 2.0, (xs.min() + xs.max()) / 2.0
    arg = np.argmax(part.U, axis=0)
    k = int(np.argmin((ys - cy) ** 2 + (xs - cx) ** 2))
    sel = np.zeros(r.shape, bool)
    sel[r] = arg == arg[k]
    sel = remove_small(sel, cfg.min_area, 8)
    sel = morphology(sel, "open", square(cfg.open_square))
    if not sel.any():
        raise AlgorithmError("no gland candidate survived refinement")
    sel = _nearest_component(sel, cy, cx)
    sel = convex_hull(sel)
    return morphology(sel, "open", disk(cfg.final_open))
