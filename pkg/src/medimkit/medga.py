"""Genetic-algorithm histogram enhancement toward a bimodal shape, plus baseline enhancers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AlgorithmError, ConfigError
from .imgcore import (as_float, as_mask, connected_components, convex_hull, disk, fill_holes,
                      morphology, remove_small, shape_features)
from .threshold import Histogram, binarize, histogram, iots


@dataclass(frozen=True)
class MedGaConfig:
    population: int = 100
    p_c: float = 0.9
    p_m: float = 0.01
    k: int = 20
    generations: int = 100
    seed: int = 0
    elite: int = 1

    def __post_init__(self):
        if not (0 <= self.p_c <= 1 and 0 <= self.p_m <= 1):
            raise ConfigError("p_c and p_m must lie in [0, 1]")
        if self.population < 2:
            raise ConfigError("population must hold at least 2 individuals")
        if not 1 <= self.k <= self.population:
            raise ConfigError("tournament size must be in [1, population]")
        if self.generations < 0 or not 0 <= self.elite < self.population:
            raise ConfigError("bad generation or elite count")


@dataclass(frozen=True)
class FitnessTerms:
    tau1: float
    tau2: float
    tau3: float
    theta_opt: float
    mu1: float
    mu2: float
    sigma1: float
    sigma2: float
    omega1: float
    omega2: float

    @property
    def total(self):
        return self.tau1 + self.tau2 + self.tau3


@dataclass
class Individual:
    genes: np.ndarray  # sorted int64
    fitness: float = math.inf
    terms: FitnessTerms | None = field(default=None, repr=False)


@dataclass(frozen=True)
class InputLevels:
    """Populated levels of the (stretched) input and their frequencies, ascending."""

    levels: np.ndarray
    freqs: np.ndarray
    lmax: int


def input_levels(img, roi=None) -> InputLevels:
    """Stretch the roi values from [l_min, l_max] onto [1, l_max] and collect levels."""
    a = np.rint(as_float(img))
    r = np.ones(a.shape, bool) if roi is None else as_mask(roi)
    v = a[r]
    if v.size == 0:
        raise ConfigError("empty roi")
    lo, hi = v.min(), v.max()
    if hi <= lo or hi < 2:
        raise AlgorithmError("roi needs at least two distinct gray levels")
    s = stretch_levels(v, lo, hi)
    lv, fr = np.unique(s, return_counts=True)
    if lv.size < 2:
        raise AlgorithmError("roi needs at least two distinct gray levels")
    return InputLevels(lv, fr.astype(np.int64), int(hi))


def stretch_levels(v, lo, hi):
    return np.rint(1 + (np.asarray(v, float) - lo) * (hi - 1) / (hi - lo)).astype(np.int64)


def induced_histogram(genes, inp: InputLevels) -> Histogram:
    # duplicate genes sum their frequencies
    return Histogram(np.bincount(genes, weights=inp.freqs, minlength=inp.lmax + 1).astype(np.int64))


def _wstd(x, w):
    if w.sum() == 0:
        return 0.0
    m = (x * w).sum() / w.sum()
    return float(np.sqrt(((x - m) ** 2 * w).sum() / w.sum()))


def fitness(genes, inp: InputLevels, eps_tol=0.5) -> FitnessTerms:
    g = np.asarray(genes, np.int64)
    if g.size != inp.levels.size:
        raise ConfigError("individual length differs from the populated level count")
    h = induced_histogram(g, inp)
    res = iots(h, eps_tol)  # raises AlgorithmError on a single-level histogram
    lv = np.flatnonzero(h.bins)
    w = h.bins[lv].astype(float)
    lo = lv <= res.theta
    s1 = _wstd(lv[lo], w[lo])
    s2 = _wstd(lv[~lo], w[~lo])
    om1 = 0.5 * (res.theta - g.min())
    om2 = 0.5 * (g.max() - res.theta)
    return FitnessTerms(
        tau1=abs(2 * res.theta - res.mu1 - res.mu2),
        tau2=abs(om1 - 3 * s1),
        tau3=abs(om2 - 3 * s2),
        theta_opt=res.theta, mu1=res.mu1, mu2=res.mu2,
        sigma1=s1, sigma2=s2, omega1=om1, omega2=om2,
    )


def evaluate(ind: Individual, inp: InputLevels) -> Individual:
    try:
        t = fitness(ind.genes, inp)
        ind.fitness, ind.terms = t.total, t
    except AlgorithmError:
        ind.fitness, ind.terms = math.inf, None
    return ind


def random_individual(n, lmax, rng) -> Individual:
    return Individual(np.sort(rng.integers(1, lmax + 1, size=n)))


def tournament_select(pop, k, rng) -> Individual:
    """k draws with reinsertion; the lowest fitness wins (first drawn on ties)."""
    if not pop:
        raise ConfigError("empty population")
    if not 1 <= k <= len(pop):
        raise ConfigError("tournament size must be in [1, |P|]")
    idx = rng.integers(0, len(pop), size=k)
    best = idx[0]
    for i in idx[1:]:
        if pop[i].fitness < pop[best].fitness:
            best = i
    return pop[best]


def crossover_genes(p1, p2, cp):
    """Exchange a half-length segment around cut point ``cp`` (1-based).

    With hp = round(n/2): if cp > hp the first offspring takes positions
    cp-hp..cp-1 from p2, otherwise positions 1..cp-1 and cp+hp..n. The second
    offspring swaps the roles. Offspring are re-sorted.
    """
    a, b = np.asarray(p1), np.asarray(p2)
    n = a.size
    if b.size != n:
        raise ConfigError("parents differ in length")
    hp = int(math.floor(n / 2 + 0.5))
    from2 = np.zeros(n, bool)  # 0-based positions the first offspring takes from p2
    if cp > hp:
        from2[cp - hp - 1:cp - 1] = True
    else:
        from2[:cp - 1] = True
        from2[cp + hp - 1:] = True
    o1 = np.where(from2, b, a)
    o2 = np.where(from2, a, b)
    return np.sort(o1), np.sort(o2)


def crossover(p1: Individual, p2: Individual, rng):
    n = p1.genes.size
    cp = int(rng.integers(1, n + 1))
    g1, g2 = crossover_genes(p1.genes, p2.genes, cp)
    return Individual(g1), Individual(g2)


def mutate_genes(genes, p_m, theta, rng):
    """Resample genes below theta in [min, theta) and the others in [theta, max]."""
    g = np.asarray(genes, np.int64).copy()
    lmin, lmax = int(g.min()), int(g.max())
    cut = int(math.ceil(theta))  # first integer >= theta
    hits = rng.random(g.size) < p_m
    for i in np.flatnonzero(hits):
        if g[i] < theta:
            lo, hi = lmin, cut - 1
        else:
            lo, hi = cut, lmax
        if lo <= hi:
            g[i] = rng.integers(lo, hi + 1)
    return np.sort(g)


def mutate(ind: Individual, p_m, theta_opt, rng) -> Individual:
    return Individual(mutate_genes(ind.genes, p_m, theta_opt, rng))


@dataclass
class MedGaResult:
    enhanced: np.ndarray  # full frame; roi pixels remapped, 0 elsewhere
    best: Individual
    history: list  # best fitness per generation (index 0 = initial population)
    levels: InputLevels


def remap_image(img, roi, best_genes, inp: InputLevels):
    """Replace every stretched input level by the gene of the same rank."""
    a = np.rint(as_float(img))
    r = np.ones(a.shape, bool) if roi is None else as_mask(roi)
    v = a[r]
    s = stretch_levels(v, v.min(), v.max())
    pos = np.searchsorted(inp.levels, s)
    out = np.zeros(a.shape)
    out[r] = np.asarray(best_genes)[pos]
    return out


def medga_run(img, roi=None, cfg: MedGaConfig = MedGaConfig(), check=False) -> MedGaResult:
    inp = input_levels(img, roi)
    n = inp.levels.size
    rng = np.random.default_rng(cfg.seed)
    pop = [evaluate(random_individual(n, inp.lmax, rng), inp) for _ in range(cfg.population)]
    history = [min(p.fitness for p in pop)]
    for _ in range(cfg.generations):
        order = sorted(range(len(pop)), key=lambda i: pop[i].fitness)
        nxt = [pop[i] for i in order[:cfg.elite]]
        while len(nxt) < cfg.population:
            a = tournament_select(pop, cfg.k, rng)
            b = tournament_select(pop, cfg.k, rng)
            if rng.random() < cfg.p_c:
                kids = crossover(a, b, rng)
                kids = [evaluate(c, inp) for c in kids]
            else:
                kids = [Individual(a.genes.copy(), a.fitness, a.terms),
                        Individual(b.genes.copy(), b.fitness, b.terms)]
            for c in kids:
                if len(nxt) >= cfg.population:
                    break
                if cfg.p_m > 0 and c.terms is not None:
                    g = mutate_genes(c.genes, cfg.p_m, c.terms.theta_opt, rng)
                    if not np.array_equal(g, c.genes):
                        c = evaluate(Individual(g), inp)
                nxt.append(c)
        pop = nxt
        if check:
            for p in pop:
                assert p.genes.size == n
                assert np.all(np.diff(p.genes) >= 0)
                assert p.genes.min() >= 1 and p.genes.max() <= inp.lmax
        history.append(min(p.fitness for p in pop))
    best = min(pop, key=lambda p: p.fitness)
    if not math.isfinite(best.fitness):
        raise AlgorithmError("no individual with a valid bimodal split was found")
    return MedGaResult(remap_image(img, roi, best.genes, inp), best, history, inp)


# ---------------------------------------------------------------- baselines

def _he_map(levels, freqs, lo, hi):
    c = np.cumsum(freqs)
    cmin, N = c[0], c[-1]
    if N == cmin:
        return np.full(levels.shape, float(lo))
    return np.rint(lo + (c - cmin) * (hi - lo) / (N - cmin))


def baseline_enhance(img, kind="HE", param=None, roi=None):
    """HE, BiHE, Gamma (param = gamma) or Sigmoid (param = lambda) on the roi range."""
    a = np.rint(as_float(img))
    r = np.ones(a.shape, bool) if roi is None else as_mask(roi)
    v = a[r]
    lmin, lmax = float(v.min()), float(v.max())
    out = a.copy()
    kind = kind.lower()
    if kind in ("he", "bihe"):
        lv, fr = np.unique(v, return_counts=True)
        if kind == "he":
            mp = _he_map(lv, fr, lmin, lmax)
        else:
            mean = float(v.mean())
            split = math.floor(mean)
            low = lv <= mean
            mp = np.empty(lv.shape)
            if low.any():
                mp[low] = _he_map(lv[low], fr[low], lmin, split)
            if (~low).any():
                mp[~low] = _he_map(lv[~low], fr[~low], min(split + 1, lmax), lmax)
        out[r] = mp[np.searchsorted(lv, v)]
        return out
    if kind == "gamma":
        if param is None or not param > 0:
            raise ConfigError("gamma must be positive")
        if lmax == lmin:
            return out
        x = (v - lmin) / (lmax - lmin)
        out[r] = lmin + (lmax - lmin) * x ** param
        return out
    if kind == "sigmoid":
        if param is None or not param > 0:
            raise ConfigError("sigmoid lambda must be positive")
        alpha = 0.5 * (lmax - lmin)
        out[r] = lmax / (1.0 + np.exp(-param * (v - alpha)))
        return out
    raise ConfigError(f"unknown enhancement {kind!r}")


def sigmoid_lambdas(img, roi=None):
    """The three slopes 4/alpha, 6/alpha, 8/alpha."""
    a = as_float(img)
    v = a if roi is None else a[as_mask(roi)]
    alpha = 0.5 * (v.max() - v.min())
    return tuple(k / alpha for k in (4.0, 6.0, 8.0))


# ---------------------------------------------------------------- segmentation

@dataclass(frozen=True)
class SegmentConfig:
    open_radius: int = 2
    roi_erode: int = 5
    min_area_fibroid: int = 120
    extent_range: tuple = (0.3, 0.8)
    max_ecc: float = 0.8
    min_extent_brain: float = 0.6
    brain_small_big: tuple = (30, 10)  # min area for crops above / below 300 px
    brain_crop_px: int = 300


def _components_filter(mask, keep_fn):
    lab = connected_components(mask, 8)
    out = np.zeros(mask.shape, bool)
    for k in range(1, lab.count + 1):
        if keep_fn(shape_features(lab, k)):
            out |= lab.labels == k
    return out


def medga_segment(img, roi, cfg: MedGaConfig = MedGaConfig(), postproc="fibroid",
                  seg: SegmentConfig = SegmentConfig(), result=None):
    """MedGA enhancement, IOTS binarization and the branch-specific clean-up."""
    r = as_mask(roi)
    res = result if result is not None else medga_run(img, r, cfg)
    th = iots(histogram(res.enhanced, r, res.levels.lmax + 1)).theta
    ys, xs = np.nonzero(r)
    M, N = int(np.ptp(ys)) + 1, int(np.ptp(xs)) + 1
    if postproc == "fibroid":
        m = binarize(res.enhanced, th, "below") & r
        m = morphology(m, "open", disk(seg.open_radius))
        m &= morphology(r, "erode", disk(seg.roi_erode))
        m = fill_holes(m)
        m = remove_small(m, seg.min_area_fibroid, 8)
        lo, hi = seg.extent_range
        m = _components_filter(m, lambda f: lo <= f.extent < hi and f.eccentricity < seg.max_ecc)
        cy, cx = (ys.min() + ys.max()) / 2, (xs.min() + xs.max()) / 2
        lim = math.hypot(M, N) / 3
        return _components_filter(m, lambda f: math.hypot(f.centroid[0] - cx, f.centroid[1] - cy) < lim)
    if postproc == "brain":
        m = binarize(res.enhanced, th, "above") & r
        m = fill_holes(m)
        big, small = seg.brain_small_big
        m = remove_small(m, big if M * N > seg.brain_crop_px else small, 8)
        if connected_components(m, 8).count > 1:
            m = _components_filter(m, lambda f: f.extent >= seg.min_extent_brain and f.eccentricity < seg.max_ecc)
        return convex_hull(m) if m.any() else m
    raise ConfigError(f"unknown post-processing {postproc!r}")
