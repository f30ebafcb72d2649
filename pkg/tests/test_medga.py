import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from medimkit import phantoms
from medimkit.errors import AlgorithmError, ConfigError
from medimkit.medga import (FitnessTerms, Individual, InputLevels, MedGaConfig, baseline_enhance,
                            crossover_genes, fitness, input_levels, medga_run, medga_segment,
                            mutate_genes, sigmoid_lambdas, tournament_select)
from medimkit.metrics import overlap_metrics

SMALL = MedGaConfig(population=30, generations=20, k=6, seed=0)


def fitness_oracle(genes, levels, freqs, eps=0.5):
    """Recompute the three terms from scratch with plain loops."""
    h = {}
    for g, f in zip(genes, freqs):
        h[int(g)] = h.get(int(g), 0) + int(f)
    lv = sorted(h)
    tot = sum(h.values())
    theta = sum(l * h[l] for l in lv) / tot

    def means(t):
        lo = [l for l in lv if l <= t]
        hi = [l for l in lv if l > t]
        m1 = sum(l * h[l] for l in lo) / sum(h[l] for l in lo)
        m2 = sum(l * h[l] for l in hi) / sum(h[l] for l in hi)
        return m1, m2, lo, hi

    while True:
        m1, m2, lo, hi = means(theta)
        nxt = (m1 + m2) / 2
        if abs(nxt - theta) <= eps:
            break
        theta = nxt

    def sd(ls, m):
        w = sum(h[l] for l in ls)
        return (sum(h[l] * (l - m) ** 2 for l in ls) / w) ** 0.5

    s1, s2 = sd(lo, m1), sd(hi, m2)
    om1, om2 = (theta - min(genes)) / 2, (max(genes) - theta) / 2
    return abs(2 * theta - m1 - m2) + abs(om1 - 3 * s1) + abs(om2 - 3 * s2)


def test_tau1_example():
    t = FitnessTerms(abs(2 * 100 - 60 - 140), 0, 0, 100, 60, 140, 1, 1, 1, 1)
    assert t.tau1 == 0 and t.total == 0


TOY = InputLevels(np.arange(1, 5), np.ones(4, np.int64), 16)


def test_zero_fitness_by_exhaustive_search():
    zero = []
    for g in itertools.combinations_with_replacement(range(1, 17), 4):
        try:
            if fitness(np.array(g), TOY).total < 1e-12:
                zero.append(g)
        except AlgorithmError:
            pass
    assert (1, 2, 6, 7) in zero
    for g in zero:
        # every optimum is two equal-width pairs split symmetrically about theta
        t = fitness(np.array(g), TOY)
        assert t.sigma1 == t.sigma2 and t.omega1 == pytest.approx(3 * t.sigma1)


@given(st.integers(0, 10_000))
def test_symmetric_individual_beats_random(seed):
    g = np.random.default_rng(seed)
    rand = np.sort(g.integers(1, 17, 4))
    try:
        fr = fitness(rand, TOY).total
    except AlgorithmError:
        return
    assert fitness(np.array([1, 2, 6, 7]), TOY).total < fr or fr < 1e-12


@given(st.integers(0, 10_000))
def test_fitness_matches_oracle(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(3, 30))
    levels = np.sort(g.choice(np.arange(1, 200), n, replace=False))
    freqs = g.integers(1, 50, n)
    inp = InputLevels(levels, freqs, 255)
    genes = np.sort(g.integers(1, 256, n))
    try:
        got = fitness(genes, inp).total
    except AlgorithmError:
        assert len(set(genes.tolist())) == 1
        return
    assert got == pytest.approx(fitness_oracle(genes, levels, freqs), abs=1e-9)


def test_tournament_examples():
    pop = [Individual(np.array([i]), float(f)) for i, f in enumerate([5, 3, 9, 1, 7])]
    g = np.random.default_rng(0)
    # a full-size tournament draws the best with probability 1 - (4/5)^5
    wins = [tournament_select(pop, 5, g).fitness for _ in range(200)]
    assert min(wins) == 1 and np.mean(np.array(wins) == 1) > 0.6
    picks = [int(tournament_select(pop, 1, np.random.default_rng(s)).genes[0]) for s in range(500)]
    assert set(picks) == set(range(5))
    a = [tournament_select(pop, 3, np.random.default_rng(9)).fitness for _ in range(3)]
    b = [tournament_select(pop, 3, np.random.default_rng(9)).fitness for _ in range(3)]
    assert a == b
    with pytest.raises(ConfigError):
        tournament_select([], 1, g)


def test_crossover_examples():
    p = np.array([3, 5, 8, 9])
    for cp in range(1, 5):
        o1, o2 = crossover_genes(p, p, cp)
        assert np.array_equal(o1, p) and np.array_equal(o2, p)
    # n = 4, cut point 3: positions 1-2 come from the second parent
    o1, o2 = crossover_genes([10, 20, 30, 40], [11, 21, 31, 41], 3)
    assert o1.tolist() == [11, 21, 30, 40] and o2.tolist() == [10, 20, 31, 41]
    # cut point 2 <= half: positions 1 and 4 come from the second parent
    o1, _ = crossover_genes([10, 20, 30, 40], [11, 21, 31, 41], 2)
    assert o1.tolist() == [11, 20, 30, 41]
    with pytest.raises(ConfigError):
        crossover_genes([1, 2], [1, 2, 3], 1)


@given(st.integers(0, 10_000))
def test_crossover_exchange_property(seed):
    g = np.random.default_rng(seed)
    n = int(g.integers(1, 20))
    a, b = np.sort(g.integers(1, 256, n)), np.sort(g.integers(1, 256, n))
    o1, o2 = crossover_genes(a, b, int(g.integers(1, n + 1)))
    assert sorted(np.r_[o1, o2].tolist()) == sorted(np.r_[a, b].tolist())
    assert np.all(np.diff(o1) >= 0) and np.all(np.diff(o2) >= 0)


def test_mutation_examples():
    g0 = np.array([2, 4, 9, 12])
    assert np.array_equal(mutate_genes(g0, 0.0, 7, np.random.default_rng(0)), g0)
    # both intervals of width one: [2, 2] and [3, 3]
    out = mutate_genes(np.array([2, 2, 3, 3]), 1.0, 2.5, np.random.default_rng(0))
    assert out.tolist() == [2, 2, 3, 3]
    out = mutate_genes(np.array([1, 1, 5, 9]), 1.0, 5, np.random.default_rng(1))
    assert (out[:2] <= 4).all() and (out[2:] >= 5).all()


@given(st.integers(0, 10_000), st.floats(0, 1))
def test_mutation_sides_preserved(seed, pm):
    g = np.random.default_rng(seed)
    genes = np.sort(g.integers(1, 100, 12))
    theta = float(g.uniform(genes.min(), genes.max()))
    out = mutate_genes(genes, pm, theta, g)
    assert (out < theta).sum() == (genes < theta).sum()
    assert out.min() >= genes.min() and out.max() <= genes.max()
    assert np.all(np.diff(out) >= 0)


def test_medga_run_elitism_and_invariants():
    img, _, roi = phantoms.bimodal_blob(0, shape=(48, 48))
    res = medga_run(img, roi, SMALL, check=True)
    h = res.history
    assert len(h) == SMALL.generations + 1
    assert all(b <= a for a, b in zip(h, h[1:]))
    # the level remap is order preserving
    a = np.rint(img.astype(float)).ravel()
    e = res.enhanced.ravel()
    o = np.argsort(a, kind="stable")
    assert np.all(np.diff(e[o]) >= 0)


def test_medga_run_deterministic():
    img, _, roi = phantoms.bimodal_blob(1, shape=(40, 40))
    a, b = medga_run(img, roi, SMALL), medga_run(img, roi, SMALL)
    assert np.array_equal(a.enhanced, b.enhanced) and a.history == b.history


def test_medga_run_degenerate():
    with pytest.raises(AlgorithmError):
        medga_run(np.full((10, 10), 50), None, SMALL)
    with pytest.raises(ConfigError):
        MedGaConfig(p_c=1.5)
    with pytest.raises(ConfigError):
        MedGaConfig(population=10, k=11)


def test_input_levels_stretch():
    img = np.array([[10, 20], [30, 40]])
    inp = input_levels(img)
    assert inp.levels.tolist() == [1, 14, 27, 40] and inp.lmax == 40


def test_baseline_examples():
    ramp = np.arange(256).reshape(16, 16).astype(float)
    assert np.array_equal(baseline_enhance(ramp, "HE"), ramp)
    g = np.random.default_rng(0).integers(10, 200, (20, 20)).astype(float)
    assert np.allclose(baseline_enhance(g, "gamma", 1.0), g)
    lam = sigmoid_lambdas(ramp)
    assert lam == pytest.approx((4 / 127.5, 6 / 127.5, 8 / 127.5))
    mid = np.array([[0.0, 100.0, 200.0]])
    assert baseline_enhance(mid, "sigmoid", 0.05)[0, 1] == pytest.approx(100.0)
    with pytest.raises(ConfigError):
        baseline_enhance(ramp, "gamma", 0)
    with pytest.raises(ConfigError):
        baseline_enhance(ramp, "sigmoid", -1)


def test_bihe_splits_at_mean():
    g = np.random.default_rng(2)
    img = np.clip(np.r_[g.normal(60, 10, 500), g.normal(180, 10, 500)], 0, 255).round()
    img = img.reshape(20, 50)
    out = baseline_enhance(img, "BiHE")
    mean = img.mean()
    assert (out[img <= mean] <= np.floor(mean)).all() and (out[img > mean] > np.floor(mean)).all()
    # monotone
    o = np.argsort(img.ravel(), kind="stable")
    assert np.all(np.diff(out.ravel()[o]) >= 0)


@pytest.mark.parametrize("seed", range(2))
def test_medga_segment_branches(seed):
    img, truth, roi = phantoms.bimodal_blob(seed, dark_blob=True, shape=(64, 64))
    assert overlap_metrics(medga_segment(img, roi, SMALL, "fibroid"), truth).dsc >= 90
    img, truth, roi = phantoms.bimodal_blob(seed, shape=(64, 64))
    assert overlap_metrics(medga_segment(img, roi, SMALL, "brain"), truth).dsc >= 90


def test_medga_segment_brain_drops_stripe():
    g = np.random.default_rng(3)
    yy, xx = np.mgrid[:80, :80]
    blob = (yy - 45) ** 2 + (xx - 40) ** 2 <= 15 ** 2
    stripe = (yy >= 5) & (yy < 8) & (xx >= 5) & (xx < 75)
    img = np.where(blob | stripe, 170.0, 70.0) + g.normal(0, 8, blob.shape)
    img = np.clip(img, 0, 255).round()
    out = medga_segment(img, np.ones(blob.shape, bool), SMALL, "brain")
    assert not out[stripe].any()
    assert overlap_metrics(out, blob).dsc >= 90
    with pytest.raises(ConfigError):
        medga_segment(img, np.ones(blob.shape, bool), SMALL, "liver")
