import numpy as np
import pytest
from hypothesis import given, strategies as st

from medimkit import phantoms
from medimkit.errors import AlgorithmError, ConfigError
from medimkit.graphseg import (NEIGHBOURS, RwGraph, SeedSet, adaptive_seeds, ca_grow,
                               gtvcut_pipeline, random_walker, rw_build, rw_weighted, suv_convert)
from medimkit.metrics import overlap_metrics


def ca_oracle(c, fg, bg, kind="GM"):
    """Cell-by-cell synchronous automaton in plain Python."""
    H, W = c.shape
    lab = [[0] * W for _ in range(H)]
    th = [[0.0] * W for _ in range(H)]
    for x, y in fg:
        lab[y][x], th[y][x] = 1, 1.0
    for x, y in bg:
        lab[y][x], th[y][x] = 2, 1.0
    top = float(np.abs(c).max())
    while True:
        nl = [r[:] for r in lab]
        nt = [r[:] for r in th]
        for y in range(H):
            for x in range(W):
                for dy, dx in NEIGHBOURS:
                    qy, qx = y + dy, x + dx
                    if not (0 <= qy < H and 0 <= qx < W):
                        continue
                    d = abs(float(c[y, x]) - float(c[qy, qx]))
                    g = np.exp(-d) if kind == "GM" else 1 - d / top
                    if g * th[qy][qx] > nt[y][x]:
                        nt[y][x], nl[y][x] = g * th[qy][qx], lab[qy][qx]
        if nl == lab and nt == th:
            return np.array(lab)
        lab, th = nl, nt


def test_adaptive_seeds_layouts():
    s = adaptive_seeds(20, 20)
    assert len(s.fg) == 9 and len(s.bg) == 8
    assert (10, 10) in s.fg and (0, 0) in s.bg and (10, 0) in s.bg
    for w, h in ((8, 8), (10, 10)):
        s = adaptive_seeds(w, h)
        assert len(s.fg) == 5 and len(s.bg) == 4
    with pytest.raises(ConfigError):
        adaptive_seeds(4, 9)


def test_seedset_validation():
    with pytest.raises(ConfigError):
        SeedSet(((1, 1),), ((1, 1),)).validate((5, 5))
    with pytest.raises(ConfigError):
        SeedSet(((1, 1),), ((5, 0),)).validate((5, 5))
    with pytest.raises(ConfigError):
        SeedSet((), ((0, 0),)).validate((5, 5))


def test_ca_two_level_exact():
    c = np.full((12, 12), 0.1)
    c[3:8, 4:10] = 0.9
    s = SeedSet(((6, 5),), ((0, 0), (11, 11)))
    lab, _ = ca_grow(c, s)
    assert np.array_equal(lab == 1, c == 0.9)
    assert np.array_equal(lab, ca_oracle(c, s.fg, s.bg))


def test_ca_uniform_matches_oracle():
    c = np.full((12, 12), 0.5)
    s = SeedSet(((3, 4), (4, 4)), ((10, 9),))
    assert np.array_equal(ca_grow(c, s)[0], ca_oracle(c, s.fg, s.bg))


@given(st.integers(0, 10_000), st.sampled_from(["GM", "IFD"]))
def test_ca_properties(seed, kind):
    g = np.random.default_rng(seed)
    c = g.random((9, 11))
    pts = g.permutation(99)[:4]
    xy = [(int(p % 11), int(p // 11)) for p in pts]
    s = SeedSet(tuple(xy[:2]), tuple(xy[2:]))
    hist = []
    lab, th = ca_grow(c, s, kind, history=hist)
    assert np.array_equal(lab, ca_oracle(c, s.fg, s.bg, kind))
    for x, y in s.fg:
        assert lab[y, x] == 1 and th[y, x] == 1
    for x, y in s.bg:
        assert lab[y, x] == 2
    prev = (s.label_image(c.shape) > 0).astype(float)
    for t in hist:
        assert (t >= prev).all() and (t <= 1).all()
        prev = t


@pytest.mark.parametrize("seed", range(4))
def test_gtvcut_phantom(seed):
    img, truth, core, bbox = phantoms.gtv(seed, core=bool(seed % 2))
    gm = gtvcut_pipeline(img, bbox, "GM")
    ifd = gtvcut_pipeline(img, bbox, "IFD")
    assert overlap_metrics(gm, truth).dsc >= 95
    assert overlap_metrics(gm, ifd).dsc >= 95


def test_gtvcut_degenerate_flag():
    g = np.random.default_rng(0)
    img = 100 + g.normal(0, 3, (40, 40))
    _, info = gtvcut_pipeline(img, (5, 5, 35, 35), return_info=True)
    img2, _, _, bbox = phantoms.gtv(0)
    _, info2 = gtvcut_pipeline(img2, bbox, return_info=True)
    assert not info2.degenerate
    assert info.degenerate or info.area < 0.5 * 900
    with pytest.raises(ConfigError):
        gtvcut_pipeline(img, (30, 30, 50, 50))


def test_rw_build_examples():
    g = rw_build(np.full((4, 5), 7.0))
    assert g.w.size == 4 * 4 + 3 * 5 and np.all(g.w == 1)
    g = rw_build(np.array([[0.0, 1.0]]), beta=90)
    assert g.w[0] == pytest.approx(np.exp(-90), rel=1e-12)
    with pytest.raises(ConfigError):
        rw_build(np.zeros((3, 3)), beta=0)


def test_suv_convert_examples():
    assert suv_convert(1.0, 70000, 70000) == 1.0
    assert suv_convert(0.0, 1, 1) == 0.0
    assert suv_convert(3.0, 10, 20) == 2 * suv_convert(3.0, 10, 10)
    with pytest.raises(ConfigError):
        suv_convert(1.0, 0, 1)


def chain(n):
    return RwGraph((1, n), np.arange(n - 1), np.arange(1, n), np.ones(n - 1), 1.0,
                   np.ones((1, n), bool))


def test_random_walker_chains():
    p, m = random_walker(chain(3), SeedSet(((0, 0),), ((2, 0),)))
    assert p[0, 1] == pytest.approx(0.5, abs=1e-12) and m[0, 1]
    p, _ = random_walker(chain(4), SeedSet(((0, 0),), ((3, 0),)))
    assert p[0, 1:3] == pytest.approx([2 / 3, 1 / 3], abs=1e-12)


def random_lattice(seed, n=8):
    g = np.random.default_rng(seed)
    graph = rw_build(np.zeros((n, n)))
    graph.w = g.uniform(0.05, 2.0, graph.w.size)
    pts = g.permutation(n * n)[:4]
    xy = [(int(p % n), int(p // n)) for p in pts]
    return graph, SeedSet(tuple(xy[:2]), tuple(xy[2:]))


def dense_oracle(graph, seeds):
    n = int(np.prod(graph.shape))
    L = np.zeros((n, n))
    for a, b, w in zip(graph.i, graph.j, graph.w):
        L[a, b] -= w
        L[b, a] -= w
        L[a, a] += w
        L[b, b] += w
    lab = seeds.label_image(graph.shape).ravel()
    M, U = np.flatnonzero(lab > 0), np.flatnonzero(lab == 0)
    p = np.zeros(n)
    p[M] = lab[M] == 1
    p[U] = np.linalg.solve(L[np.ix_(U, U)], -L[np.ix_(U, M)] @ p[M])
    return p.reshape(graph.shape)


@given(st.integers(0, 10_000))
def test_random_walker_dense_oracle(seed):
    graph, seeds = random_lattice(seed)
    ref = dense_oracle(graph, seeds)
    for solver in ("direct", "cg"):
        p, _ = random_walker(graph, seeds, solver=solver)
        assert np.abs(p - ref).max() <= 1e-8


@given(st.integers(0, 10_000))
def test_random_walker_properties(seed):
    graph, seeds = random_lattice(seed)
    p, _ = random_walker(graph, seeds)
    q, _ = random_walker(graph, SeedSet(seeds.bg, seeds.fg))
    assert (p >= 0).all() and (p <= 1).all()
    assert np.abs(p + q - 1).max() <= 1e-9
    # mean-value property at unlabeled nodes
    pf = p.ravel()
    num = np.zeros(pf.size)
    den = np.zeros(pf.size)
    np.add.at(num, graph.i, graph.w * pf[graph.j])
    np.add.at(num, graph.j, graph.w * pf[graph.i])
    np.add.at(den, graph.i, graph.w)
    np.add.at(den, graph.j, graph.w)
    free = seeds.label_image(graph.shape).ravel() == 0
    assert np.abs(pf[free] - num[free] / den[free]).max() <= 1e-9
    graph.w = graph.w * 37.5
    assert np.abs(random_walker(graph, seeds)[0] - p).max() <= 1e-9


def test_random_walker_unseeded_region():
    mask = np.ones((5, 5), bool)
    mask[:, 2] = False
    g = rw_build(np.zeros((5, 5)), mask=mask)
    with pytest.raises(AlgorithmError, match="no seed"):
        random_walker(g, SeedSet(((0, 0),), ((1, 4),)))
    with pytest.raises(ConfigError):
        random_walker(g, SeedSet(((0, 0),), ((1, 4),)), prob_threshold=1.0)


def pet_phantom():
    g = np.random.default_rng(4)
    yy, xx = np.mgrid[:40, :40]
    d = np.hypot(yy - 20, xx - 20)
    pet = np.where(d <= 8, 10.0, 1.0) + np.where((d > 8) & (d <= 11), 5.0, 0.0)
    pet += g.normal(0, 0.2, pet.shape)
    mri = d <= 8
    seeds = SeedSet(((20, 20), (21, 20)), ((0, 0), (39, 39), (0, 39), (39, 0)))
    return pet, mri, seeds


def test_rw_weighted_identity_gains():
    pet, mri, seeds = pet_phantom()
    plain = random_walker(rw_build(pet), seeds)[1]
    assert np.array_equal(rw_weighted(pet, mri, seeds, 1.0, 1.0), plain)
    # full mask is a uniform rescale, removed by normalisation
    full = np.ones_like(mri)
    assert np.array_equal(rw_weighted(pet, full, seeds, 1.3, 0.5), plain)


def test_rw_weighted_gain_out_sweep():
    pet, mri, seeds = pet_phantom()
    sizes = [rw_weighted(pet, mri, seeds, 1.0, go).sum() for go in (1.0, 0.6, 0.3, 0.05)]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    last = rw_weighted(pet, mri, seeds, 1.0, 0.05)
    assert overlap_metrics(last, mri).dsc >= 95
    with pytest.raises(ConfigError):
        rw_weighted(pet, mri, seeds, 0.0, 1.0)
