import numpy as np
import pytest
from hypothesis import given, strategies as st

from medimkit import phantoms
from medimkit.clusterseg import (FuzzyPartition, GtvConfig, fcm, defuzzify, gtv_pipeline,
                                 necrosis_inclusion, next_pipeline, prostate_pipeline)
from medimkit.errors import AlgorithmError, ConfigError
from medimkit.imgcore import convex_hull
from medimkit.metrics import overlap_metrics


def fixed_point_oracle(x, v, m=2.0, iters=500):
    """Plain loop over samples and clusters, started from given centroids."""
    x = np.asarray(x, float)
    v = np.asarray(v, float).copy()
    for _ in range(iters):
        u = np.zeros((v.size, x.size))
        for k in range(x.size):
            d = np.abs(x[k] - v)
            if np.any(d == 0):
                u[np.argmax(d == 0), k] = 1
                continue
            for i in range(v.size):
                u[i, k] = 1 / sum((d[i] / d[j]) ** (2 / (m - 1)) for j in range(v.size))
        v = (u ** m @ x) / (u ** m).sum(1)
    return v, u


def disk_mask(shape, cy, cx, r):
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def test_fcm_1d_example_matches_oracle():
    x = np.array([0, 0, 0, 1, 1, 1], float)
    p = fcm(x, C=2, eps_tol=1e-12)
    order = np.argsort(p.V[:, 0])
    assert p.V[order, 0] == pytest.approx([0, 1], abs=1e-3)
    vo, uo = fixed_point_oracle(x, [0.3, 0.7])
    assert p.V[order, 0] == pytest.approx(vo, abs=1e-6)
    own = np.where(x == 0, order[0], order[1])
    assert (p.U[own, np.arange(6)] > 0.95).all()


def test_fcm_equidistant_point():
    x = np.array([0, 0, 0, 2, 2, 2, 1], float)
    p = fcm(x, C=2, eps_tol=1e-14)
    assert p.U[:, -1] == pytest.approx([0.5, 0.5], abs=1e-6)


def test_fcm_repeated_points_global_optimum():
    x = np.repeat([[1.0, 5.0], [4.0, -2.0], [9.0, 9.0]], 7, axis=0)
    p = fcm(x, C=3)
    assert sorted(map(tuple, np.round(p.V, 9))) == [(1, 5), (4, -2), (9, 9)]
    assert p.J_history[-1] == pytest.approx(0, abs=1e-12)


def test_fcm_errors():
    with pytest.raises(ConfigError):
        fcm([0.0, 1.0, np.nan])
    with pytest.raises(ConfigError):
        fcm([0.0, 1.0], m=1.0)
    with pytest.raises(ConfigError):
        fcm([0.0, 1.0], C=3)


def mixture(seed, D):
    g = np.random.default_rng(seed)
    k = int(g.integers(2, 5))
    centres = g.uniform(-10, 10, (k, D))
    lab = g.integers(0, k, 120)
    return centres[lab] + g.normal(0, 1.5, (120, D)), k


@given(st.integers(0, 10_000), st.sampled_from([1, 2]), st.floats(1.3, 3.0))
def test_fcm_invariants(seed, D, m):
    X, k = mixture(seed, D)
    p = fcm(X, C=k, m=m, seed=seed)
    J = np.array(p.J_history)
    assert np.all(np.diff(J) <= 1e-9 * max(1.0, J[0]))
    assert np.abs(p.U.sum(0) - 1).max() <= 1e-9
    assert (p.U >= 0).all() and (p.U <= 1).all()
    s = p.U.sum(1)
    assert (s > 0).all() and (s < X.shape[0]).all()


def test_fcm_near_crisp_limit():
    g = np.random.default_rng(0)
    x = np.concatenate([g.normal(0, 0.3, 100), g.normal(10, 0.3, 100)])
    p = fcm(x, C=2, m=1.05)
    assert p.U.max(0).min() >= 0.99


def test_fcm_deterministic():
    X, k = mixture(7, 2)
    a, b = fcm(X, C=k, seed=3), fcm(X, C=k, seed=3)
    assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V) and a.J_history == b.J_history


def test_defuzzify_examples():
    U = np.array([[1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0]], float)
    V = np.array([[0.1], [0.9], [0.5]])
    p = FuzzyPartition(U, V, [])
    assert defuzzify(p, "brightest").tolist() == [False, True, False, False]
    assert defuzzify(p, "darkest").tolist() == [True, False, False, True]
    assert defuzzify(p, 2).tolist() == [False, False, True, False]
    flat = FuzzyPartition(np.full((3, 5), 1 / 3), V, [])
    assert defuzzify(flat, 0).all()
    with pytest.raises(ConfigError):
        defuzzify(p, 7)


@given(st.integers(0, 10_000))
def test_defuzzify_monotone_rescale(seed):
    g = np.random.default_rng(seed)
    U = g.random((3, 40))
    U /= U.sum(0)
    V = g.random((3, 1))
    a = FuzzyPartition(U, V, [])
    b = FuzzyPartition(np.exp(5 * U) - 0.3, V, [])
    for sel in ("brightest", "darkest", 1):
        assert np.array_equal(defuzzify(a, sel), defuzzify(b, sel))


def test_defuzzify_bimodal_phantom():
    img, truth, roi = phantoms.bimodal_blob(2, mu=(60.0, 180.0), sigma=(8.0, 8.0))
    p = fcm(img.ravel().astype(float), C=2)
    out = defuzzify(p, "brightest").reshape(img.shape)
    assert (out == truth).mean() >= 0.99


def test_gtv_pipeline_core_filled():
    for seed in range(3):
        img, truth, core, _ = phantoms.gtv(seed, core=True)
        roi = np.ones(img.shape, bool)
        out = gtv_pipeline(img, roi)
        assert out[core].all()
        assert overlap_metrics(out, truth).dsc >= 93


def test_gtv_pipeline_uniform_roi():
    with pytest.raises(AlgorithmError):
        gtv_pipeline(np.full((20, 20), 100), np.ones((20, 20), bool))


def test_gtv_pipeline_closes_arch():
    img = np.full((60, 60), 40.0)
    arch = disk_mask(img.shape, 35, 30, 18) & ~disk_mask(img.shape, 35, 30, 10)
    arch[35:] = False
    img[arch] = 200
    out = gtv_pipeline(img, np.ones(img.shape, bool), GtvConfig(min_area=10))
    assert np.array_equal(out, convex_hull(arch))


def test_necrosis_inclusion_examples():
    img = np.full((70, 70), 120.0)
    tumour = disk_mask(img.shape, 30, 30, 14)
    img[tumour] = 220
    core = disk_mask(img.shape, 30, 30, 5)
    img[core] = 30
    roi = np.ones(img.shape, bool)
    pre, post = tumour & ~core, tumour
    # internal necrosis was already closed by the hull
    assert np.array_equal(necrosis_inclusion(img, roi, pre, post), post)
    # an external dark lobe touching the band the hull added
    lobe = disk_mask(img.shape, 30, 47, 5)
    img2 = img.copy()
    img2[lobe] = 30
    notch = tumour & disk_mask(img.shape, 30, 44, 4)
    img2[notch] = 30
    pre2 = tumour & ~core & ~notch
    out = necrosis_inclusion(img2, roi, pre2, post)
    assert out[lobe].all() and np.array_equal(out & ~(lobe | notch), post & ~(lobe | notch))
    # no dark component reaches the band
    far = img.copy()
    far[disk_mask(img.shape, 60, 60, 4)] = 30
    assert np.array_equal(necrosis_inclusion(far, roi, pre, post), post)


def test_next_pipeline_core():
    for seed in range(3):
        img, truth, core, _ = phantoms.gtv(seed, core=True, radius=16)
        out = next_pipeline(img, truth)
        assert overlap_metrics(out, core).dsc >= 95


def test_next_pipeline_homogeneous():
    img, truth, _, _ = phantoms.gtv(0, core=False, radius=14)
    assert not next_pipeline(img, truth).any()


def test_next_pipeline_erosion_branch():
    g = np.zeros((40, 40), bool)
    g[10:18, 10:20] = True  # area 80 -> radius 1
    img = np.where(g, 200.0, 0.0)
    img[13:15, 13:17] = 50
    assert next_pipeline(img, g).sum() == 8
    g2 = np.zeros((40, 40), bool)
    g2[10:17, 10:14] = True  # area 28, radius 1 leaves 10 px
    assert next_pipeline(np.where(g2, 200.0, 0.0), g2).sum() == 0
    tiny = np.zeros((40, 40), bool)
    tiny[5:7, 5:7] = True
    with pytest.raises(AlgorithmError):
        next_pipeline(np.zeros((40, 40)), tiny)


def test_prostate_joint_features():
    t2, t1, gland, roi = phantoms.prostate(0)
    both = prostate_pipeline(t2, t1, roi)
    assert overlap_metrics(both, gland).dsc >= 90
    for ch in (("t2",), ("t1",)):
        try:
            single = prostate_pipeline(t2, t1, roi, channels=ch)
        except AlgorithmError:
            continue
        assert overlap_metrics(single, gland).dsc < 80


def test_prostate_identical_channels():
    t2, _, _, roi = phantoms.prostate(1)
    a = prostate_pipeline(t2, t2, roi)
    b = prostate_pipeline(t2, t2, roi, channels=("t2",))
    assert np.array_equal(a, b)


def test_prostate_nearest_component():
    img = np.full((100, 100), 30.0)
    near = disk_mask(img.shape, 50, 62, 15)
    far = disk_mask(img.shape, 15, 15, 13)
    img[near | far] = 200
    roi = np.ones(img.shape, bool)
    out = prostate_pipeline(img, img, roi)
    assert out[50, 62] and not out[15, 15]
    with pytest.raises(ConfigError):
        prostate_pipeline(img, img, np.zeros_like(roi))
