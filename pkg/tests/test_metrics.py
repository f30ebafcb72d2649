import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from medimkit.errors import ConfigError
from medimkit.metrics import (ambe, boundary, distance_metrics, enhancement_metrics, overlap_metrics,
                              pearson, psnr, remap, ssim, ssim_terms, volume_metrics)


def boundary_oracle(m):
    H, W = m.shape
    out = []
    for y in range(H):
        for x in range(W):
            if not m[y, x]:
                continue
            for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                qy, qx = y + dy, x + dx
                if not (0 <= qy < H and 0 <= qx < W) or not m[qy, qx]:
                    out.append((y, x))
                    break
    return np.array(out, float)


def distance_oracle(s, g):
    bs, bg = boundary_oracle(s), boundary_oracle(g)
    d = np.sqrt(((bs[:, None, :] - bg[None, :, :]) ** 2).sum(-1))
    ds, dg = d.min(1), d.min(0)
    return ds.mean(), ds.max(), max(ds.max(), dg.max())


def random_masks(seed, shape=(24, 24)):
    g = np.random.default_rng(seed)
    s = g.random(shape) < g.uniform(0.1, 0.6)
    t = g.random(shape) < g.uniform(0.1, 0.6)
    s[0, 0] = t[0, 0] = True
    return s, t


def test_overlap_examples():
    g = np.zeros((6, 6), bool)
    g[1:3, 1:3] = True
    m = overlap_metrics(g, g)
    assert (m.dsc, m.ji, m.fpr, m.fnr) == (100, 100, 0, 0) and m.undefined == ()
    s = np.zeros_like(g)
    s[4:, 4:] = True
    assert overlap_metrics(s, g).dsc == 0
    s = np.zeros_like(g)
    s[1:3, 2:4] = True
    m = overlap_metrics(s, g)
    assert m.dsc == 50 and m.ji == pytest.approx(100 / 3, abs=1e-12)
    m = overlap_metrics(np.zeros_like(g), np.zeros_like(g))
    assert {"sen", "spc"} <= set(m.undefined) and math.isnan(m.sen)
    with pytest.raises(ConfigError):
        overlap_metrics(g, g[:3])


@given(st.integers(0, 10_000))
def test_overlap_identities(seed):
    s, t = random_masks(seed)
    m = overlap_metrics(s, t)
    j = m.ji / 100
    assert abs(m.dsc - 100 * 2 * j / (1 + j)) <= 1e-9
    assert m.dsc >= m.ji
    for v in (m.dsc, m.ji, m.sen, m.spc, m.fpr, m.fnr):
        assert 0 <= v <= 100
    # translation of both masks on a larger canvas
    S = np.zeros((40, 40), bool)
    G = np.zeros((40, 40), bool)
    S[9:33, 5:29], G[9:33, 5:29] = s, t
    S2, G2 = np.roll(S, (3, 7), (0, 1)), np.roll(G, (3, 7), (0, 1))
    a, b = overlap_metrics(S, G), overlap_metrics(S2, G2)
    assert (a.dsc, a.ji, a.sen, a.spc, a.fnr) == (b.dsc, b.ji, b.sen, b.spc, b.fnr)


def test_distance_examples():
    g = np.zeros((12, 12), bool)
    g[2:7, 3:9] = True
    d = distance_metrics(g, g)
    assert (d.avg_d, d.max_d, d.hd, d.mhd) == (0, 0, 0, 0)
    a = np.zeros((12, 12), bool)
    b = np.zeros((12, 12), bool)
    a[2, 2], b[5, 6] = True, True
    d = distance_metrics(a, b)
    assert d.avg_d == d.max_d == d.hd == 5
    with pytest.raises(ConfigError):
        distance_metrics(a, np.zeros_like(a))


def test_distance_concentric_squares():
    s = np.zeros((20, 20), bool)
    g = np.zeros((20, 20), bool)
    s[7:13, 7:13] = True
    g[5:15, 5:15] = True
    d = distance_metrics(s, g)
    avg, mx, hd = distance_oracle(s, g)
    assert d.avg_d == pytest.approx(avg, abs=1e-12)
    assert d.max_d == pytest.approx(mx, abs=1e-12)
    assert d.hd == pytest.approx(hd, abs=1e-12)
    assert d.max_d == 2 and d.hd == pytest.approx(math.hypot(2, 2))


def mhd_oracle(s, g):
    ps, pg = np.argwhere(s).astype(float), np.argwhere(g).astype(float)
    ms, mg = ps.mean(0), pg.mean(0)
    cs = (ps - ms).T @ (ps - ms) / len(ps)
    cg = (pg - mg).T @ (pg - mg) / len(pg)
    cov = (len(ps) * cs + len(pg) * cg) / (len(ps) + len(pg))
    d = ms - mg
    return math.sqrt(d @ np.linalg.inv(cov) @ d)


@given(st.integers(0, 10_000))
def test_distance_oracle_and_symmetry(seed):
    s, t = random_masks(seed, (14, 14))
    d = distance_metrics(s, t)
    avg, mx, hd = distance_oracle(s, t)
    assert d.avg_d == pytest.approx(avg, abs=1e-12) and d.max_d == pytest.approx(mx, abs=1e-12)
    assert d.hd == pytest.approx(hd, abs=1e-12)
    assert d.avg_d <= d.max_d <= d.hd
    assert d.hd == distance_metrics(t, s).hd
    if np.array_equal(boundary(s), boundary(t)):
        assert d.hd == 0
    else:
        assert d.hd > 0
    assert d.mhd == pytest.approx(mhd_oracle(s, t), abs=1e-9)


def test_boundary_matches_oracle():
    s, _ = random_masks(3)
    pts = boundary_oracle(s).astype(int)
    ref = np.zeros_like(s)
    ref[pts[:, 0], pts[:, 1]] = True
    assert np.array_equal(boundary(s), ref)


def test_volume_examples():
    g = np.zeros((10, 10), bool)
    g[:2, :5] = True
    assert volume_metrics(g, g) == (0, 1)
    s = np.zeros_like(g)
    s[:4, :5] = True
    avd, vs = volume_metrics(s, g)
    assert avd == 1 and vs == pytest.approx(2 / 3, abs=1e-15)
    with pytest.raises(ConfigError):
        volume_metrics(s, np.zeros_like(g))


@given(st.integers(0, 10_000))
def test_volume_counting_oracle(seed):
    s, t = random_masks(seed)
    a, b = int(s.sum()), int(t.sum())
    avd, vs = volume_metrics(s, t)
    assert avd == pytest.approx(abs(a - b) / b) and vs == pytest.approx(1 - abs(a - b) / (a + b))


def image(seed, shape=(32, 32)):
    g = np.random.default_rng(seed)
    yy, xx = np.mgrid[:shape[0], :shape[1]]
    base = 80 + 60 * np.sin(xx / 5.0) * np.cos(yy / 7.0)
    return np.clip(base + g.normal(0, 10, shape), 0, 200)


def ssim_oracle(x, y, L, w=8):
    k1, k2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    k3 = k2 / 2
    vals = []
    for i in range(x.shape[0] - w + 1):
        for j in range(x.shape[1] - w + 1):
            a, b = x[i:i + w, j:j + w], y[i:i + w, j:j + w]
            ma, mb = a.mean(), b.mean()
            sa, sb = a.std(), b.std()
            sab = ((a - ma) * (b - mb)).mean()
            lum = (2 * ma * mb + k1) / (ma ** 2 + mb ** 2 + k1)
            con = (2 * sa * sb + k2) / (sa ** 2 + sb ** 2 + k2)
            st_ = (sab + k3) / (sa * sb + k3)
            vals.append(lum * con * st_)
    return float(np.mean(vals))


def test_enhancement_identity():
    a = image(0)
    m = enhancement_metrics(a, a)
    assert m.ambe == 0 and m.ssim == pytest.approx(1, abs=1e-12) and m.psnr == math.inf
    assert psnr(a, a) == math.inf


def test_ambe_constant_shift():
    a = image(1)
    L = a.max() - a.min()
    assert ambe(a, a + 12.5) == pytest.approx(12.5 / L, abs=1e-12)
    assert enhancement_metrics(a, a + 12.5, do_remap=False).ambe == pytest.approx(12.5 / L, abs=1e-12)
    # the range remap removes a pure shift
    assert np.allclose(remap(a + 12.5, a), a)


def test_ssim_reference_pair():
    a = image(2)
    b = np.clip(0.7 * a + 30 + np.random.default_rng(5).normal(0, 8, a.shape), 0, 255)
    L = a.max() - a.min()
    assert ssim(a, b, L) == pytest.approx(ssim_oracle(a, b, L), abs=1e-6)


@given(st.integers(0, 10_000))
def test_ssim_properties(seed):
    g = np.random.default_rng(seed)
    a = image(seed, (16, 16))
    b = np.clip(a + g.normal(0, 15, a.shape), 0, 255)
    assert ssim(a, b, 200) == pytest.approx(ssim(b, a, 200), abs=1e-12)
    assert -1 <= ssim(a, b, 200) <= 1
    assert ssim(a, a, 200) == pytest.approx(1, abs=1e-12)
    # a joint shift leaves the contrast-structure term unchanged; the
    # luminance ratio is not shift invariant and is checked only for sign
    c = float(g.uniform(10, 50))
    l1, cs1 = ssim_terms(a, b, 200)
    l2, cs2 = ssim_terms(a + c, b + c, 200)
    assert np.abs(cs1 - cs2).max() <= 1e-6
    assert (l2 >= l1 - 1e-12).all()
    assert ssim(a, b, 200) == pytest.approx(ssim_oracle(a, b, 200), abs=1e-6)


def test_psnr_uses_observed_maximum():
    a = np.array([[0.0, 100.0], [50.0, 20.0]])
    b = a + np.array([[1.0, -1.0], [1.0, -1.0]])
    assert psnr(a, b) == pytest.approx(10 * math.log10(100 ** 2 / 1.0))


def test_pearson_examples():
    x = np.array([1.0, 2.5, 3.0, 7.0])
    assert pearson(x, x) == 1
    assert pearson(x, -x) == -1
    with pytest.raises(ConfigError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ConfigError):
        pearson([1, 2], [2, 1])


@given(st.integers(0, 10_000))
def test_pearson_oracle(seed):
    g = np.random.default_rng(seed)
    x, y = g.normal(size=10), g.normal(size=10)
    mx, my = sum(x) / 10, sum(y) / 10
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    den = math.sqrt(sum((a - mx) ** 2 for a in x) * sum((b - my) ** 2 for b in y))
    assert abs(pearson(x, y) - num / den) <= 1e-12
