"""2D affine registration: joint histograms, MI/NMI, resampling and particle swarm search."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage as ndi

from .errors import AlgorithmError, ConfigError
from .imgcore import as_float

PARAM_NAMES = ("tx", "ty", "rot", "sx", "sy", "shear")


@dataclass(frozen=True)
class AffineTransform2D:
    """x' = c + R(rot) Sh(shear) S(sx, sy) (x - c) + t, points as (x, y)."""

    tx: float = 0.0
    ty: float = 0.0
    rot: float = 0.0
    sx: float = 1.0
    sy: float = 1.0
    shear: float = 0.0
    center: tuple | None = None  # (x, y); None = image centre

    def __post_init__(self):
        if not (self.sx > 0 and self.sy > 0):
            raise ConfigError("scales must be positive")

    @classmethod
    def from_params(cls, p, center=None):
        return cls(*map(float, p), center=center)

    @property
    def params(self):
        return np.array([self.tx, self.ty, self.rot, self.sx, self.sy, self.shear])

    def is_identity(self):
        return np.array_equal(self.params, [0, 0, 0, 1, 1, 0])

    def linear(self):
        c, s = math.cos(self.rot), math.sin(self.rot)
        R = np.array([[c, -s], [s, c]])
        Sh = np.array([[1.0, self.shear], [0.0, 1.0]])
        return R @ Sh @ np.diag([self.sx, self.sy])

    def resolve_center(self, shape):
        if self.center is not None:
            return np.asarray(self.center, float)
        return np.array([(shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0])

    def matrix(self, shape=None):
        A = self.linear()
        c = self.resolve_center(shape) if (shape is not None or self.center is not None) else np.zeros(2)
        M = np.eye(3)
        M[:2, :2] = A
        M[:2, 2] = c - A @ c + [self.tx, self.ty]
        return M


def _source_coords(shape, T: AffineTransform2D):
    A = T.linear()
    if abs(np.linalg.det(A)) < 1e-12:
        raise ConfigError("singular transform")
    Ainv = np.linalg.inv(A)
    c = T.resolve_center(shape)
    H, W = shape
    yy, xx = np.mgrid[:H, :W].astype(float)
    qx = xx - c[0] - T.tx
    qy = yy - c[1] - T.ty
    px = Ainv[0, 0] * qx + Ainv[0, 1] * qy + c[0]
    py = Ainv[1, 0] * qx + Ainv[1, 1] * qy + c[1]
    return py, px


_ORDERS = {"nearest": 0, "bilinear": 1, "cubic": 3, "cubic-spline": 3}


def apply_transform(img, T: AffineTransform2D, interp="bilinear", return_valid=False):
    """Inverse-mapped resampling; samples falling outside the input are 0."""
    a = as_float(img)
    if interp not in _ORDERS:
        raise ConfigError(f"unknown interpolation {interp!r}")
    if T.is_identity():
        out = a.copy()
        return (out, np.ones(a.shape, bool)) if return_valid else out
    py, px = _source_coords(a.shape, T)
    out = ndi.map_coordinates(a, [py, px], order=_ORDERS[interp], mode="constant", cval=0.0)
    if not return_valid:
        return out
    H, W = a.shape
    valid = (py >= -0.5) & (py <= H - 0.5) & (px >= -0.5) & (px <= W - 0.5)
    return out, valid


# ---------------------------------------------------------------- similarity

def _bin(a, bins, rng):
    lo, hi = rng if rng is not None else (a.min(), a.max())
    if hi <= lo:
        return np.zeros(a.shape, np.int64)
    return np.clip(((a - lo) / (hi - lo) * bins).astype(np.int64), 0, bins - 1)


def joint_histogram(A, B, bins=32, mask=None, ranges=(None, None)):
    """bins x bins count table of co-occurring (A, B) bin pairs (rows index A)."""
    a, b = as_float(A), as_float(B)
    if a.shape != b.shape:
        raise ConfigError("images differ in shape")
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    if mask is not None:
        m = np.asarray(mask, bool)
        a, b = a[m], b[m]
    else:
        a, b = a.ravel(), b.ravel()
    if a.size == 0:
        raise ConfigError("empty overlap")
    ia, ib = _bin(a, bins, ranges[0]), _bin(b, bins, ranges[1])
    return np.bincount(ia * bins + ib, minlength=bins * bins).reshape(bins, bins)


def _entropy(counts, total):
    # correctly rounded sum: equal multisets of terms give equal entropies
    c = np.asarray(counts, float)[np.asarray(counts) > 0].ravel()
    p = c / total
    return -math.fsum(p * np.log(p))


def _entropies(table, smooth=False):
    t = np.asarray(table, float)
    if smooth:
        t = ndi.gaussian_filter(t, 1.0, mode="constant")
    N = t.sum()
    if N <= 0:
        raise ConfigError("empty joint histogram")
    return _entropy(t.sum(1), N), _entropy(t.sum(0), N), _entropy(t, N)


def mutual_information(A, B, bins=32, mask=None, smooth=False, ranges=(None, None)):
    """I(A, B) = H(A) + H(B) - H(A, B) in nats."""
    ha, hb, hab = _entropies(joint_histogram(A, B, bins, mask, ranges), smooth)
    return ha + hb - hab


def normalized_mi(A, B, bins=32, mask=None, smooth=False, ranges=(None, None)):
    """(H(A) + H(B)) / H(A, B)."""
    ha, hb, hab = _entropies(joint_histogram(A, B, bins, mask, ranges), smooth)
    if hab <= 0:
        raise ConfigError("joint entropy is zero (both images constant)")
    return (ha + hb) / hab


# ---------------------------------------------------------------- PSO

VARIANTS = ("standard", "init", "constriction", "hybrid", "decay")


@dataclass(frozen=True)
class PsoConfig:
    lower: tuple = (-10.0,)
    upper: tuple = (10.0,)
    n_particles: int = 30
    w: float = 0.7298
    c_soc: float = 1.49618
    c_cog: float = 1.49618
    c_ret: float = 0.5
    chi: bool = False
    kappa: float = 1.0
    p_c: float = 0.2
    t_max: int = 200
    t_no_improve: int = 20
    eps: float = 1e-9
    v_max_frac: float = 0.2
    variant: str = "standard"
    x_init: tuple | None = None
    subpops: int = 0  # k-means groups for hybrid crossover, 0 = off
    p_sp_c: float = 0.8
    seed: int = 0

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(lo > hi):
            raise ConfigError("bounds must be equal-length with lower <= upper")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown PSO variant {self.variant!r}")
        if self.n_particles < 1 or self.t_max < 0 or self.t_no_improve < 1:
            raise ConfigError("bad particle or iteration counts")
        if not 0 <= self.kappa <= 1 or not 0 <= self.p_c <= 1:
            raise ConfigError("kappa and p_c must lie in [0, 1]")
        if self.use_chi:
            if self.phi <= 4:
                raise ConfigError("constriction needs phi > 4")
            if min(self.c_soc, self.c_cog, self.c_ret) < 0:
                raise ConfigError("acceleration constants must be >= 0")
        elif not (0 <= self.c_soc <= 2 and 0 <= self.c_cog <= 2):
            raise ConfigError("c_soc and c_cog must lie in [0, 2]")
        if self.x_init is not None and len(self.x_init) != lo.size:
            raise ConfigError("x_init length differs from the bounds")

    @property
    def dim(self):
        return len(self.lower)

    @property
    def use_chi(self):
        return self.chi or self.variant == "constriction"

    @property
    def uses_ret(self):
        return self.variant in ("init", "decay")

    @property
    def phi(self):
        return self.c_cog + self.c_soc + (self.c_ret if self.uses_ret else 0.0)

    @property
    def chi_value(self):
        phi = self.phi
        # complex modulus: equals kappa for phi <= 4
        return 2 * self.kappa / abs(2 - phi - np.sqrt(complex(phi * phi - 4 * phi)))


@dataclass
class PsoTrace:
    best_values: list = field(default_factory=list)
    best_positions: list = field(default_factory=list)
    iterations: int = 0
    stopped: str = ""


def _damp(x, v, lo, hi, rng):
    """Random bounce back inside the box; the velocity is reversed and damped."""
    over, under = x > hi, x < lo
    if over.any() or under.any():
        r = rng.random(x.shape)
        x = np.where(over, hi - r * (x - hi), x)
        x = np.where(under, lo + r * (lo - x), x)
        v = np.where(over | under, -r * v, v)
        x = np.clip(x, lo, hi)
    return x, v


def _crossover(x, v, cfg, rng, lo, hi):
    N = x.shape[0]
    pick = np.flatnonzero(rng.random(N) < cfg.p_c)
    if pick.size < 2:
        return x, v
    if cfg.subpops > 1 and N >= cfg.subpops:
        from scipy.cluster.vq import kmeans2
        span = np.where(hi > lo, hi - lo, 1.0)
        _, grp = kmeans2((x - lo) / span, cfg.subpops, minit="++", seed=rng)
        order = []
        rest = list(pick)
        while len(rest) >= 2:
            i = rest.pop(0)
            same = [j for j in rest if grp[j] == grp[i]]
            other = [j for j in rest if grp[j] != grp[i]]
            pool = same if (same and (rng.random() < cfg.p_sp_c or not other)) else (other or same)
            j = pool[0]
            rest.remove(j)
            order.append((i, j))
    else:
        pick = rng.permutation(pick)
        order = [(pick[k], pick[k + 1]) for k in range(0, pick.size - 1, 2)]
    x, v = x.copy(), v.copy()
    for i, j in order:
        p = rng.random()
        xi, xj = x[i].copy(), x[j].copy()
        x[i] = p * xi + (1 - p) * xj
        x[j] = p * xj + (1 - p) * xi
        s = v[i] + v[j]
        n = np.linalg.norm(s)
        if n > 0:
            ni, nj = np.linalg.norm(v[i]), np.linalg.norm(v[j])
            v[i], v[j] = ni * s / n, nj * s / n
    return x, v


def pso_optimize(objective, cfg: PsoConfig, callback=None, x0=None, v0=None):
    """Minimize ``objective`` over the box. Returns (g, f(g), trace).

    Velocities pull toward the swarm best, the personal best and, for the
    'init' and 'decay' variants, the initial orientation x_init.
    """
    lo, hi = np.asarray(cfg.lower, float), np.asarray(cfg.upper, float)
    D, N = lo.size, cfg.n_particles
    rng = np.random.default_rng(cfg.seed)
    xrng = np.random.default_rng([cfg.seed, 1])  # crossover stream
    vmax = cfg.v_max_frac * (hi - lo)
    x_init = np.asarray(cfg.x_init, float) if cfg.x_init is not None else (lo + hi) / 2
    x = lo + rng.random((N, D)) * (hi - lo)
    if cfg.uses_ret:
        x[0] = np.clip(x_init, lo, hi)
    v = (2 * rng.random((N, D)) - 1) * vmax
    if x0 is not None:
        x = np.clip(np.array(x0, float).reshape(N, D), lo, hi)
    if v0 is not None:
        v = np.array(v0, float).reshape(N, D)
    f = np.array([objective(p) for p in x], float)
    b, fb = x.copy(), f.copy()
    k = int(np.argmin(fb))
    g, fg = b[k].copy(), float(fb[k])
    chi = cfg.chi_value if cfg.use_chi else 1.0
    c_soc, c_ret = cfg.c_soc, cfg.c_ret
    dphi = cfg.c_ret / cfg.t_max if (cfg.variant == "decay" and cfg.t_max > 0) else 0.0
    trace = PsoTrace([fg], [g.copy()])
    stale = 0
    for t in range(1, cfg.t_max + 1):
        r1, r2 = rng.random((N, D)), rng.random((N, D))
        vel = cfg.w * v + c_soc * r1 * (g - x) + cfg.c_cog * r2 * (b - x)
        if cfg.uses_ret:
            vel += c_ret * rng.random((N, D)) * (x_init - x)
        v = np.clip(chi * vel, -vmax, vmax)
        x = x + v
        x, v = _damp(x, v, lo, hi, rng)
        if cfg.variant == "hybrid" and cfg.p_c > 0:
            x, v = _crossover(x, v, cfg, xrng, lo, hi)
            x = np.clip(x, lo, hi)
        f = np.array([objective(p) for p in x], float)
        better = f < fb
        b[better], fb[better] = x[better], f[better]
        k = int(np.argmin(fb))
        improved = False
        if fb[k] < fg:
            improved = np.linalg.norm(b[k] - g) >= cfg.eps
            g, fg = b[k].copy(), float(fb[k])
        stale = 0 if improved else stale + 1
        if dphi:
            c_soc, c_ret = max(c_soc - dphi, 0.0), max(c_ret - dphi, 0.0)
        trace.best_values.append(fg)
        trace.best_positions.append(g.copy())
        trace.iterations = t
        if callback is not None:
            callback(t, x, g, fg)
        if stale >= cfg.t_no_improve:
            trace.stopped = "stagnation"
            break
    else:
        trace.stopped = "t_max"
    return g, fg, trace


def _golden(f, a, c, tol=1e-4, max_iter=60):
    r = (math.sqrt(5) - 1) / 2
    x1, x2 = c - r * (c - a), a + r * (c - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(max_iter):
        if abs(c - a) <= tol:
            break
        if f1 <= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - r * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + r * (c - a)
            f2 = f(x2)
    return (x1, f1) if f1 <= f2 else (x2, f2)


def coordinate_descent(objective, x0, lower, upper, step, tol=1e-6, max_cycles=20):
    """Cyclic golden-section line searches along each axis with shrinking brackets."""
    x = np.asarray(x0, float).copy()
    lo, hi = np.asarray(lower, float), np.asarray(upper, float)
    step = np.asarray(step, float).copy()
    fx = float(objective(x))
    for _ in range(max_cycles):
        f_start = fx
        for d in range(x.size):
            if hi[d] <= lo[d] or step[d] <= 0:
                continue
            a, c = max(lo[d], x[d] - step[d]), min(hi[d], x[d] + step[d])

            def line(s, d=d):
                y = x.copy()
                y[d] = s
                return objective(y)

            s, fs = _golden(line, a, c, tol=step[d] * 1e-3)
            if fs < fx:
                x[d], fx = s, float(fs)
        step *= 0.5
        if f_start - fx <= tol:
            break
    return x, fx


# ---------------------------------------------------------------- registration

DEFAULT_LOWER = (-20.0, -20.0, -math.radians(20), 0.95, 0.95, -0.05)
DEFAULT_UPPER = (20.0, 20.0, math.radians(20), 1.05, 1.05, 0.05)
REFINE_STEP = (1.0, 1.0, math.radians(1.0), 0.01, 0.01, 0.01)


def registration_config(**kw) -> PsoConfig:
    base = dict(lower=DEFAULT_LOWER, upper=DEFAULT_UPPER, n_particles=30, t_max=100,
                x_init=(0, 0, 0, 1, 1, 0))
    base.update(kw)
    return PsoConfig(**base)


@dataclass
class RegistrationResult:
    transform: AffineTransform2D
    value: float  # metric at the returned transform
    trace: PsoTrace


def registration_objective(moving, fixed, metric="MI", bins=32, smooth=True, interp="bilinear"):
    a, b = as_float(moving), as_float(fixed)
    if a.shape != b.shape:
        raise ConfigError("moving and fixed images differ in shape")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise AlgorithmError("cannot register a constant image")
    if metric not in ("MI", "NMI"):
        raise ConfigError("metric must be MI or NMI")
    ranges = ((a.min(), a.max()), (b.min(), b.max()))
    fn = mutual_information if metric == "MI" else normalized_mi

    def score(p):
        T = AffineTransform2D.from_params(p)
        w, valid = apply_transform(a, T, interp, return_valid=True)
        if valid.sum() < 16:
            return 0.0
        return fn(w, b, bins, valid, smooth, ranges)

    return score


def register(moving, fixed, metric="MI", cfg: PsoConfig | None = None, refine="coordinate-descent",
             bins=32, smooth=True, interp="bilinear") -> RegistrationResult:
    """Find T maximizing metric(apply_transform(moving, T), fixed)."""
    cfg = cfg or registration_config()
    if cfg.dim != 6:
        raise ConfigError("registration searches the 6 affine parameters")
    score = registration_objective(moving, fixed, metric, bins, smooth, interp)

    def obj(p):
        return -score(p)

    g, fg, trace = pso_optimize(obj, cfg)
    if refine == "coordinate-descent":
        g, fg = coordinate_descent(obj, g, cfg.lower, cfg.upper, REFINE_STEP)
    elif refine not in (None, "none"):
        raise ConfigError(f"unknown refinement {refine!r}")
    return RegistrationResult(AffineTransform2D.from_params(g), -fg, trace)


def format_transform(T: AffineTransform2D, shape=None) -> str:
    M = T.matrix(shape)
    lines = ["# affine 3x3 row-major, points (x, y)"]
    lines += [" ".join(f"{v:.12g}" for v in row) for row in M]
    lines.append("params " + " ".join(f"{v:.12g}" for v in T.params))
    if T.center is not None:
        lines.append("center " + " ".join(f"{v:.12g}" for v in T.center))
    return "\n".join(lines) + "\n"


def parse_transform(text) -> AffineTransform2D:
    params, center = None, None
    for ln in text.splitlines():
        ln = ln.strip()
        if ln.startswith("params"):
            params = [float(t) for t in ln.split()[1:]]
        elif ln.startswith("center"):
            center = tuple(float(t) for t in ln.split()[1:])
    if params is None or len(params) != 6:
        raise ConfigError("transform text lacks a 6-value params line")
    return AffineTransform2D.from_params(params, center)
