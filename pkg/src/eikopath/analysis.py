"""Verification harness: observables along geodesics, eikonal residuals,
perturbation-rate sweeps and derivative-scaling sweeps for ``S``."""
from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metric as mt
from .errors import DomainError, EikopathError
from .pathspace import DiscretePath, hp_norm
from .solver import minimize_energy

log = logging.getLogger(__name__)

FD_STEPS = {1: 1e-3, 2: 1e-2, 3: 3e-2}


def parallel_map(func, items, workers=1):
    """Ordered map, threaded when ``workers > 1``."""
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(func, items))


def reference_metric(G):
    """Metric used for the observables: the unperturbed base if there is one."""
    return G.base if G.base is not None else G


# --------------------------------------------------------------------------
# observables
# --------------------------------------------------------------------------
def observables(G, gamma, gamma_dot):
    """``A = gamma'.gamma_hat / |gamma'|_G`` and ``B = gamma'_hat . gamma_hat``.

    Returns ``(A, B, |gamma|, |gamma'|, |gamma'|_G)``, batched over leading axes.
    """
    gamma = np.asarray(gamma, dtype=float)
    v = np.asarray(gamma_dot, dtype=float)
    r = np.linalg.norm(gamma, axis=-1)
    speed = np.linalg.norm(v, axis=-1)
    speed_G = np.sqrt(np.einsum("...i,...ij,...j->...", v, G(gamma), v))
    radial = np.einsum("...i,...i->...", v, gamma) / r
    return radial / speed_G, radial / speed, r, speed, speed_G


@dataclass
class ObservableTrace:
    s: np.ndarray
    A: np.ndarray
    B: np.ndarray
    gamma_norm: np.ndarray
    speed: np.ndarray
    speed_G: np.ndarray
    violations: list = field(default_factory=list)

    def bounded(self, tol=1e-12):
        return bool(np.all(self.A**2 <= 1 + tol) and np.all(self.B**2 <= 1 + tol))

    def to_dict(self):
        return {"n": int(len(self.s)), "A_min": float(self.A.min()), "A_max": float(self.A.max()),
                "B_min": float(self.B.min()), "B_max": float(self.B.max()),
                "violations": self.violations}


def observable_trace(G, traj):
    """Observables along an integrated geodesic (samples with ``s > 0``).

    For perturbed metrics they are computed with the unperturbed base metric.
    A passage through the origin at ``s > 0`` is reported as a violation.
    """
    ref = reference_metric(G)
    s = np.asarray(traj.s)
    gam = np.asarray(traj.gamma)
    gd = np.asarray(traj.gamma_dot)
    r = np.linalg.norm(gam, axis=-1)
    violations = []
    zero = np.flatnonzero(r[1:] == 0.0) + 1
    if zero.size:
        violations.append(f"geodesic returns to the origin at s={s[zero[0]]:.6g}")
    keep = r > 0
    A, B, rr, sp, spG = observables(ref, gam[keep], gd[keep])
    return ObservableTrace(s[keep], A, B, rr, sp, spG, violations)


@dataclass
class MonotonicityReport:
    c_bar: float
    slack: float
    min_increment: float
    monotone: bool
    min_margin: float
    inequality_holds: bool
    n_checked: int

    def to_dict(self):
        return dict(self.__dict__)


def monotonicity_check(trace, c_bar, slack=None, tol=1e-6):
    """Check that ``A`` is nondecreasing (up to ``slack``, default ``10/N``) and
    that ``A' >= c_bar |gamma'|_G / |gamma| (1 - A^2)`` at interior samples,
    with ``A'`` from central differences."""
    n = len(trace.s)
    if slack is None:
        slack = 10.0 / max(n - 1, 1)
    inc = np.diff(trace.A)
    min_inc = float(inc.min()) if inc.size else 0.0
    s = trace.s
    dA = (trace.A[2:] - trace.A[:-2]) / (s[2:] - s[:-2])
    rhs = c_bar * trace.speed_G[1:-1] / trace.gamma_norm[1:-1] * (1.0 - trace.A[1:-1] ** 2)
    margin = dA - rhs
    min_margin = float(margin.min()) if margin.size else 0.0
    return MonotonicityReport(float(c_bar), float(slack), min_inc, bool(min_inc >= -slack),
                              min_margin, bool(min_margin >= -tol), int(margin.size))


@dataclass
class StaticInequalityReport:
    n_samples: int
    a: float
    b: float
    max_A2: float
    max_B2: float
    violations_bound: int
    violations_upper: int
    violations_lower: int

    @property
    def ok(self):
        return self.violations_bound == self.violations_upper == self.violations_lower == 0

    def to_dict(self):
        out = dict(self.__dict__)
        out["ok"] = self.ok
        return out


def static_inequalities(G, n_samples=10_000, seed=0, r_range=(1e-2, 1e3), tol=1e-12):
    """``A^2, B^2 <= 1``, ``b (1 - B^2) >= 1 - A^2`` and ``(1 - A^2)/a >= 1 - B^2`` on
    random ``(gamma, gamma')`` pairs, with ``(a, b)`` widened to contain 1
    and the sampled spectrum."""
    ref = reference_metric(G)
    d = ref.dim
    rng = np.random.default_rng(seed)
    om = rng.normal(size=(n_samples, d))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(r_range[0]), np.log(r_range[1]), n_samples))
    gam = r[:, None] * om
    v = rng.normal(size=(n_samples, d)) * np.exp(rng.uniform(-3, 3, n_samples))[:, None]
    a_est, b_est = mt.ellipticity_estimate(ref, gam)
    a = min(1.0, a_est, ref.a if ref.a is not None else a_est)
    b = max(1.0, b_est, ref.b if ref.b is not None else b_est)
    A, B, *_ = observables(ref, gam, v)
    one_a, one_b = 1.0 - A**2, 1.0 - B**2
    return StaticInequalityReport(
        n_samples, a, b, float((A**2).max()), float((B**2).max()),
        int(np.sum((A**2 > 1 + tol) | (B**2 > 1 + tol))),
        int(np.sum(b * one_b < one_a - tol)),
        int(np.sum(one_a / a < one_b - tol)))


# --------------------------------------------------------------------------
# S and its derivatives
# --------------------------------------------------------------------------
def s_function(G, x, **solver_kw):
    """``s(x) = S(x)/|x| - 1``."""
    x = np.asarray(x, dtype=float)
    nx = float(np.linalg.norm(x))
    if nx == 0.0:
        raise DomainError("s(x) undefined at x = 0")
    return minimize_energy(G, x, **solver_kw).S / nx - 1.0


_STENCILS = {
    0: ((0,), (1.0,)),
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    3: ((-2, -1, 1, 2), (-0.5, 1.0, -1.0, 0.5)),
}


def multi_indices(d, order):
    return [tuple(int(k) for k in np.bincount(c, minlength=d))
            for c in itertools.combinations_with_replacement(range(d), order)]


def fd_stencil(alpha):
    """Offsets (in steps) and weights of the nested central difference for
    ``d^alpha``; divide by ``h^|alpha|``."""
    parts = [_STENCILS[m] for m in alpha]
    points, weights = [], []
    for combo in itertools.product(*[list(zip(*p)) for p in parts]):
        points.append(tuple(c[0] for c in combo))
        weights.append(float(np.prod([c[1] for c in combo])))
    return np.array(points, dtype=float), np.array(weights)


class _CachedDistance:
    """``S`` at stencil points around one base point, warm-started from the
    base minimizer."""

    def __init__(self, G, x, solver_kw):
        self.G, self.x = G, np.asarray(x, dtype=float)
        self.kw = dict(solver_kw)
        self.base = minimize_energy(G, self.x, **self.kw)
        self.cache = {}

    def solution(self, offset, h):
        key = (tuple(np.round(offset, 12)), h)
        if key not in self.cache:
            if not np.any(offset):
                self.cache[key] = self.base
            else:
                self.cache[key] = minimize_energy(self.G, self.x + h * offset,
                                                  init=self.base.kappa, **self.kw)
        return self.cache[key]

    def derivative(self, alpha, h, value=lambda sol: sol.S):
        pts, w = fd_stencil(alpha)
        vals = np.array([value(self.solution(p, h)) for p in pts])
        order = int(sum(alpha))
        est = float(w @ vals / h**order)
        noise = float(np.abs(w) @ np.abs(vals)) * 1e-13 / h**order
        return est, noise


# --------------------------------------------------------------------------
# eikonal residual
# --------------------------------------------------------------------------
@dataclass
class EikonalScan:
    points: np.ndarray
    residual: np.ndarray
    S: np.ndarray
    N: int

    @property
    def max_residual(self):
        return float(np.max(self.residual))

    def to_dict(self):
        return {"n_points": int(len(self.points)), "max_residual": self.max_residual, "N": self.N}

    def grid(self):
        return np.column_stack([self.points, self.S, self.residual])


def eikonal_residual_scan(G, points, N=256, tol=1e-10, workers=1):
    """``|grad S G^-1 grad S - 1|`` at each point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if np.any(np.linalg.norm(points, axis=1) == 0.0):
        raise DomainError("lattice must exclude the origin")

    def one(x):
        sol = minimize_energy(G, x, N=N, tol=tol)
        g = sol.grad_S
        return abs(float(g @ np.linalg.solve(G(x), g)) - 1.0), sol.S

    out = parallel_map(one, points, workers)
    return EikonalScan(points, np.array([o[0] for o in out]), np.array([o[1] for o in out]), N)


# --------------------------------------------------------------------------
# perturbation sweep
# --------------------------------------------------------------------------
def perturbation_shape(name, d=2, lattice=None):
    """Unit-seminorm perturbation fields: ``"bump"`` (compact, anisotropic) or
    ``"tail"`` (decaying like ``<x>^-1/2``)."""
    if name == "bump":
        center = np.zeros(d)
        center[0], center[1] = 1.5, 0.5
        M = np.diag(np.linspace(1.0, -0.6, d))
        M[0, 1] = M[1, 0] = 0.4
        raw = mt.CompactBump(center, 2.0, M)
    elif name == "tail":
        M = np.diag(np.linspace(0.3, -0.2, d))
        M[0, 1] = M[1, 0] = 0.5
        raw = mt.TailField(M, beta=0.25)
    else:
        raise ValueError(f"unknown perturbation shape {name!r}")
    probe = mt.MetricField(raw, "analytic", 3)
    norm = mt.seminorm(probe, lattice or mt.LogRadialLattice(d)).estimate
    return mt.ScaledField(raw, 1.0 / norm)


def default_x_lattice(d=2, radii=(1.0, 3.0, 10.0, 30.0, 100.0), n_dirs=4, offset=0.3):
    ang = 2 * np.pi * np.arange(n_dirs) / n_dirs + offset
    dirs = np.zeros((n_dirs, d))
    dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
    return (np.asarray(radii)[:, None, None] * dirs[None]).reshape(-1, d)


@dataclass
class StabilityReport:
    eps: list
    sup_s: list
    sup_ds: list
    sup_d2s: list
    slopes: dict
    ratios: dict
    grid: dict
    failures: list

    def to_dict(self):
        return {"eps": self.eps, "sup_s": self.sup_s, "sup_ds": self.sup_ds,
                "sup_d2s": self.sup_d2s, "slopes": self.slopes,
                "ratios": self.ratios, "failures": self.failures}


RATE_EXPONENTS = {"s": 1.0, "ds": 0.75, "d2s": 0.5}


def loglog_slope(eps, values):
    eps, values = np.asarray(eps, float), np.asarray(values, float)
    if np.any(values <= 0) or len(eps) < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


def perturbation_sweep(G, delta, eps_list, x_lattice=None, N=256, tol=1e-10, workers=1):
    """Sup of ``|s|``, ``|x||ds|`` and ``|x|^2|d^2 s|`` over a lattice for
    ``G + eps delta``, and their log-log slopes in ``eps``.

    Derivatives use nested central differences with steps ``1e-3|x|`` and
    ``1e-2|x|``.  Solver failures are recorded per point; the sweep continues.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps values must be strictly decreasing")
    if x_lattice is None:
        x_lattice = default_x_lattice(G.dim)
    x_lattice = np.atleast_2d(np.asarray(x_lattice, dtype=float))
    d = G.dim
    kw = {"N": N, "tol": tol}
    sup_s, sup_ds, sup_d2s, failures, grid = [], [], [], [], {}
    first = multi_indices(d, 1)
    second = multi_indices(d, 2)

    for eps in eps_list:
        G_eps = mt.perturbed(G, delta, eps) if eps != 0.0 else G

        def point(x):
            nx = float(np.linalg.norm(x))
            try:
                c1 = _CachedDistance(G_eps, x, kw)
                # s = S/|x| - 1 at each stencil point
                sval = lambda sol: sol.S / np.linalg.norm(sol.x) - 1.0  # noqa: E731
                s0 = sval(c1.base)
                g = [c1.derivative(a, FD_STEPS[1] * nx, sval)[0] for a in first]
                c2 = _CachedDistance.__new__(_CachedDistance)
                c2.G, c2.x, c2.kw, c2.base, c2.cache = G_eps, c1.x, c1.kw, c1.base, {}
                h2 = [c2.derivative(a, FD_STEPS[2] * nx, sval)[0] for a in second]
                return s0, nx * max(abs(v) for v in g), nx**2 * max(abs(v) for v in h2), None
            except EikopathError as err:
                return np.nan, np.nan, np.nan, f"eps={eps:g} x={np.asarray(x).tolist()}: {err}"

        res = parallel_map(point, x_lattice, workers)
        vals = np.array([r[:3] for r in res], dtype=float)
        failures += [r[3] for r in res if r[3]]
        grid[eps] = vals
        sup_s.append(float(np.nanmax(np.abs(vals[:, 0]))))
        sup_ds.append(float(np.nanmax(vals[:, 1])))
        sup_d2s.append(float(np.nanmax(vals[:, 2])))

    pos = [i for i, e in enumerate(eps_list) if e > 0]
    e_pos = [eps_list[i] for i in pos]
    slopes, ratios = {}, {}
    for key, vals in (("s", sup_s), ("ds", sup_ds), ("d2s", sup_d2s)):
        v = [vals[i] for i in pos]
        slopes[key] = loglog_slope(e_pos, v)
        ratios[key] = [vi / ei ** RATE_EXPONENTS[key] for vi, ei in zip(v, e_pos)]
    return StabilityReport(eps_list, sup_s, sup_ds, sup_d2s, slopes, ratios, grid, failures)


# --------------------------------------------------------------------------
# derivative scaling
# --------------------------------------------------------------------------
@dataclass
class ScalingReport:
    radii: list
    directions: np.ndarray
    max_order: int
    S_scaled: dict          # order -> array over radii (sup over directions and alpha)
    S2_scaled: dict
    kappa_scaled: dict      # order -> array over radii of ||d^alpha kappa||_H <x>^(|alpha|-1)
    flagged: list

    def variation(self, table):
        out = {}
        for k, arr in table.items():
            arr = np.asarray(arr, dtype=float)
            good = arr[np.isfinite(arr) & (arr > 0)]
            out[k] = float(good.max() / good.min()) if good.size else float("nan")
        return out

    def to_dict(self):
        return {"radii": list(self.radii), "max_order": self.max_order,
                "S_scaled": {k: np.asarray(v).tolist() for k, v in self.S_scaled.items()},
                "S2_scaled": {k: np.asarray(v).tolist() for k, v in self.S2_scaled.items()},
                "kappa_scaled": {k: np.asarray(v).tolist() for k, v in self.kappa_scaled.items()},
                "S_variation": self.variation(self.S_scaled),
                "S2_variation": self.variation(self.S2_scaled),
                "flagged": self.flagged}


def derivative_scaling_sweep(G, radii, directions=None, max_order=3, N=256, tol=1e-10,
                             workers=1):
    """Tabulate ``<x>^(|alpha|-1) |d^alpha S|`` and ``<x>^(|alpha|-2) |d^alpha S^2|``
    (sup over ``|alpha| = m`` and the directions) for ``m <= max_order``, and
    ``<x>^(|alpha|-1) ||d^alpha kappa_x||_H`` for ``m <= 2``.

    Entries whose difference quotient is below ten times its rounding-noise
    estimate are flagged and left out of the supremum.
    """
    radii = [float(r) for r in radii]
    if min(radii) < 1.0:
        raise ValueError("radii must lie in [1, inf)")
    if max_order > 3:
        raise ValueError("max_order must be at most 3")
    d = G.dim
    if directions is None:
        ang = np.array([0.3, 1.9])
        directions = np.zeros((len(ang), d))
        directions[:, 0], directions[:, 1] = np.cos(ang), np.sin(ang)
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    kw = {"N": N, "tol": tol}
    tasks = [(r, om) for r in radii for om in directions]

    def one(task):
        r, om = task
        x = r * om
        br = np.sqrt(1.0 + r * r)
        cache = {m: None for m in range(1, max_order + 1)}
        out_S, out_S2, out_k, flags = {}, {}, {}, []
        base = None
        for m in range(1, max_order + 1):
            c = _CachedDistance.__new__(_CachedDistance) if base is not None else _CachedDistance(G, x, kw)
            if base is not None:
                c.G, c.x, c.kw, c.base, c.cache = G, np.asarray(x, float), kw, base, {}
            base = c.base
            cache[m] = c
            h = FD_STEPS[m] * r
            best_S = best_S2 = 0.0
            for alpha in multi_indices(d, m):
                vS, nS = c.derivative(alpha, h)
                vS2, nS2 = c.derivative(alpha, h, value=lambda sol: sol.S**2)
                if abs(vS) > 10 * nS:
                    best_S = max(best_S, br ** (m - 1) * abs(vS))
                elif nS > 0:
                    flags.append(f"x={x.tolist()} alpha={alpha}: S difference below noise")
                if abs(vS2) > 10 * nS2:
                    best_S2 = max(best_S2, br ** (m - 2) * abs(vS2))
                elif nS2 > 0:
                    flags.append(f"x={x.tolist()} alpha={alpha}: S^2 difference below noise")
            out_S[m], out_S2[m] = best_S, best_S2
            if m <= 2:
                best_k = 0.0
                for alpha in multi_indices(d, m):
                    pts, w = fd_stencil(alpha)
                    vals = np.array([c.solution(p, h).kappa.values for p in pts])
                    dk = np.tensordot(w, vals, axes=(0, 0)) / h**m
                    dk[0] = dk[-1] = 0.0
                    best_k = max(best_k, br ** (m - 1) * hp_norm(DiscretePath(dk), 2.0))
                out_k[m] = best_k
        return out_S, out_S2, out_k, flags

    res = parallel_map(one, tasks, workers)
    nd = len(directions)
    S_scaled, S2_scaled, k_scaled, flagged = {}, {}, {}, []
    for m in range(1, max_order + 1):
        S_scaled[m] = [max(res[i * nd + j][0][m] for j in range(nd)) for i in range(len(radii))]
        S2_scaled[m] = [max(res[i * nd + j][1][m] for j in range(nd)) for i in range(len(radii))]
        if m <= 2:
            k_scaled[m] = [max(res[i * nd + j][2][m] for j in range(nd)) for i in range(len(radii))]
    for r in res:
        flagged += r[3]
    return ScalingReport(radii, directions, max_order, S_scaled, S2_scaled, k_scaled, flagged)
