"""The thirteen named acceptance criteria.

Each criterion function returns a :class:`CriterionResult` carrying a
pass/fail flag, the measured quantities and the tolerance it was held to.
"""
from __future__ import annotations

import functools
import time
from dataclasses import dataclass, field

import numpy as np

from . import analysis as an
from . import examples as ex
from . import metric as mt
from . import pathspace as ps
from .errors import EikopathError
from .solver import (hessian_smallest_eigenvalue, integrate_batch, minimize_energy,
                     shoot_batch, _conservation_defect)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    summary: str
    details: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:02d} {self.name}: {self.summary}"

    def to_dict(self):
        return {"number": self.number, "name": self.name, "passed": self.passed,
                "summary": self.summary, "details": _jsonable(self.details),
                "elapsed": self.elapsed}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return _jsonable(obj.to_dict())
    return obj


# --------------------------------------------------------------------------
# built-in metrics
# --------------------------------------------------------------------------
@functools.lru_cache(maxsize=None)
def builtin_metrics():
    """The metrics the criteria run on, keyed by name."""
    mu1 = ex.build_induced_metric(ex.RadialPotential.decaying(mu=1.0))
    mu0 = ex.build_induced_metric(ex.RadialPotential.two_term())
    return {
        "euclidean": mt.euclidean(2),
        "euclidean-3d": mt.euclidean(3),
        "radial-bracket": mt.radial_block_metric(mt.BracketProfile(0.5, 0.5), 2,
                                                 name="radial-bracket"),
        "induced-mu1": mu1,
        "induced-mu0": mu0,
        "spiral": ex.build_spiral_metric(ex.SpiralConfig(eps=0.05)),
    }


@functools.lru_cache(maxsize=None)
def perturbed_metrics(eps=0.05):
    """Bump and tail perturbations of the mu = 1 induced metric."""
    base = builtin_metrics()["induced-mu1"]
    return {f"induced-mu1+{shape}": mt.perturbed(base, an.perturbation_shape(shape), eps)
            for shape in ("bump", "tail")}


O_METRICS = ("euclidean", "euclidean-3d", "radial-bracket", "induced-mu1", "induced-mu0")
SHOOTING_METRICS = ("euclidean", "euclidean-3d", "radial-bracket", "induced-mu1",
                    "induced-mu0", "spiral")


def _random_points(rng, n, d, r_lo, r_hi):
    om = rng.normal(size=(n, d))
    om /= np.linalg.norm(om, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(r_lo), np.log(r_hi), n))
    return r[:, None] * om


def _ellipticity(G, extra=None):
    pts = mt.LogRadialLattice(G.dim, 48, 16, r_min=1e-2, r_max=1e4).points()
    if extra is not None:
        pts = np.concatenate([pts, np.asarray(extra).reshape(-1, G.dim)])
    return mt.ellipticity_estimate(G, pts)


# --------------------------------------------------------------------------
# criteria
# --------------------------------------------------------------------------
def c01_euclidean_exactness(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    worst_S = worst_k = 0.0
    for d in (2, 3):
        G = mt.euclidean(d)
        for x in _random_points(rng, 100, d, 0.1, 100.0):
            init = ps.DiscretePath.from_interior(0.1 * rng.normal(size=(255, d)))
            sol = minimize_energy(G, x, init=init)
            nx = np.linalg.norm(x)
            worst_S = max(worst_S, abs(sol.S - nx) / nx)
            worst_k = max(worst_k, float(np.max(np.abs(sol.kappa.values))))
    ok = worst_S <= 1e-8 and worst_k <= 1e-8
    return ok, f"max rel |S-|x|| = {worst_S:.2e}, max |kappa| = {worst_k:.2e} (tol 1e-8)", \
        {"max_rel_S_error": worst_S, "max_kappa": worst_k}


def c02_radial_oracle(seed=0, workers=1):
    pot = ex.RadialPotential.decaying(mu=1.0)
    G = builtin_metrics()["induced-mu1"]
    rng = np.random.default_rng(seed)
    radii = np.geomspace(0.1, 1e3, 20)
    ang = rng.uniform(0, 2 * np.pi, 20)
    X = radii[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    Y = ex.Phi_inverse(G, X)

    def one(i):
        sol = minimize_energy(G, Y[i])
        oracle = ex.radial_eikonal_oracle(pot, radii[i])
        return abs(sol.S - oracle) / oracle

    errs = an.parallel_map(one, range(20), workers)
    worst = float(max(errs))
    return worst <= 1e-4, f"max rel error vs quadrature oracle = {worst:.2e} (tol 1e-4)", \
        {"radii": radii, "rel_errors": errs}


def c03_eikonal_residual(seed=0, workers=1):
    lat = mt.LogRadialLattice(2, 20, 10, r_min=1.0, r_max=100.0).points()
    out, worst = {}, 0.0
    for name in ("euclidean", "induced-mu1", "induced-mu0", "spiral"):
        scan = an.eikonal_residual_scan(builtin_metrics()[name], lat, workers=workers)
        out[name] = scan.max_residual
        worst = max(worst, scan.max_residual)
    return worst <= 1e-3, f"max eikonal residual over {len(lat)} points x 4 metrics = " \
        f"{worst:.2e} (tol 1e-3)", out


def c04_conservation(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    out, worst = {}, 0.0
    metrics = dict(builtin_metrics())
    metrics.update(perturbed_metrics())
    for name, G in metrics.items():
        d = G.dim
        # speeds up to the largest target distance used for shooting; RK4 at
        # 10^3 steps resolves the spiral cutoff annulus only up to about this
        V = _random_points(rng, 20, d, 0.1, 20.0)
        starts = np.concatenate([np.zeros((10, d)), _random_points(rng, 10, d, 0.1, 10.0)])
        _, ys, vs = integrate_batch(G, V, steps=1000, starts=starts)
        drift = float(np.max(_conservation_defect(G, ys, vs)))
        out[name] = drift
        worst = max(worst, drift)
    return worst <= 1e-8, f"max relative drift of the speed over {len(metrics)} metrics x 20 " \
        f"geodesics = {worst:.2e} (tol 1e-8)", out


def c05_minimizer_bounds(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    metrics = dict(builtin_metrics())
    metrics.update(perturbed_metrics())
    out, ok_all = {}, True
    for name, G in metrics.items():
        X = _random_points(rng, 10, G.dim, 0.5, 50.0)
        sols = an.parallel_map(lambda x, G=G: minimize_energy(G, x), X, workers)
        nodes = np.concatenate([s.nodes() for s in sols])
        a, b = _ellipticity(G, nodes)
        worst = 0.0
        for sol in sols:
            x2 = float(sol.x @ sol.x)
            y = sol.nodes()
            speed2 = np.sum((np.diff(y, axis=0) * sol.N) ** 2, axis=1)
            s = np.arange(sol.N + 1) / sol.N
            pos2 = np.sum(y[1:] ** 2, axis=1)
            lo_v, hi_v = a / b * x2, b / a * x2
            lo_p, hi_p = a / b * s[1:] ** 2 * x2, b / a * s[1:] ** 2 * x2
            # relative excursion beyond the sandwich (0 when inside)
            exc = max(np.max(lo_v / speed2 - 1.0), np.max(speed2 / hi_v - 1.0),
                      np.max(lo_p / pos2 - 1.0), np.max(pos2 / hi_p - 1.0))
            worst = max(worst, float(exc))
        out[name] = {"a_est": a, "b_est": b, "max_excursion": worst}
        ok_all &= worst <= 0.01
    worst = max(v["max_excursion"] for v in out.values())
    return ok_all, f"largest relative excursion beyond the a/b sandwiches = {worst:.2e} " \
        f"(slack 1e-2)", out


def c06_hessian_coercivity(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    sol_I = minimize_energy(mt.euclidean(2), np.array([3.0, 4.0]))
    lam_I = hessian_smallest_eigenvalue(mt.euclidean(2), sol_I)
    metrics = {k: builtin_metrics()[k] for k in O_METRICS}
    metrics.update(perturbed_metrics(0.05))
    metrics["spiral"] = builtin_metrics()["spiral"]
    out, ok = {"identity_eigenvalue": lam_I}, abs(lam_I - 2.0) <= 1e-6
    worst_margin = np.inf
    for name, G in metrics.items():
        X = _random_points(rng, 6, G.dim, 0.5, 50.0)

        def one(x, G=G):
            sol = minimize_energy(G, x)
            return sol, hessian_smallest_eigenvalue(G, sol)

        res = an.parallel_map(one, X, workers)
        nodes = np.concatenate([r[0].nodes() for r in res])
        a, _ = _ellipticity(G, nodes)
        lam = [r[1] for r in res]
        out[name] = {"a_est": a, "min_eigenvalue": float(min(lam))}
        worst_margin = min(worst_margin, min(lam) - a)
        ok &= min(lam) >= a
    return bool(ok), f"G=I eigenvalue {lam_I:.9f} (2 +- 1e-6); min(lambda_min - a_est) = " \
        f"{worst_margin:.3e} (>= 0)", out


def c07_observables(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    out, ok = {}, True
    for name in O_METRICS:
        G = builtin_metrics()[name]
        d = G.dim
        V = _random_points(rng, 10, d, 0.3, 3.0)
        starts = np.concatenate([np.zeros((3, d)), _random_points(rng, 7, d, 0.2, 5.0)])
        N = 1000
        s, ys, vs = integrate_batch(G, V, steps=N, starts=starts, span=20.0)
        lat = mt.LogRadialLattice(d, 200, 16 if d == 2 else 4, r_min=1e-3, r_max=1e4)
        c_bar = mt.convexity_margin(G, lat.points()).c_bar
        bounded = True
        min_inc = np.inf
        min_margin = np.inf
        for k in range(V.shape[0]):
            traj = _Trajectory(s[:, k] if s.ndim == 2 else s, ys[:, k], vs[:, k])
            tr = an.observable_trace(G, traj)
            bounded &= tr.bounded() and not tr.violations
            mono = an.monotonicity_check(tr, c_bar, slack=10.0 / N)
            min_inc = min(min_inc, mono.min_increment)
            min_margin = min(min_margin, mono.min_margin)
            ok &= mono.monotone
        static = an.static_inequalities(G, n_samples=10_000, seed=seed)
        ok &= bounded and static.ok
        out[name] = {"bounded": bool(bounded), "min_increment": float(min_inc),
                     "c_bar": float(c_bar), "rate_inequality_min_margin": float(min_margin),
                     "static": static.to_dict()}
    worst_inc = min(v["min_increment"] for v in out.values())
    nviol = sum(v["static"]["violations_upper"] + v["static"]["violations_lower"]
                + v["static"]["violations_bound"] for v in out.values())
    return bool(ok), f"A^2,B^2 <= 1; min A increment = {worst_inc:.2e} (slack -1e-2); " \
        f"static violations = {nviol} / {10_000 * len(O_METRICS)}", out


@dataclass
class _Trajectory:
    s: np.ndarray
    gamma: np.ndarray
    gamma_dot: np.ndarray


def c08_perturbation_rates(seed=0, workers=1):
    G = builtin_metrics()["induced-mu1"]
    eps = [0.1, 0.03, 0.01]
    out, ok = {}, True
    for shape in ("bump", "tail"):
        rep = an.perturbation_sweep(G, an.perturbation_shape(shape), eps, workers=workers)
        sl = rep.slopes
        r = rep.ratios
        growth = {k: max(v) / v[0] for k, v in r.items()}
        spread = {k: max(v) / min(v) for k, v in r.items()}
        shape_ok = (sl["s"] >= 0.9 and sl["ds"] >= 0.45 and sl["d2s"] >= 0.45
                    and spread["s"] <= 3.0 and growth["ds"] <= 3.0 and growth["d2s"] <= 3.0
                    and not rep.failures)
        ok &= shape_ok
        out[shape] = {"report": rep.to_dict(), "ratio_growth": growth, "ratio_spread": spread,
                      "passed": shape_ok}
    summ = "; ".join(f"{k}: slopes s={v['report']['slopes']['s']:.3f} "
                     f"ds={v['report']['slopes']['ds']:.3f} d2s={v['report']['slopes']['d2s']:.3f}"
                     for k, v in out.items())
    return bool(ok), summ + " (>= 0.9/0.45/0.45; ratio bounds x3)", out


def c09_gradient_identity(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    metrics = dict(builtin_metrics())
    metrics.update(perturbed_metrics())
    out, worst = {}, 0.0
    for name, G in metrics.items():
        X = _random_points(rng, 50, G.dim, 0.5, 50.0)

        def one(x, G=G):
            sol = minimize_energy(G, x)
            h = 1e-4 * np.linalg.norm(x)
            fd = np.empty(G.dim)
            for k in range(G.dim):
                e = np.zeros(G.dim)
                e[k] = h
                sp = minimize_energy(G, x + e, init=sol.kappa, with_gradient=False).S
                sm = minimize_energy(G, x - e, init=sol.kappa, with_gradient=False).S
                fd[k] = (sp - sm) / (2 * h)
            return float(np.linalg.norm(sol.grad_S - fd) / np.linalg.norm(fd))

        errs = an.parallel_map(one, X, workers)
        out[name] = float(max(errs))
        worst = max(worst, out[name])
    return worst <= 1e-3, f"max relative gradient mismatch over {len(metrics)} metrics x 50 " \
        f"points = {worst:.2e} (tol 1e-3)", out


def c10_derivative_scaling(seed=0, workers=1):
    radii = [1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0]
    metrics = {"induced-mu1": builtin_metrics()["induced-mu1"],
               "induced-mu0": builtin_metrics()["induced-mu0"],
               "induced-mu1+tail": perturbed_metrics()["induced-mu1+tail"]}
    out, worst = {}, 1.0
    for name, G in metrics.items():
        rep = an.derivative_scaling_sweep(G, radii, workers=workers)
        vs = rep.variation(rep.S_scaled)
        vs2 = rep.variation(rep.S2_scaled)
        finite = [v for v in list(vs.values()) + list(vs2.values()) if np.isfinite(v)]
        out[name] = {"S_variation": vs, "S2_variation": vs2, "n_flagged": len(rep.flagged),
                     "report": rep.to_dict()}
        worst = max([worst] + finite)
    return worst <= 10.0, f"largest variation of scaled derivatives over |x| in [1, 1e3] = " \
        f"{worst:.2f} (tol x10)", out


def _random_hardy_paths(rng, n, N, p):
    s = np.linspace(0.0, 1.0, N + 1)
    paths = []
    for i in range(n):
        kind = i % 4
        if kind == 0:       # rough random walk pinned at both ends
            w = np.cumsum(rng.normal(size=(N + 1, 2)), axis=0)
            w -= s[:, None] * w[-1] + (1 - s[:, None]) * w[0]
        elif kind == 1:     # random low-frequency sine series
            k = np.arange(1, 9)
            c = rng.normal(size=(8, 2)) / k[:, None]
            w = np.sin(np.pi * np.outer(s, k)) @ c
        elif kind == 2:     # near-extremal power profile s^alpha (1 - s)
            alpha = (1.0 - 1.0 / p) + rng.uniform(0.01, 0.3)
            w = np.outer(s**alpha * (1.0 - s), rng.normal(size=2))
        else:               # localized bump near the origin
            c = rng.uniform(0.01, 0.2)
            w = np.outer(np.exp(-((s - c) / (0.5 * c)) ** 2) * s * (1 - s), rng.normal(size=2))
        w[0] = w[-1] = 0.0
        paths.append(ps.DiscretePath(w))
    return paths


def c11_hardy(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    N = 256
    out, ok = {}, True
    for p in (2.0, 4.0):
        ratios = [ps.hardy_inequality_check(h, p).ratio for h in _random_hardy_paths(rng, 1000, N, p)]
        out[f"p={p:g}"] = {"max_ratio": float(max(ratios)), "bound": 1 + 2 / N}
        ok &= max(ratios) <= 1 + 2 / N
    Ns = [64, 128, 256, 512, 1024]
    f = lambda t: np.stack([np.cos(3 * t) + t, t**2], axis=-1)  # noqa: E731
    res = [ps.t_identity_residual(f, n) for n in Ns]
    order = -an.loglog_slope(Ns, res)
    out["t_identity"] = {"N": Ns, "residual": res, "order": order}
    ok &= order >= 0.9
    worst = max(v["max_ratio"] for k, v in out.items() if k.startswith("p="))
    return bool(ok), f"max Hardy ratio = {worst:.4f} (<= {1 + 2 / N:.4f}); T-identity " \
        f"residual order = {order:.2f} (>= 0.9)", out


def c12_spiral(seed=0, workers=1):
    cfg = ex.SpiralConfig(eps=0.05)
    G = builtin_metrics()["spiral"]
    exact = [ex.exact_spiral_check(cfg, G, root) for root in cfg.roots()]
    dev = max(e["max_deviation"] for e in exact)
    att = ex.spiral_attractor_check(cfg, launches=10, r_final=1e3, G=G)
    dists = [r.distance for r in att["runs"]]
    ok = dev <= 1e-3 and att["all_converged"]
    return bool(ok), f"exact-spiral deviation = {dev:.1e} (tol 1e-3); generic launches " \
        f"within 0.01 rad of a sink at r=1e3: {att['n_converged']}/10 " \
        f"(max distance {max(dists):.3f} rad)", \
        {"exact": exact, "exact_ok": dev <= 1e-3, "attractor": att,
         "attractor_ok": att["all_converged"]}


def c13_cross_method(seed=0, workers=1):
    rng = np.random.default_rng(seed)
    out, worst = {}, 0.0
    for name in SHOOTING_METRICS:
        G = builtin_metrics()[name]
        X = _random_points(rng, 50, G.dim, 0.5, 20.0)
        shots = shoot_batch(G, X, steps=1024)
        sols = an.parallel_map(lambda x, G=G: minimize_energy(G, x), X, workers)
        dev, failures = 0.0, 0
        for x, shot, sol in zip(X, shots, sols):
            if isinstance(shot, EikopathError):
                failures += 1
                continue
            gam = shot.gamma[:: 1024 // sol.N]
            dev = max(dev, float(np.max(np.linalg.norm(gam - sol.nodes(), axis=1))
                                 / np.linalg.norm(x)))
        out[name] = {"max_rel_deviation": dev, "shooting_failures": failures}
        worst = max(worst, dev if failures == 0 else np.inf)
    return worst <= 1e-3, f"max trajectory deviation / |x| over {len(SHOOTING_METRICS)} " \
        f"metrics x 50 targets = {worst:.2e} (tol 1e-3)", out


CRITERIA = {
    1: ("euclidean-exactness", c01_euclidean_exactness),
    2: ("radial-oracle", c02_radial_oracle),
    3: ("eikonal-residual", c03_eikonal_residual),
    4: ("conservation-law", c04_conservation),
    5: ("minimizer-bounds", c05_minimizer_bounds),
    6: ("hessian-coercivity", c06_hessian_coercivity),
    7: ("observables", c07_observables),
    8: ("perturbation-rates", c08_perturbation_rates),
    9: ("gradient-identity", c09_gradient_identity),
    10: ("derivative-scaling", c10_derivative_scaling),
    11: ("hardy-bounds", c11_hardy),
    12: ("spiral-dynamics", c12_spiral),
    13: ("cross-method", c13_cross_method),
}

NAMES = {name: n for n, (name, _) in CRITERIA.items()}


def run_criterion(key, seed=0, workers=1):
    """Run one criterion given its number or name."""
    n = NAMES[key] if isinstance(key, str) else int(key)
    name, func = CRITERIA[n]
    t0 = time.perf_counter()
    try:
        passed, summary, details = func(seed=seed, workers=workers)
    except EikopathError as err:
        passed, summary, details = False, f"error: {err}", {"error": str(err)}
    return CriterionResult(n, name, bool(passed), summary, details, time.perf_counter() - t0)


def run_all(seed=0, workers=1, only=None):
    keys = only if only is not None else list(CRITERIA)
    return [run_criterion(k, seed, workers) for k in keys]
