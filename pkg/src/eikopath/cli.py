"""Command-line front end.

Exit status is 0 when every enabled check passes, 1 when a check fails
(the failing checks are named on stderr) and 2 for configuration errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import acceptance as acc
from . import analysis as an
from . import examples as ex
from . import metric as mt
from .config import (_float, _floats, _int, build_metric, load_config, parse_config,
                     parse_points, potential_from, spiral_config_from, validate)
from .errors import ConfigError, EikopathError
from .solver import (_conservation_defect, integrate_batch, integrate_geodesic,
                     minimize_energy, shoot_batch)

log = logging.getLogger("eikopath")


class TaskOutput:
    def __init__(self):
        self.report = {}
        self.checks = {}
        self.grids = {}

    def check(self, name, ok, **info):
        self.checks[name] = {"passed": bool(ok), **info}

    def grid(self, name, header, rows):
        self.grids[name] = (header, np.atleast_2d(np.asarray(rows, dtype=float)))


def _opt(cfg, key, default, conv):
    return conv(cfg.options[key], key) if key in cfg.options else default


def _points(cfg, default=None):
    if "x" in cfg.options:
        return parse_points(cfg.options["x"])
    if default is None:
        raise ConfigError("task needs x = ...")
    return default


def _lattice(cfg, d):
    return mt.LogRadialLattice(d, _opt(cfg, "n_radii", 10, _int), _opt(cfg, "n_dirs", 8, _int),
                               r_min=_opt(cfg, "r_min", 1.0, _float),
                               r_max=_opt(cfg, "r_max", 100.0, _float)).points()


# --------------------------------------------------------------------------
# tasks
# --------------------------------------------------------------------------
def task_distance(cfg, G, out):
    X = _points(cfg)
    N, tol = _opt(cfg, "n", 256, _int), _opt(cfg, "tol", 1e-10, _float)
    eik_tol = _opt(cfg, "eikonal_tol", 1e-3, _float)
    sols = an.parallel_map(lambda x: minimize_energy(G, x, N=N, tol=tol), X, cfg.workers)
    rows = []
    worst = 0.0
    for k, sol in enumerate(sols):
        g = sol.grad_S
        eik = abs(float(g @ np.linalg.solve(G(sol.x), g)) - 1.0) if g is not None else 0.0
        worst = max(worst, eik)
        out.grid(f"path_{k}", ["s"] + [f"y_{j}" for j in range(G.dim)],
                 np.column_stack([np.arange(sol.N + 1) / sol.N, sol.nodes()]))
        rows.append(list(sol.x) + [sol.S, sol.residual, eik])
    out.report["solutions"] = [s.to_dict() for s in sols]
    out.grid("distance", [f"x_{j}" for j in range(G.dim)] + ["S", "residual", "eikonal"], rows)
    out.check("eikonal-residual", worst <= eik_tol, value=worst, tol=eik_tol)


def task_geodesic(cfg, G, out):
    V = _points(cfg, None) if "v" not in cfg.options else parse_points(cfg.options["v"], "v")
    starts = parse_points(cfg.options["start"], "start") if "start" in cfg.options else None
    steps = _opt(cfg, "steps", 1000, _int)
    span = _opt(cfg, "span", 1.0, _float)
    tol = _opt(cfg, "conservation_tol", 1e-8, _float)
    worst, res = 0.0, []
    for k, v in enumerate(V):
        r = integrate_geodesic(G, v, steps, start=None if starts is None else starts[k % len(starts)],
                               span=span)
        res.append(r.to_dict())
        worst = max(worst, r.conservation_defect)
        out.grid(f"geodesic_{k}", ["s"] + [f"gamma_{j}" for j in range(G.dim)]
                 + [f"gamma_dot_{j}" for j in range(G.dim)],
                 np.column_stack([r.s, r.gamma, r.gamma_dot]))
    out.report["geodesics"] = res
    out.check("conservation", worst <= tol, value=worst, tol=tol)


def task_shoot(cfg, G, out):
    X = _points(cfg)
    steps = _opt(cfg, "steps", 1024, _int)
    agree_tol = _opt(cfg, "agreement_tol", 1e-3, _float)
    shots = shoot_batch(G, X, steps=steps)
    res, worst, failures = [], 0.0, []
    for k, (x, shot) in enumerate(zip(X, shots)):
        if isinstance(shot, EikopathError):
            failures.append(str(shot))
            continue
        sol = minimize_energy(G, x, N=256)
        stride = steps // sol.N if steps % sol.N == 0 else None
        if stride:
            dev = float(np.max(np.linalg.norm(shot.gamma[::stride] - sol.nodes(), axis=1))
                        / np.linalg.norm(x))
            worst = max(worst, dev)
        res.append({**shot.to_dict(), "S_minimization": sol.S})
        out.grid(f"shot_{k}", ["s"] + [f"gamma_{j}" for j in range(G.dim)],
                 np.column_stack([shot.s, shot.gamma]))
    out.report["shots"] = res
    out.report["failures"] = failures
    out.check("shooting-converged", not failures, failures=len(failures))
    out.check("cross-method-agreement", worst <= agree_tol, value=worst, tol=agree_tol)


def task_sweep(cfg, G, out):
    eps = _opt(cfg, "eps_list", [0.1, 0.03, 0.01], _floats)
    shapes = cfg.options.get("shapes", "bump, tail").replace(",", " ").split()
    lattice = an.default_x_lattice(G.dim)
    if "x" in cfg.options:
        lattice = _points(cfg)
    base = G.base if G.base is not None else G
    for shape in shapes:
        try:
            delta = an.perturbation_shape(shape, G.dim)
        except ValueError as err:
            raise ConfigError(str(err)) from err
        rep = an.perturbation_sweep(base, delta, eps, lattice, workers=cfg.workers)
        out.report[shape] = rep.to_dict()
        out.grid(f"sweep_{shape}", ["eps", "sup_s", "sup_ds", "sup_d2s"],
                 np.column_stack([rep.eps, rep.sup_s, rep.sup_ds, rep.sup_d2s]))
        out.check(f"{shape}-slope-s", rep.slopes["s"] >= 0.9, value=rep.slopes["s"], tol=0.9)
        out.check(f"{shape}-slope-ds", rep.slopes["ds"] >= 0.45, value=rep.slopes["ds"], tol=0.45)
        out.check(f"{shape}-slope-d2s", rep.slopes["d2s"] >= 0.45, value=rep.slopes["d2s"],
                  tol=0.45)
        out.check(f"{shape}-no-failures", not rep.failures, failures=rep.failures)


def task_scaling(cfg, G, out):
    radii = _opt(cfg, "radii", [1.0, 10.0, 100.0, 1000.0], _floats)
    rep = an.derivative_scaling_sweep(G, radii, max_order=_opt(cfg, "max_order", 3, _int),
                                      workers=cfg.workers)
    out.report["scaling"] = rep.to_dict()
    for label, table in (("S", rep.S_scaled), ("S2", rep.S2_scaled)):
        out.grid(f"scaling_{label}", ["r"] + [f"order_{m}" for m in table],
                 np.column_stack([radii] + [table[m] for m in table]))
        for m, v in rep.variation(table).items():
            out.check(f"{label}-order-{m}-bounded", not np.isfinite(v) or v <= 10.0, value=v,
                      tol=10.0)


def task_eikonal(cfg, G, out):
    pts = _points(cfg, _lattice(cfg, G.dim))
    tol = _opt(cfg, "eikonal_tol", 1e-3, _float)
    scan = an.eikonal_residual_scan(G, pts, N=_opt(cfg, "n", 256, _int), workers=cfg.workers)
    out.report["eikonal"] = scan.to_dict()
    out.grid("eikonal", [f"x_{j}" for j in range(G.dim)] + ["S", "residual"], scan.grid())
    out.check("eikonal-residual", scan.max_residual <= tol, value=scan.max_residual, tol=tol)


def task_verify(cfg, G, out):
    """Invariant suite for one metric."""
    d = G.dim
    pts = mt.LogRadialLattice(d, 32, 8 if d == 2 else 3).points()
    a_est, b_est = mt.ellipticity_estimate(G, pts)
    out.report["ellipticity"] = {"a_est": a_est, "b_est": b_est, "a": G.a, "b": G.b}
    out.check("ellipticity", a_est > 0, a_est=a_est, b_est=b_est)
    sem = mt.seminorm(G, mt.LogRadialLattice(d, 32, 8 if d == 2 else 3))
    out.report["seminorm"] = sem.to_dict()
    out.check("seminorm-finite", np.isfinite(sem.estimate), value=sem.estimate)
    # the observable laws need the (base) metric to have the block form
    # P + P_perp G P_perp; other metrics only get the generic checks
    ref = an.reference_metric(G)
    defect = float(np.max(mt.orthogonal_decomposition_defect(ref, pts)))
    out.report["orthogonal_decomposition_defect"] = defect
    if defect <= 1e-10:
        conv = mt.convexity_margin(ref, pts)
        out.report["convexity"] = conv.to_dict()
        out.check("convexity", conv.in_O, c_bar=conv.c_bar)
        static = an.static_inequalities(G, n_samples=_opt(cfg, "samples", 10_000, _int),
                                        seed=cfg.seed)
        out.report["static_inequalities"] = static.to_dict()
        out.check("static-inequalities", static.ok)
    if G.kind == "potential-induced":
        pot = potential_from(cfg.metric)
        mem = ex.verify_membership_O(pot, G, d=d)
        out.report["membership"] = mem.to_dict()
        out.check("membership-O", mem.in_O, violations=mem.violations)
        out.report["constant_near_zero"] = pot.constant_near_zero
    rng = np.random.default_rng(cfg.seed)
    X = rng.normal(size=(_opt(cfg, "points", 8, _int), d)) * 5.0
    scan = an.eikonal_residual_scan(G, X, workers=cfg.workers)
    out.report["eikonal"] = scan.to_dict()
    out.check("eikonal-residual", scan.max_residual <= 1e-3, value=scan.max_residual, tol=1e-3)
    V = rng.normal(size=(8, d)) * 3.0
    _, ys, vs = integrate_batch(G, V, 1000)
    drift = float(np.max(_conservation_defect(G, ys, vs)))
    out.check("conservation", drift <= 1e-8, value=drift, tol=1e-8)


def task_example(cfg, G, out):
    """Dump the example tables: the rho table of induced metrics or the
    spiral roots and launch radii."""
    if G.kind == "potential-induced":
        table = ex.table_of(G)
        r = np.geomspace(table.r_min, table.r_max, _opt(cfg, "rows", 200, _int))
        rho = table.rho(r)
        out.grid("rho_table", ["r", "rho", "f"], np.column_stack([r, rho, table.f(rho)]))
        lo, hi = table.bounds()
        out.report["F_bounds"] = [lo, hi]
        out.check("rho-monotone", bool(np.all(np.diff(rho) > 0)))
    elif G.kind == "spiral":
        scfg = spiral_config_from(cfg.metric)
        roots = scfg.roots()
        rows = []
        for root in roots:
            r0, th = scfg.launch_radius(root["theta"])
            rows.append([root["theta"], 1.0 if root["kind"] == "sink" else 0.0, r0, th])
        out.report["roots"] = [{**r, "r0": row[2]} for r, row in zip(roots, rows)]
        out.grid("spiral_roots", ["theta", "is_sink", "r0", "theta_mod"], rows)
        exact = [ex.exact_spiral_check(scfg, G, root) for root in roots]
        out.report["exact_spirals"] = exact
        dev = max(e["max_deviation"] for e in exact)
        out.check("exact-spiral", dev <= 1e-3, value=dev, tol=1e-3)
    else:
        raise ConfigError("task 'example' needs a potential-induced or spiral metric")


def task_acceptance(cfg, G, out, names=None):
    if names is None:
        sel = cfg.options.get("criteria", "all")
        names = list(acc.CRITERIA) if sel.strip() == "all" else \
            [int(t) if t.isdigit() else t for t in sel.replace(",", " ").split()]
    for key in names:
        if not isinstance(key, int) and key not in acc.NAMES:
            raise ConfigError(f"unknown criterion {key!r}")
        res = acc.run_criterion(key, seed=cfg.seed, workers=cfg.workers)
        print(res.line())
        d = res.to_dict()
        d.pop("elapsed")
        out.report[f"{res.number:02d}-{res.name}"] = d
        out.check(res.name, res.passed, summary=res.summary)


TASK_FUNCS = {"distance": task_distance, "geodesic": task_geodesic, "shoot": task_shoot,
              "sweep": task_sweep, "scaling": task_scaling, "eikonal": task_eikonal,
              "verify": task_verify, "example": task_example, "acceptance": task_acceptance}


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------
def _write(out_dir, cfg, out, G):
    os.makedirs(os.path.join(out_dir, "grids"), exist_ok=True)
    report = {"eikopath_version": __version__, "config": cfg.to_dict(), "seed": cfg.seed,
              "metric": {"kind": G.kind, "name": G.name, "dim": G.dim, "a": G.a, "b": G.b},
              "results": acc._jsonable(out.report),
              "checks": acc._jsonable(out.checks),
              "passed": all(c["passed"] for c in out.checks.values())}
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    for name, (header, rows) in out.grids.items():
        np.savetxt(os.path.join(out_dir, "grids", f"{name}.csv"), rows, delimiter=",",
                   header=",".join(header), comments="", fmt="%.17g")


def run(cfg):
    """Execute a configured task; returns the exit status."""
    G = build_metric(cfg.metric)
    out = TaskOutput()
    if cfg.task in acc.NAMES:
        task_acceptance(cfg, G, out, names=[cfg.task])
    else:
        TASK_FUNCS[cfg.task](cfg, G, out)
    _write(cfg.out_dir, cfg, out, G)
    failed = [k for k, v in out.checks.items() if not v["passed"]]
    for name in failed:
        print(f"check failed: {name}", file=sys.stderr)
    return 1 if failed else 0


DEFAULT_CONFIG = "[metric]\nkind = euclidean\n\n[task]\nname = distance\nx = 3, 4\n"


def build_parser():
    p = argparse.ArgumentParser(prog="eikopath",
                                description="Geodesic distance to the origin for order-zero metrics.")
    p.add_argument("--config", help="INI experiment file (default: 2-d Euclidean metric)")
    p.add_argument("--task", help="task or acceptance-criterion name (overrides [task] name)")
    p.add_argument("--out", help="output directory (overrides [output] dir)")
    p.add_argument("--workers", type=int, help="worker threads for lattice tasks")
    p.add_argument("--seed", type=int, help="unsigned 64-bit seed")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            cfg = load_config(args.config)
        else:
            cfg = parse_config(DEFAULT_CONFIG)
        if args.task:
            cfg.task = args.task
        if args.out:
            cfg.out_dir = args.out
        if args.workers is not None:
            cfg.workers = args.workers
        if args.seed is not None:
            cfg.seed = args.seed
        validate(cfg)
        return run(cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except EikopathError as err:
        print(f"check failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
