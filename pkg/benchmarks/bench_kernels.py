"""Compare the numba kernels with the pure-numpy/scipy fallback.

Times Hessian assembly, the block tridiagonal solve and a full energy
minimization with both backends in one process, then checks that setting
``EIKOPATH_DISABLE_NUMBA=1`` really selects the fallback in a fresh
interpreter.

    python3 benchmarks/bench_kernels.py [--N 256 1024 4096] [--repeat 20]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from eikopath import examples as ex
from eikopath import kernels
from eikopath._backend import NUMBA_AVAILABLE
from eikopath.pathspace import DiscretePath, path_samples
from eikopath.solver import minimize_energy


def best_time(func, repeat):
    func()                                   # warm-up (includes JIT compilation)
    return min(timeit.repeat(func, number=1, repeat=repeat))


def bench(G, N, repeat):
    rng = np.random.default_rng(0)
    x = np.array([5.0, -3.0])
    kappa = DiscretePath.from_interior(0.2 * rng.normal(size=(N - 1, 2)))
    ydot, (M, dM, d2M) = path_samples(G, x, kappa, 2)
    _, D, U = kernels.assemble(ydot, M, dM, d2M, backend="numpy")
    rhs = rng.normal(size=(N - 1, 2))
    rows = []
    for backend in ("numba", "numpy"):
        rows.append((backend,
                     best_time(lambda: kernels.assemble(ydot, M, dM, d2M, backend=backend), repeat),
                     best_time(lambda: kernels.block_solve(D, U, rhs, backend=backend), repeat),
                     best_time(lambda: minimize_energy(G, x, N=N, backend=backend,
                                                       with_gradient=False), max(3, repeat // 5))))
    return rows


def fallback_check():
    env = dict(os.environ, EIKOPATH_DISABLE_NUMBA="1")
    code = "from eikopath._backend import default_backend; print(default_backend())"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    return out.stdout.strip()


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--N", type=int, nargs="+", default=[256, 1024, 4096])
    p.add_argument("--repeat", type=int, default=20)
    args = p.parse_args(argv)
    if not NUMBA_AVAILABLE:
        print("numba is not importable; only the fallback can run")
        return 1
    G = ex.build_induced_metric(ex.RadialPotential.decaying(mu=1.0))
    print(f"{'N':>6} {'backend':>8} {'assemble [ms]':>14} {'solve [ms]':>11} {'minimize [ms]':>14}")
    for N in args.N:
        for backend, ta, ts, tm in bench(G, N, args.repeat):
            print(f"{N:>6} {backend:>8} {1e3 * ta:>14.3f} {1e3 * ts:>11.3f} {1e3 * tm:>14.1f}")
    print(f"backend with EIKOPATH_DISABLE_NUMBA=1: {fallback_check()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
