"""Geodesics from the origin and the distance function ``S``.

Two independent routes are provided:

* the variational one, :func:`minimize_energy`, which runs a damped Newton
  iteration on the discrete energy over paths ``y(s) = s x + kappa(s)`` and
  reports ``S(x) = sqrt(min energy)``;
* the dynamical one, :func:`integrate_geodesic` / :func:`shoot_to_target`,
  which integrates the geodesic equation with classical RK4 from the origin
  and adjusts the initial velocity until the end point hits ``x``.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse import linalg as splinalg

from . import kernels
from .errors import DomainError, IntegrationError, NonConvergenceError
from .pathspace import DiscretePath, energy, path_samples

log = logging.getLogger(__name__)

DEFAULT_N = 256
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 200
ARMIJO_C = 1e-4


# --------------------------------------------------------------------------
# result types
# --------------------------------------------------------------------------
@dataclass
class GeodesicSolution:
    x: np.ndarray
    kappa: DiscretePath
    S: float
    energy: float
    residual: float
    iterations: int
    grad_S: np.ndarray | None = None
    c_est: float | None = None
    hessian_indefinite: bool = False
    converged: bool = True
    tol: float = DEFAULT_TOL

    @property
    def N(self):
        return self.kappa.N

    def nodes(self):
        """Nodes of the minimizing curve ``s x + kappa(s)``."""
        return self.kappa.curve(self.x)

    def to_dict(self):
        return {
            "x": np.asarray(self.x).tolist(),
            "S": self.S,
            "energy": self.energy,
            "grad_S": None if self.grad_S is None else np.asarray(self.grad_S).tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "c_est": self.c_est,
            "hessian_indefinite": self.hessian_indefinite,
            "converged": self.converged,
            "N": self.N,
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def trajectory_csv(self, path):
        s = self.kappa.grid
        y = self.nodes()
        header = ",".join(["s"] + [f"y_{k}" for k in range(y.shape[1])])
        np.savetxt(path, np.column_stack([s, y]), delimiter=",", header=header,
                   comments="", fmt="%.17g")


@dataclass
class ShootingResult:
    v: np.ndarray
    s: np.ndarray
    gamma: np.ndarray
    gamma_dot: np.ndarray
    conservation_defect: float
    start: np.ndarray | None = None
    target: np.ndarray | None = None
    terminal_error: float | None = None
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def terminal(self):
        return self.gamma[-1]

    def speed_squared(self, G):
        M = G(self.gamma)
        return np.einsum("si,sij,sj->s", self.gamma_dot, M, self.gamma_dot)

    def to_dict(self):
        return {
            "v": np.asarray(self.v).tolist(),
            "terminal": np.asarray(self.terminal).tolist(),
            "target": None if self.target is None else np.asarray(self.target).tolist(),
            "terminal_error": self.terminal_error,
            "conservation_defect": self.conservation_defect,
            "iterations": self.iterations,
            "steps": int(len(self.s) - 1),
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    def trajectory_csv(self, path):
        d = self.gamma.shape[1]
        header = ",".join(["s"] + [f"gamma_{k}" for k in range(d)]
                          + [f"gamma_dot_{k}" for k in range(d)])
        np.savetxt(path, np.column_stack([self.s, self.gamma, self.gamma_dot]),
                   delimiter=",", header=header, comments="", fmt="%.17g")


# --------------------------------------------------------------------------
# H^1 Gram matrix
# --------------------------------------------------------------------------
class _H1Gram:
    """``M = N tridiag(-1, 2, -1)`` acting on each component of the interior nodes."""

    def __init__(self, N):
        self.N = N
        n = N - 1
        self.ab = np.zeros((2, n))
        self.ab[0, 1:] = -N
        self.ab[1, :] = 2.0 * N

    def solve(self, g):
        return linalg.solveh_banded(self.ab, g, check_finite=False)

    def matvec(self, v):
        out = 2.0 * v
        out[1:] -= v[:-1]
        out[:-1] -= v[1:]
        return self.N * out

    def dual_norm(self, g):
        return float(np.sqrt(max(np.sum(g * self.solve(g)), 0.0)))


# --------------------------------------------------------------------------
# variational solver
# --------------------------------------------------------------------------
def _energy_of(G, x, K):
    return energy(G, x, DiscretePath.from_interior(K))


def minimize_energy(G, x, init=None, tol=DEFAULT_TOL, N=DEFAULT_N, max_iter=DEFAULT_MAX_ITER,
                    backend=None, with_gradient=True):
    """Minimize the discrete energy over ``kappa`` with damped Newton steps.

    Parameters
    ----------
    G : MetricField
    x : (d,) array
        End point; the base point is the origin.
    init : DiscretePath, optional
        Starting perturbation, defaults to the straight chord ``kappa = 0``
        with ``N`` intervals.
    tol : float
        Stop when the H^1-dual norm of the gradient is at most
        ``tol * max(1, |x|)``.

    Returns
    -------
    GeodesicSolution
        ``hessian_indefinite`` is set (the solution is still returned) if
        the discrete Hessian at the minimizer is not positive definite.

    Raises
    ------
    NonConvergenceError
        After ``max_iter`` iterations; ``err.best`` holds the best iterate.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    d = G.dim
    if init is None:
        init = DiscretePath.zeros(N, d)
    N = init.N
    gram = _H1Gram(N)
    K = np.array(init.interior, dtype=float)
    scale = max(1.0, float(np.linalg.norm(x)))
    target = tol * scale
    best = None

    for it in range(max_iter + 1):
        kappa = DiscretePath.from_interior(K)
        ydot, (M, dM, d2M) = path_samples(G, x, kappa, 2)
        E = float(np.einsum("qi,qij,qj->", ydot, M, ydot) / N)
        g, D, U = kernels.assemble(ydot, M, dM, d2M, backend=backend)
        res = gram.dual_norm(g)
        if best is None or res < best.residual:
            best = GeodesicSolution(x, kappa, float(np.sqrt(max(E, 0.0))), E, res, it,
                                    converged=False, tol=tol)
        if res <= target:
            indefinite = not kernels.is_positive_definite(D, U, backend=backend)
            if indefinite:
                log.warning("indefinite discrete Hessian at the minimizer for x=%s", x.tolist())
            sol = GeodesicSolution(x, kappa, float(np.sqrt(max(E, 0.0))), E, res, it,
                                   hessian_indefinite=indefinite, tol=tol)
            if with_gradient and sol.S > 0:
                sol.grad_S = gradient_of_distance(G, sol)
            return sol
        if it == max_iter:
            break
        K = _line_search(G, x, K, E, g, D, U, gram, res, backend)
        if K is None:
            break
    raise NonConvergenceError(
        f"energy minimization did not reach residual {target:.3e} for x={x.tolist()} "
        f"(best {best.residual:.3e})", best=best)


def _line_search(G, x, K, E, g, D, U, gram, res, backend):
    """One damped step: Newton direction if it descends, else the H^1 gradient."""
    candidates = []
    try:
        step = -kernels.block_solve(D, U, g, backend=backend)
        if np.all(np.isfinite(step)) and np.sum(g * step) < 0:
            candidates.append(step)
    except np.linalg.LinAlgError:
        pass
    candidates.append(-gram.solve(g))
    slack = 64.0 * np.finfo(float).eps * max(abs(E), 1.0)
    for step in candidates:
        slope = float(np.sum(g * step))
        t = 1.0
        for _ in range(60):
            Kt = K + t * step
            Et = _energy_of(G, x, Kt)
            if np.isfinite(Et) and Et <= E + ARMIJO_C * t * slope + slack:
                return Kt
            t *= 0.5
    # energy differences are at rounding level: accept a full Newton step
    # if it still reduces the gradient
    if len(candidates) > 1:
        Kt = K + candidates[0]
        kappa = DiscretePath.from_interior(Kt)
        ydot, (M, dM) = path_samples(G, x, kappa, 1)
        gt, _, _ = kernels.assemble(ydot, M, dM, None, with_hessian=False, backend=backend)
        if gram.dual_norm(gt) < res:
            return Kt
    return None


def right_end_slope(kappa):
    """``kappa'(1)`` by linear extrapolation of the last two cell slopes."""
    sl = kappa.slopes()
    return 1.5 * sl[-1] - 0.5 * sl[-2]


def gradient_of_distance(G, sol):
    """``grad S(x) = S^-1 G(x) (x + kappa'(1))``."""
    if not sol.S > 0:
        raise DomainError("gradient of S undefined at x = 0")
    x = np.asarray(sol.x, dtype=float)
    vel = x + right_end_slope(sol.kappa)
    return G(x) @ vel / sol.S


def hessian_smallest_eigenvalue(G, sol, iterations=500, backend=None, dense_limit=1200):
    """Smallest eigenvalue of the discrete Hessian relative to the H^1 Gram matrix.

    Uses shift-invert Lanczos around 0 with the block tridiagonal solver when
    the Hessian is positive definite; otherwise (or for small systems) the
    dense generalized symmetric eigenproblem.
    """
    g, D, U = _hessian_blocks(G, sol, backend)
    N, d = sol.N, G.dim
    n = (N - 1) * d
    gram = _H1Gram(N)
    pd = kernels.is_positive_definite(D, U, backend=backend)
    if n <= dense_limit or not pd:
        H = kernels.to_dense(D, U)
        Mg = np.kron(_dense_gram(N), np.eye(d))
        return float(linalg.eigh(H, Mg, eigvals_only=True, subset_by_index=[0, 0])[0])

    def h_mv(v):
        return kernels.block_matvec(D, U, v.reshape(N - 1, d)).ravel()

    def m_mv(v):
        return gram.matvec(v.reshape(N - 1, d)).ravel()

    def h_inv(v):
        return kernels.block_solve(D, U, v.reshape(N - 1, d), backend=backend).ravel()

    Hop = splinalg.LinearOperator((n, n), matvec=h_mv, dtype=float)
    Mop = splinalg.LinearOperator((n, n), matvec=m_mv, dtype=float)
    OPinv = splinalg.LinearOperator((n, n), matvec=h_inv, dtype=float)
    try:
        vals = splinalg.eigsh(Hop, k=1, M=Mop, sigma=0.0, OPinv=OPinv, which="LM",
                              maxiter=iterations, tol=1e-10, return_eigenvectors=False)
    except splinalg.ArpackNoConvergence as err:
        best = float(err.eigenvalues[0]) if len(err.eigenvalues) else None
        raise NonConvergenceError("Lanczos iteration did not converge", best=best) from err
    return float(vals[0])


def _dense_gram(N):
    n = N - 1
    return N * (2.0 * np.eye(n) - np.eye(n, k=1) - np.eye(n, k=-1))


def _hessian_blocks(G, sol, backend):
    ydot, (M, dM, d2M) = path_samples(G, sol.x, sol.kappa, 2)
    return kernels.assemble(ydot, M, dM, d2M, backend=backend)


# --------------------------------------------------------------------------
# geodesic equation
# --------------------------------------------------------------------------
def geodesic_ode_rhs(G, gamma, gamma_dot, derivs=None):
    """Acceleration ``G^-1 [ (1/2) c - (sum_k gamma_dot_k d_k G) gamma_dot ]``
    with ``c_k = gamma_dot . d_k G gamma_dot``; batched over leading axes."""
    gamma = np.asarray(gamma, dtype=float)
    v = np.asarray(gamma_dot, dtype=float)
    M, dM = derivs if derivs is not None else G.derivatives(gamma, 1)
    c = np.einsum("...i,...kij,...j->...k", v, dM, v)
    Av = np.einsum("...k,...kij,...j->...i", v, dM, v)
    return np.linalg.solve(M, (0.5 * c - Av)[..., None])[..., 0]


def _rk4(G, y0, v0, steps, span=1.0, log_time=False):
    """Classical RK4 for ``(gamma, gamma')``.

    With ``log_time`` the system is integrated in the time ``tau`` with
    ``ds/dtau = <gamma>``, so the step in ``s`` grows with the distance from
    the origin; the geodesic parameter ``s`` is carried along as a state.
    """
    y = np.array(y0, dtype=float)
    v = np.array(v0, dtype=float)
    s = np.zeros(y.shape[:-1])
    h = span / steps
    ys = np.empty((steps + 1,) + y.shape)
    vs = np.empty_like(ys)
    ss = np.empty((steps + 1,) + s.shape)
    ys[0], vs[0], ss[0] = y, v, s

    def f(yy, vv):
        acc = geodesic_ode_rhs(G, yy, vv)
        if not log_time:
            return vv, acc, np.ones(yy.shape[:-1])
        w = np.sqrt(1.0 + np.sum(yy * yy, axis=-1))
        return w[..., None] * vv, w[..., None] * acc, w

    for n in range(steps):
        k1y, k1v, k1s = f(y, v)
        k2y, k2v, k2s = f(y + 0.5 * h * k1y, v + 0.5 * h * k1v)
        k3y, k3v, k3s = f(y + 0.5 * h * k2y, v + 0.5 * h * k2v)
        k4y, k4v, k4s = f(y + h * k3y, v + h * k3v)
        y = y + (h / 6.0) * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        v = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        s = s + (h / 6.0) * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(v))):
            raise IntegrationError(f"non-finite state at step {n + 1} of {steps}")
        ys[n + 1], vs[n + 1], ss[n + 1] = y, v, s
    return ss, ys, vs


def _conservation_defect(G, ys, vs):
    M = G(ys)
    q = np.einsum("...i,...ij,...j->...", vs, M, vs)
    q0 = q[0]
    denom = np.where(q0 > 0, q0, 1.0)
    return np.max(np.abs(q - q0) / denom, axis=0)


def integrate_geodesic(G, v, steps=1000, start=None, span=1.0, log_time=False):
    """RK4 solution of the geodesic equation on ``s in [0, span]``.

    ``gamma(0) = start`` (default the origin), ``gamma'(0) = v``.  The relative
    drift of ``gamma' G gamma'`` is recorded as ``conservation_defect``.  With
    ``log_time`` the steps are uniform in ``tau`` (``ds = <gamma> dtau``) and
    ``span`` is the ``tau`` range, which suits long geodesics.
    """
    if steps < 100:
        raise ValueError("steps must be at least 100")
    v = np.asarray(v, dtype=float)
    y0 = np.zeros_like(v) if start is None else np.asarray(start, dtype=float)
    s, ys, vs = _rk4(G, y0, v, steps, span, log_time)
    defect = float(np.max(_conservation_defect(G, ys, vs)))
    return ShootingResult(v, s, ys, vs, defect, start=y0)


def integrate_batch(G, V, steps=1000, starts=None, span=1.0, log_time=False):
    """Integrate several geodesics at once; returns ``(s, gammas, gamma_dots)``
    with trajectory arrays of shape ``(steps + 1, M, d)``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    Y0 = np.zeros_like(V) if starts is None else np.broadcast_to(starts, V.shape)
    return _rk4(G, Y0, V, steps, span, log_time)


def exp_map(G, v, steps=1000):
    """End point ``gamma_v(1)`` of the geodesic from the origin with velocity ``v``."""
    return integrate_geodesic(G, v, steps).terminal


def shoot_to_target(G, x, tol=1e-10, steps=1024, max_iter=50, v0=None, fd_step=1e-6):
    """Find ``v`` with ``gamma_v(1) = x`` by Newton's method on the shooting map.

    The Jacobian is formed by forward differences over the ``d`` coordinate
    directions; the ``d + 1`` trajectories per iteration are integrated as
    one batch.  Starts from ``v = x`` unless ``v0`` is given.

    Raises
    ------
    NonConvergenceError
        If the terminal error stays above ``tol * max(1, |x|)``; ``err.best``
        is the best initial velocity found.
    """
    x = np.asarray(x, dtype=float)
    out = shoot_batch(G, x[None], tol, steps, max_iter,
                      None if v0 is None else np.asarray(v0, dtype=float)[None], fd_step)
    res = out[0]
    if isinstance(res, NonConvergenceError):
        raise res
    return res


def shoot_batch(G, X, tol=1e-10, steps=1024, max_iter=50, V0=None, fd_step=1e-6):
    """Shooting for many targets at once.

    Each Newton iteration integrates the current trajectories of all active
    targets as one vectorized RK4 batch, then the ``d`` perturbed
    trajectories of the targets that have not converged.  Returns a list
    with a :class:`ShootingResult` per target, or the
    :class:`NonConvergenceError` for targets that failed.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M, d = X.shape
    V = X.copy() if V0 is None else np.array(V0, dtype=float).reshape(M, d)
    targets = tol * np.maximum(1.0, np.linalg.norm(X, axis=1))
    best_v, best_err = V.copy(), np.full(M, np.inf)
    best_traj = [None] * M
    iters = np.zeros(M, dtype=int)
    active = np.ones(M, dtype=bool)
    eye = np.eye(d)
    for it in range(max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Va = V[idx]
        try:
            s, ys, vs = integrate_batch(G, Va, steps)
        except IntegrationError:
            break
        F = ys[-1] - X[idx]
        err = np.linalg.norm(F, axis=1)
        for j in np.flatnonzero(err < best_err[idx]):
            m = idx[j]
            best_err[m], best_v[m] = err[j], Va[j].copy()
            best_traj[m] = (s[:, j], ys[:, j], vs[:, j])
        done = err <= targets[idx]
        iters[idx] = it
        active[idx[done]] = False
        if it == max_iter:
            break
        todo = ~done
        if not np.any(todo):
            continue
        Vt = Va[todo]
        delta = fd_step * np.maximum(1.0, np.linalg.norm(Vt, axis=1))
        batch = Vt[:, None, :] + delta[:, None, None] * eye[None]
        try:
            _, yp, _ = integrate_batch(G, batch.reshape(-1, d), steps)
        except IntegrationError:
            break
        ends = yp[-1].reshape(len(Vt), d, d)
        J = np.swapaxes(ends - ys[-1][todo][:, None, :], 1, 2) / delta[:, None, None]
        try:
            dv = np.linalg.solve(J, -F[todo][..., None])[..., 0]
        except np.linalg.LinAlgError:
            dv = -F[todo]
        # damping: halve each step while its terminal error grows
        sub = idx[todo]
        t = np.ones(len(sub))
        pending = np.ones(len(sub), dtype=bool)
        for _ in range(30):
            trial = V[sub[pending]] + t[pending, None] * dv[pending]
            try:
                _, yt, _ = integrate_batch(G, trial, steps)
                ok = np.linalg.norm(yt[-1] - X[sub[pending]], axis=1) < err[todo][pending]
            except IntegrationError:
                ok = np.zeros(pending.sum(), dtype=bool)
            where = np.flatnonzero(pending)
            pending[where[ok]] = False
            if not np.any(pending):
                break
            t[pending] *= 0.5
        V[sub] = V[sub] + t[:, None] * dv

    results = []
    for m in range(M):
        if best_err[m] > targets[m]:
            results.append(NonConvergenceError(
                f"shooting to x={X[m].tolist()} stalled at terminal error {best_err[m]:.3e}",
                best=best_v[m]))
            continue
        sm, ym, vm = best_traj[m]
        defect = float(_conservation_defect(G, ym[:, None], vm[:, None])[0])
        results.append(ShootingResult(best_v[m].copy(), sm, ym, vm, defect, start=np.zeros(d),
                                      target=X[m], terminal_error=float(best_err[m]),
                                      iterations=int(iters[m])))
    return results
