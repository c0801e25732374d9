"""Discrete H^1_0 paths, the energy functional and the Hardy-type operators.

A path perturbation ``kappa`` lives on the uniform grid ``s_i = i/N`` and is
extended piecewise linearly, with ``kappa_0 = kappa_N = 0``.  The curve whose
energy is measured is ``y(s) = s x + kappa(s)``.  Its velocity is constant on
each subinterval and the metric is sampled once per subinterval, at the
midpoint, so ``s = 0`` is never evaluated.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from . import kernels
from .errors import DomainError

MIN_NODES = 8
_GL8_T, _GL8_W = np.polynomial.legendre.leggauss(8)
_GL8_T = 0.5 * (_GL8_T + 1.0)
_GL8_W = 0.5 * _GL8_W


@dataclass(frozen=True)
class DiscretePath:
    """Nodal values ``kappa_i``, ``i = 0..N``, of a piecewise-linear path."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("path values must have shape (N + 1, d)")
        if v.shape[0] - 1 < MIN_NODES:
            raise ValueError(f"need at least {MIN_NODES} intervals, got {v.shape[0] - 1}")
        if not np.all(np.isfinite(v)):
            raise ValueError("path values must be finite")
        if np.any(v[0] != 0.0) or np.any(v[-1] != 0.0):
            raise ValueError("path must vanish at s = 0 and s = 1")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    # construction ---------------------------------------------------------
    @classmethod
    def zeros(cls, N, d):
        return cls(np.zeros((N + 1, d)))

    @classmethod
    def from_interior(cls, interior):
        interior = np.asarray(interior, dtype=float)
        d = interior.shape[-1]
        return cls(np.concatenate([np.zeros((1, d)), interior, np.zeros((1, d))]))

    @classmethod
    def from_function(cls, func, N, d):
        """Sample ``func(s) -> (d,)`` at the nodes; endpoints are forced to 0."""
        s = np.linspace(0.0, 1.0, N + 1)
        v = np.array([np.asarray(func(si), dtype=float).reshape(d) for si in s])
        v[0] = 0.0
        v[-1] = 0.0
        return cls(v)

    # geometry -------------------------------------------------------------
    @property
    def N(self):
        return self.values.shape[0] - 1

    @property
    def dim(self):
        return self.values.shape[1]

    @property
    def grid(self):
        return np.linspace(0.0, 1.0, self.N + 1)

    @property
    def interior(self):
        return self.values[1:-1]

    def slopes(self):
        """Constant derivative on each subinterval, shape (N, d)."""
        return np.diff(self.values, axis=0) * self.N

    def midpoints(self):
        return 0.5 * (self.values[1:] + self.values[:-1])

    def curve(self, x):
        """Nodes of ``y(s) = s x + kappa(s)``."""
        return self.grid[:, None] * np.asarray(x, dtype=float) + self.values

    def __add__(self, other):
        return DiscretePath(self.values + other.values)

    def __sub__(self, other):
        return DiscretePath(self.values - other.values)

    def __mul__(self, t):
        return DiscretePath(self.values * float(t))

    __rmul__ = __mul__

    def inner(self, other):
        """H^1_0 inner product ``int kappa' . h' ds``."""
        return float(np.sum(self.slopes() * other.slopes()) / self.N)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"kappa_{k}" for k in range(self.dim)])
            for s, row in zip(self.grid, self.values):
                w.writerow([repr(float(s))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 1:])


def _check_point(G, x, kappa):
    x = np.asarray(x, dtype=float)
    if x.shape != (G.dim,):
        raise ValueError(f"x must have shape ({G.dim},)")
    if kappa.dim != G.dim:
        raise ValueError("path and metric dimensions differ")
    return x


def path_samples(G, x, kappa, order):
    """Velocities of ``y`` and metric derivatives at the subinterval midpoints."""
    x = _check_point(G, x, kappa)
    y = kappa.curve(x)
    ydot = np.diff(y, axis=0) * kappa.N
    mids = 0.5 * (y[1:] + y[:-1])
    return ydot, G.derivatives(mids, order)


def energy(G, x, kappa):
    """Midpoint-rule ``int_0^1 y' G(y) y' ds`` for ``y = s x + kappa``."""
    x = _check_point(G, x, kappa)
    y = kappa.curve(x)
    ydot = np.diff(y, axis=0) * kappa.N
    M = G(0.5 * (y[1:] + y[:-1]))
    return float(np.einsum("qi,qij,qj->", ydot, M, ydot) / kappa.N)


def energy_gradient(G, x, kappa, backend=None):
    """Partial derivatives of the discrete energy in the interior nodes.

    Returned as a :class:`DiscretePath` whose interior values are the
    cotangent components; pair it with a direction ``h`` by
    :func:`cotangent_pairing`.
    """
    ydot, (M, dM) = path_samples(G, x, kappa, 1)
    grad, _, _ = kernels.assemble(ydot, M, dM, None, with_hessian=False, backend=backend)
    return DiscretePath.from_interior(grad)


def cotangent_pairing(grad, h):
    return float(np.sum(grad.interior * h.interior))


def energy_hessian_blocks(G, x, kappa, backend=None):
    """Gradient and block tridiagonal Hessian of the discrete energy."""
    ydot, (M, dM, d2M) = path_samples(G, x, kappa, 2)
    return kernels.assemble(ydot, M, dM, d2M, with_hessian=True, backend=backend)


def hessian_quadratic_form(G, x, kappa, h1, h2):
    """Second variation of the energy in directions ``h1``, ``h2``.

    Evaluates ``int 2 h1' G h2' + 2 h1' (grad G . h2) y' + 2 h2' (grad G . h1) y'
    + y' (grad^2 G [h1, h2]) y' ds`` with the same midpoint rule as
    :func:`energy`, so it is the exact Hessian of the discrete energy.
    """
    ydot, (M, dM, d2M) = path_samples(G, x, kappa, 2)
    N = kappa.N
    u1, u2 = h1.slopes(), h2.slopes()
    m1, m2 = h1.midpoints(), h2.midpoints()
    dG1 = np.einsum("qkij,qk->qij", dM, m1)
    dG2 = np.einsum("qkij,qk->qij", dM, m2)
    d2G12 = np.einsum("qklij,qk,ql->qij", d2M, m1, m2)
    val = (2.0 * np.einsum("qi,qij,qj->", u1, M, u2)
           + 2.0 * np.einsum("qi,qij,qj->", u1, dG2, ydot)
           + 2.0 * np.einsum("qi,qij,qj->", u2, dG1, ydot)
           + np.einsum("qi,qij,qj->", ydot, d2G12, ydot))
    return float(val / N)


# --------------------------------------------------------------------------
# H^p norms and Hardy operators
# --------------------------------------------------------------------------
def _check_p(p):
    p = float(p)
    if not (1.0 < p < np.inf):
        raise DomainError(f"exponent p must lie in (1, inf), got {p}")
    return p


def conjugate(p):
    p = _check_p(p)
    return p / (p - 1.0)


def hardy_constant(p):
    """``A_p = p / (p - 1)``, the sharp constant of the Hardy inequality."""
    return conjugate(p)


def reverse_hardy_constant(p):
    """``B_p = A_q + 1`` with ``q`` conjugate to ``p``."""
    return hardy_constant(conjugate(p)) + 1.0


@dataclass
class PairingNorm:
    p: float
    value: float
    pairing: float | None = None


def hp_norm(h, p=2.0):
    """``(int |h'|^p ds)^(1/p)`` of a piecewise-linear path."""
    p = _check_p(p)
    sl = np.linalg.norm(h.slopes(), axis=1)
    return float((np.sum(sl**p) / h.N) ** (1.0 / p))


def _quad_nodes(N):
    """Gauss-Legendre nodes inside every cell: (N, 8) positions and weights."""
    left = np.arange(N) / N
    s = left[:, None] + _GL8_T[None, :] / N
    return s, np.broadcast_to(_GL8_W / N, s.shape)


def _values_at(h, s):
    """Interpolant of ``h`` at quadrature nodes ``s`` (cell-major, shape (N, m))."""
    N = h.N
    v = h.values
    t = s * N - np.arange(N)[:, None]
    return v[:-1, None, :] + t[..., None] * (v[1:] - v[:-1])[:, None, :]


def lp_norm_over_s(h, p):
    """``||h(s)/s||_{L^p}`` by 8-point Gauss-Legendre quadrature per cell."""
    p = _check_p(p)
    s, w = _quad_nodes(h.N)
    q = np.linalg.norm(_values_at(h, s), axis=-1) / s
    return float(np.sum(w * q**p) ** (1.0 / p))


def _weighted_velocity(h, s):
    """``h' - h/s = s (h/s)'`` at quadrature nodes."""
    return h.slopes()[:, None, :] - _values_at(h, s) / s[..., None]


@dataclass
class HardyCheck:
    """Both sides of the Hardy inequality and of its reverse bound.

    Iterating yields ``(lhs, rhs, ratio)``.
    """

    p: float
    lhs: float
    rhs: float
    ratio: float
    reverse_lhs: float
    reverse_rhs: float
    reverse_ratio: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.ratio))


def hardy_inequality_check(h, p=2.0):
    """``||h/s||_p`` against ``A_p ||h||_{H^p}``, and ``||h||_{H^p}`` against
    ``B_p ||h' - h/s||_p``; ratios are reported as 0 for the zero path."""
    p = _check_p(p)
    lhs = lp_norm_over_s(h, p)
    norm = hp_norm(h, p)
    rhs = hardy_constant(p) * norm
    s, w = _quad_nodes(h.N)
    wv = np.linalg.norm(_weighted_velocity(h, s), axis=-1)
    rev_rhs = reverse_hardy_constant(p) * float(np.sum(w * wv**p) ** (1.0 / p))
    ratio = lhs / rhs if rhs > 0 else 0.0
    rev_ratio = norm / rev_rhs if rev_rhs > 0 else 0.0
    return HardyCheck(p, lhs, rhs, ratio, norm, rev_rhs, rev_ratio)


def hardy_apply(kind, f):
    """Apply a Hardy-type operator to ``f`` given as cell values (N, d).

    ``f`` is taken piecewise constant on the cells ``(i/N, (i+1)/N)``; the
    integrals are then exact.

    * ``"S"``: ``(Sf)(t) = t^-1 int_0^t f``, returned at the nodes, shape
      (N+1, d), with the limit ``f_0`` at ``t = 0``;
    * ``"T"``: ``(Tf)(t) = -t int_t^1 f(s)/s ds``, a :class:`DiscretePath`;
    * ``"R"``: ``(Rf)(t) = int_0^t (f - int_0^1 f)``, a :class:`DiscretePath`.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    if not np.all(np.isfinite(f)):
        raise ValueError("f must be finite")
    N = f.shape[0]
    t = np.arange(N + 1) / N
    if kind == "S":
        cum = np.concatenate([np.zeros((1, f.shape[1])), np.cumsum(f, axis=0) / N])
        out = np.empty_like(cum)
        out[0] = f[0]
        out[1:] = cum[1:] / t[1:, None]
        return out
    if kind == "T":
        logs = np.empty(N)
        logs[0] = 0.0                       # unused: the first cell only enters at t = 0
        logs[1:] = np.log(t[2:] / t[1:-1])
        cell = f * logs[:, None]
        # tail[j] = int_{t_j}^1 f/s for j >= 1
        tail = np.concatenate([np.cumsum(cell[::-1], axis=0)[::-1], np.zeros((1, f.shape[1]))])
        out = -t[:, None] * tail
        out[0] = 0.0
        return DiscretePath(out)
    if kind == "R":
        g = f - f.mean(axis=0)
        out = np.concatenate([np.zeros((1, f.shape[1])), np.cumsum(g, axis=0) / N])
        out[-1] = 0.0
        return DiscretePath(out)
    raise ValueError(f"unknown Hardy operator {kind!r}; expected 'S', 'T' or 'R'")


# --------------------------------------------------------------------------
# the metric-weighted pairing
# --------------------------------------------------------------------------
def _weights_along(Gs, s):
    """Metric values at quadrature nodes: ``Gs`` is a callable of ``s`` or an
    array of cell values (N, d, d)."""
    if callable(Gs):
        return np.asarray(Gs(s), dtype=float)
    Gs = np.asarray(Gs, dtype=float)
    return np.broadcast_to(Gs[:, None], s.shape + Gs.shape[-2:])


def weighted_pairing(h, g, Gs):
    """``[h, g] = int 2 (h' - h/s) G(s) (g' - g/s) ds``."""
    s, w = _quad_nodes(h.N)
    uh = _weighted_velocity(h, s)
    ug = _weighted_velocity(g, s)
    M = _weights_along(Gs, s)
    return float(2.0 * np.einsum("nm,nmi,nmij,nmj->", w, uh, M, ug))


def weighted_dual_norm(h, Gs, p=2.0):
    """``sup |[h, g]|`` over ``||g||_{H^q} <= 1`` on the same grid.

    The pairing is linear in the slopes ``sigma`` of ``g`` (which sum to
    zero), so the supremum is the dual quotient norm
    ``min_mu (int |L - mu|^p)^(1/p)`` of the representing slope field ``L``.
    """
    p = _check_p(p)
    N, d = h.N, h.dim
    s, w = _quad_nodes(N)
    uh = _weighted_velocity(h, s)
    M = _weights_along(Gs, s)
    a = 2.0 * np.einsum("nm,nmi,nmij->nmj", w, uh, M)      # weight of u_g at nodes
    # u_g = g' - g/s with g linear on the cell: nodal contributions
    t = s * N - np.arange(N)[:, None]                        # local coordinate in [0,1]
    left = -N - (1.0 - t) / s                                # d u_g / d g_i
    right = N - t / s                                        # d u_g / d g_{i+1}
    c = np.zeros((N + 1, d))
    c[:-1] += np.einsum("nm,nmj->nj", left, a)
    c[1:] += np.einsum("nm,nmj->nj", right, a)
    # g_j = sum_{i<j} sigma_i / N  =>  [h, g] = (1/N) sum_i sigma_i L_i
    L = np.cumsum(c[:0:-1], axis=0)[::-1]                    # L_i = sum_{j>i} c_j
    L = L[: N]

    def obj(mu):
        return np.sum(np.linalg.norm(L - mu, axis=1) ** p) / N

    res = optimize.minimize(obj, L.mean(axis=0), method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 20000})
    return PairingNorm(p, float(obj(res.x) ** (1.0 / p)))


def pairing_equivalence_constants(a, b, p):
    """The constants ``(C1, C2)`` with ``C1^-1 ||h||_G <= ||h||_{H^p} <= C2 ||h||_G``."""
    q = conjugate(p)
    C1 = 2.0 * b * (1.0 + hardy_constant(q)) * (1.0 + hardy_constant(p))
    C2 = reverse_hardy_constant(q) * reverse_hardy_constant(p) / (2.0 * a)
    return C1, C2


def t_identity_residual(f, N):
    """Mean (L^1) residual of ``d/dt (Tf) - (Tf)/t - f`` over the interior
    cell midpoints, for ``f`` a callable on (0, 1) sampled at the midpoints.

    The first cell is skipped (``t^-1`` is singular there).  Cells next to
    ``t = 0`` carry an O(1) midpoint error from the ``ln t`` behaviour of
    ``Tf/t``, so the maximum does not decay; the mean is O(1/N).
    """
    mid = (np.arange(N) + 0.5) / N
    fv = np.asarray(f(mid), dtype=float)
    if fv.ndim == 1:
        fv = fv[:, None]
    Tf = hardy_apply("T", fv).values
    slope = np.diff(Tf, axis=0) * N
    Tmid = 0.5 * (Tf[1:] + Tf[:-1])
    res = slope - Tmid / mid[:, None] - fv
    return float(np.sum(np.linalg.norm(res[1:], axis=-1)) / N)
