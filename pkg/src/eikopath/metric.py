"""Order-zero metric fields ``G: R^d -> S_d(R)`` and their membership checks.

Fields are evaluated in batches: ``x`` of shape ``(..., d)`` gives matrices of
shape ``(..., d, d)``.  Derivative tensors put the differentiation indices
first, e.g. ``dG[..., k, i, j] = d_k g_ij`` and ``d2G[..., k, l, i, j]``.

Built-in fields differentiate themselves exactly: they are evaluated along
the lines ``x + t v`` for a small fixed set of directions ``v`` with
truncated Taylor jets, and the mixed partials are recovered from the
directional derivatives by polarization.  Fields given only as a callable
fall back to nested central differences.
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConditionViolationError, DomainError, MetricEvaluationError,
                     PreconditionError)
from .jets import Jet

MAX_DERIVATIVE_ORDER = 3
DEFECT_TOL = 1e-10

_GL_T, _GL_W = np.polynomial.legendre.leggauss(24)
_GL_T = 0.5 * (_GL_T + 1.0)
_GL_W = 0.5 * _GL_W


# --------------------------------------------------------------------------
# polarization
# --------------------------------------------------------------------------
def _directions(d, order):
    eye = np.eye(d)
    dirs = [eye[k] for k in range(d)]
    if order >= 2:
        dirs += [eye[k] + eye[l] for k, l in itertools.combinations(range(d), 2)]
    if order >= 3:
        dirs += [eye[k] - eye[l] for k, l in itertools.combinations(range(d), 2)]
        dirs += [eye[k] + eye[l] + eye[m] for k, l, m in itertools.combinations(range(d), 3)]
    return np.array(dirs)


@functools.lru_cache(maxsize=None)
def _polarization(d, order):
    V = _directions(d, order)
    systems = []
    for m in range(1, order + 1):
        idx = list(itertools.combinations_with_replacement(range(d), m))
        A = np.empty((len(V), len(idx)))
        for a, alpha in enumerate(idx):
            counts = np.bincount(alpha, minlength=d)
            norm = np.prod([math.factorial(c) for c in counts])
            A[:, a] = np.prod(V ** counts, axis=1) / norm
        systems.append((idx, np.linalg.pinv(A)))
    return V, systems


def _expand_symmetric(coeffs, idx, d, m):
    npts = coeffs.shape[1]
    out = np.empty((npts,) + (d,) * m + coeffs.shape[2:])
    for a, alpha in enumerate(idx):
        for perm in set(itertools.permutations(alpha)):
            out[(slice(None),) + perm] = coeffs[a]
    return out


# --------------------------------------------------------------------------
# matrix fields
# --------------------------------------------------------------------------
class MatrixField:
    """A smooth symmetric-matrix-valued field on R^d."""

    dim: int

    def derivatives(self, x, order=2):
        """Return ``[G, dG, ..., d^order G]`` at the points ``x``."""
        raise NotImplementedError

    def __call__(self, x):
        return self.derivatives(x, 0)[0]


class JetField(MatrixField):
    """Field that can be expanded along lines with :class:`Jet` arithmetic.

    Subclasses implement ``_jets(pts, V, order)`` returning a jet whose
    coefficients have shape ``(order + 1, ndir, npts, d, d)``: the expansion of
    ``t -> G(pts + t V[i])``.
    """

    def _jets(self, pts, V, order):
        raise NotImplementedError

    def derivatives(self, x, order=2):
        if order > MAX_DERIVATIVE_ORDER:
            raise ValueError(f"derivatives above order {MAX_DERIVATIVE_ORDER} unsupported")
        x = np.asarray(x, dtype=float)
        d = self.dim
        if x.shape[-1] != d:
            raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
        lead = x.shape[:-1]
        pts = x.reshape(-1, d)
        if order == 0:
            J = self._jets(pts, np.zeros((1, d)), 0)
            return [J.c[0, 0].reshape(lead + (d, d))]
        V, systems = _polarization(d, order)
        J = self._jets(pts, V, order)
        out = [J.c[0, 0]]
        for m, (idx, pinv) in enumerate(systems, start=1):
            coeffs = np.tensordot(pinv, J.c[m], axes=(1, 0))
            out.append(_expand_symmetric(coeffs, idx, d, m))
        return [arr.reshape(lead + arr.shape[1:]) for arr in out]


class ConstantField(JetField):
    def __init__(self, matrix):
        self.matrix = np.array(matrix, dtype=float)
        self.dim = self.matrix.shape[0]

    def _jets(self, pts, V, order):
        c = np.zeros((order + 1, len(V), len(pts), self.dim, self.dim))
        c[0] = self.matrix
        return Jet(c)


class RadialProfile:
    """Scalar profile ``F(w)`` of ``w = |x|^2`` with derivatives in ``w``.

    ``derivs(w, order)`` returns an array of shape ``(order + 1,) + w.shape``
    holding ``F, F', ..., F^(order)``.  ``bounds()`` gives the range of ``F``
    over ``w >= 0``.
    """

    def derivs(self, w, order):
        raise NotImplementedError

    def bounds(self):
        raise NotImplementedError


class BracketProfile(RadialProfile):
    """``F(w) = floor + (1 - floor) (1 + w)^(-beta)``."""

    def __init__(self, beta, floor=0.0):
        self.beta = float(beta)
        self.floor = float(floor)

    def derivs(self, w, order):
        w = np.asarray(w, dtype=float)
        out = np.empty((order + 1,) + w.shape)
        coef = 1.0 - self.floor
        for m in range(order + 1):
            out[m] = coef * (1.0 + w) ** (-self.beta - m)
            coef *= -self.beta - m
        out[0] += self.floor
        return out

    def bounds(self):
        ends = (self.floor, 1.0)
        return min(ends), max(ends)


class RadialBlockField(JetField):
    """``G(x) = P + F(|x|^2) P_perp``, written as ``F I + Q x x^T``.

    ``Q = (1 - F)/w`` is evaluated by the recursion ``w Q^(n) + n Q^(n-1) =
    -F^(n)`` for ``w >= 1`` and by Gauss-Legendre quadrature of
    ``Q^(n)(w) = -int_0^1 t^n F^(n+1)(t w) dt`` for ``w < 1``, where the
    recursion would cancel catastrophically.
    """

    W_SWITCH = 1.0

    def __init__(self, profile, dim):
        self.profile = profile
        self.dim = dim

    def profile_and_q(self, w, order):
        F = self.profile.derivs(w, order)
        Q = np.empty_like(F)
        big = w >= self.W_SWITCH
        if np.any(big):
            wb = w[big]
            Fb = F[:, big]
            Q[0, big] = (1.0 - Fb[0]) / wb
            for n in range(1, order + 1):
                Q[n, big] = (-Fb[n] - n * Q[n - 1, big]) / wb
        small = ~big
        if np.any(small):
            ws = w[small]
            nodes = _GL_T[:, None] * ws[None, :]
            Fs = self.profile.derivs(nodes.ravel(), order + 1).reshape(
                (order + 2,) + nodes.shape)
            for n in range(order + 1):
                Q[n, small] = -np.einsum("k,kp->p", _GL_W * _GL_T**n, Fs[n + 1])
        return F, Q

    def _jets(self, pts, V, order):
        w0 = np.einsum("pi,pi->p", pts, pts)
        F, Q = self.profile_and_q(w0, order)
        x0 = pts[None, :, :]
        v = V[:, None, :]
        xj = Jet.linear(x0, v, order)
        wc = np.zeros((order + 1, len(V), len(pts)))
        wc[0] = w0
        if order >= 1:
            wc[1] = 2.0 * np.einsum("pi,ki->kp", pts, V)
        if order >= 2:
            wc[2] = np.einsum("ki,ki->k", V, V)[:, None]
        wj = Jet(wc)
        Fj = wj.compose(F[:, None, :] if F.ndim == 2 else F)
        Qj = wj.compose(Q[:, None, :] if Q.ndim == 2 else Q)
        outer = Jet(xj.c[..., :, None]) * Jet(xj.c[..., None, :])
        eye = np.eye(self.dim)
        return Jet(Fj.c[..., None, None] * eye) + Jet(Qj.c[..., None, None]) * outer


class ConformalField(JetField):
    """``G(x) = exp(psi(x)) I`` for a scalar exponent given on jets.

    ``exponent(xj)`` receives the jet of the points (coefficient shape
    ``(order + 1, ndir, npts, d)``) and returns the jet of ``psi``.
    """

    def __init__(self, exponent, dim):
        self.exponent = exponent
        self.dim = dim

    def _jets(self, pts, V, order):
        xj = Jet.linear(pts[None, :, :], V[:, None, :], order)
        g = self.exponent(xj).exp()
        return Jet(g.c[..., None, None] * np.eye(self.dim))


class CompactBump(JetField):
    """``B(x) = (1 - |x - c|^2 / R^2)_+^4 M``: a C^3 compactly supported bump."""

    def __init__(self, center, radius, matrix):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.matrix = np.asarray(matrix, dtype=float)
        self.dim = self.center.shape[0]

    def _jets(self, pts, V, order):
        xj = Jet.linear(pts[None, :, :] - self.center, V[:, None, :], order)
        q = (xj * xj).sum(-1) / self.radius**2
        q0 = q.c[0]
        inside = q0 < 1.0
        one_minus = np.where(inside, 1.0 - q0, 0.0)
        ds = []
        coef = 1.0
        for m in range(order + 1):
            p = 4 - m
            ds.append(coef * one_minus**p if p >= 0 else np.zeros_like(q0))
            coef *= -p
        beta = q.compose(ds)
        return Jet(beta.c[..., None, None] * self.matrix)


class TailField(JetField):
    """``B(x) = <x>^(-2 beta) M``: a slowly decaying order-zero perturbation."""

    def __init__(self, matrix, beta=0.25):
        self.matrix = np.asarray(matrix, dtype=float)
        self.beta = float(beta)
        self.dim = self.matrix.shape[0]

    def _jets(self, pts, V, order):
        xj = Jet.linear(pts[None, :, :], V[:, None, :], order)
        s = ((xj * xj).sum(-1) + 1.0).power(-self.beta)
        return Jet(s.c[..., None, None] * self.matrix)


class SumField(MatrixField):
    """``base + eps * delta``."""

    def __init__(self, base, delta, eps):
        if base.dim != delta.dim:
            raise ValueError("dimension mismatch")
        self.base, self.delta, self.eps = base, delta, float(eps)
        self.dim = base.dim

    def derivatives(self, x, order=2):
        a = self.base.derivatives(x, order)
        if self.eps == 0.0:
            return a
        b = self.delta.derivatives(x, order)
        return [ai + self.eps * bi for ai, bi in zip(a, b)]


class ScaledField(MatrixField):
    def __init__(self, field_, scale):
        self.field, self.scale = field_, float(scale)
        self.dim = field_.dim

    def derivatives(self, x, order=2):
        return [self.scale * a for a in self.field.derivatives(x, order)]


class CallableField(MatrixField):
    """Field given only by ``func(x) -> (d, d)``; derivatives by nested central
    differences with step ``1e-4 * max(1, |x|)``."""

    def __init__(self, func, dim, rel_step=1e-4):
        self.func = func
        self.dim = dim
        self.rel_step = rel_step

    def _values(self, pts):
        return np.array([np.asarray(self.func(p), dtype=float) for p in pts])

    def derivatives(self, x, order=2):
        if order > MAX_DERIVATIVE_ORDER:
            raise ValueError(f"derivatives above order {MAX_DERIVATIVE_ORDER} unsupported")
        x = np.asarray(x, dtype=float)
        d = self.dim
        lead = x.shape[:-1]
        pts = x.reshape(-1, d)
        h = self.rel_step * np.maximum(1.0, np.linalg.norm(pts, axis=-1))

        def deriv(k_seq, p, hp):
            # nested central differences over the index sequence k_seq
            if not k_seq:
                return self._values(p)
            k = k_seq[0]
            shift = np.zeros(d)
            shift[k] = 1.0
            plus = deriv(k_seq[1:], p + hp[:, None] * shift, hp)
            minus = deriv(k_seq[1:], p - hp[:, None] * shift, hp)
            return (plus - minus) / (2.0 * hp[:, None, None])

        out = [self._values(pts)]
        for m in range(1, order + 1):
            T = np.empty((len(pts),) + (d,) * m + (d, d))
            for alpha in itertools.combinations_with_replacement(range(d), m):
                val = deriv(list(alpha), pts, h)
                for perm in set(itertools.permutations(alpha)):
                    T[(slice(None),) + perm] = val
            out.append(T)
        return [arr.reshape(lead + arr.shape[1:]) for arr in out]


# --------------------------------------------------------------------------
# metric fields
# --------------------------------------------------------------------------
KINDS = ("euclidean", "analytic", "potential-induced", "spiral", "perturbed")


@dataclass
class MetricField:
    """An order-zero metric with its declared constants.

    ``a`` and ``b`` are the declared ellipticity constants (``None`` when the
    field is not known to be uniformly elliptic, e.g. test-only profiles).
    For ``kind == "perturbed"`` the unperturbed ``base`` metric, the
    perturbation field and ``eps`` are retained.
    """

    field: MatrixField
    kind: str
    order: int = 2
    a: float | None = None
    b: float | None = None
    name: str = ""
    base: "MetricField | None" = None
    perturbation: MatrixField | None = None
    eps: float = 0.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError("dimension must be at least 2")
        if self.order < 2:
            raise ValueError("smoothness order l must be at least 2")

    @property
    def dim(self):
        return self.field.dim

    def __call__(self, x):
        return self.field(x)

    def derivatives(self, x, order=2):
        return self.field.derivatives(x, min(order, MAX_DERIVATIVE_ORDER))

    def inverse(self, x):
        return np.linalg.inv(self(x))


def euclidean(d=2, scale=1.0, order=3):
    s = float(scale)
    kind = "euclidean" if s == 1.0 else "analytic"
    return MetricField(ConstantField(s * np.eye(d)), kind, order, s, s,
                       name=f"{s:g}*I" if s != 1.0 else "euclidean")


def constant_metric(matrix, order=3):
    M = np.array(matrix, dtype=float)
    ev = np.linalg.eigvalsh(M)
    if ev[0] <= 0:
        raise ConditionViolationError("constant metric is not positive definite")
    return MetricField(ConstantField(M), "analytic", order, ev[0], ev[-1], name="constant")


def radial_block_metric(profile, d=2, kind="analytic", order=3, name="radial", params=None):
    lo, hi = profile.bounds()
    a = min(1.0, lo) if lo > 0 else None
    return MetricField(RadialBlockField(profile, d), kind, order, a, max(1.0, hi),
                       name=name, params=dict(params or {}))


def from_callable(func, d, a=None, b=None, order=2, name="callable"):
    return MetricField(CallableField(func, d), "analytic", order, a, b, name=name)


def perturbed(G, delta, eps, sup_norm=None):
    """``G + eps * delta``; ``sup_norm`` bounds the operator norm of ``delta``."""
    a = b = None
    if G.a is not None and sup_norm is not None:
        a = G.a - abs(eps) * sup_norm
        b = G.b + abs(eps) * sup_norm
        if a <= 0:
            a = None
    return MetricField(SumField(G.field, delta, eps), "perturbed", G.order, a, b,
                       name=f"{G.name}+{eps:g}*delta", base=G, perturbation=delta,
                       eps=float(eps), params=dict(G.params))


# --------------------------------------------------------------------------
# sampling lattices
# --------------------------------------------------------------------------
def _sphere_directions(d, n):
    if d == 2:
        ang = 2.0 * np.pi * np.arange(n) / n
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    # grid on the surface of the cube [-1, 1]^d with n subdivisions per edge
    ticks = np.linspace(-1.0, 1.0, n + 1)
    grid = np.array(list(itertools.product(ticks, repeat=d)))
    surf = grid[np.max(np.abs(grid), axis=1) == 1.0]
    return surf / np.linalg.norm(surf, axis=1, keepdims=True)


@dataclass
class LogRadialLattice:
    """Points ``r * omega`` on log-spaced radii times sphere directions.

    For ``d == 2`` ``n_dirs`` is the number of equally spaced angles; for
    ``d >= 3`` it is the number of subdivisions per edge of a cube-surface
    grid.  :meth:`refined` returns a superset lattice.
    """

    d: int = 2
    n_radii: int = 64
    n_dirs: int = 32
    r_min: float = 1e-2
    r_max: float = 1e4

    def radii(self):
        return np.geomspace(self.r_min, self.r_max, self.n_radii)

    def directions(self):
        return _sphere_directions(self.d, self.n_dirs)

    def points(self):
        r = self.radii()
        om = self.directions()
        return (r[:, None, None] * om[None, :, :]).reshape(-1, self.d)

    def refined(self):
        return LogRadialLattice(self.d, 2 * self.n_radii - 1, 2 * self.n_dirs,
                                self.r_min, self.r_max)


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------
def _bracket(x):
    return np.sqrt(1.0 + np.sum(np.asarray(x) ** 2, axis=-1))


def eval_metric(G, x):
    """``G(x)``; raises :class:`MetricEvaluationError` on non-finite entries."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise MetricEvaluationError(f"non-finite point {x.tolist()}")
    M = G(x)
    bad = ~np.all(np.isfinite(M), axis=(-2, -1))
    if np.any(bad):
        where = x.reshape(-1, G.dim)[np.flatnonzero(bad.ravel())[0]]
        raise MetricEvaluationError(f"non-finite metric entries at x={where.tolist()}")
    return M


def ellipticity_estimate(G, samples):
    """Sampled ``(a_est, b_est)``: extreme eigenvalues of ``G`` over samples."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.size == 0:
        raise ValueError("empty sample set")
    M = eval_metric(G, samples)
    ev = np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2)))
    bad = ev[:, 0] <= 0.0
    if np.any(bad):
        p = samples[np.flatnonzero(bad)[0]]
        raise ConditionViolationError(f"metric not positive definite at x={p.tolist()}")
    return float(ev[:, 0].min()), float(ev[:, -1].max())


def _projections(x):
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise DomainError("orthogonal decomposition undefined at x = 0")
    om = x / r[..., None]
    P = om[..., :, None] * om[..., None, :]
    return P, np.eye(x.shape[-1]) - P


def orthogonal_decomposition_defect(G, x):
    """Operator norm of ``G(x) - P - P_perp G(x) P_perp``; zero iff G has the
    radial block form at ``x``."""
    x = np.asarray(x, dtype=float)
    P, Pp = _projections(x)
    M = eval_metric(G, x)
    R = M - P - Pp @ M @ Pp
    return np.linalg.norm(R, ord=2, axis=(-2, -1))


def _perp_basis(x):
    """Orthonormal bases of ``x^perp``, shape ``(npts, d, d-1)``."""
    npts, d = x.shape
    om = x / np.linalg.norm(x, axis=1, keepdims=True)
    # Householder reflection mapping e_1 to omega; its other columns span omega^perp
    e1 = np.zeros(d)
    e1[0] = 1.0
    sgn = np.where(om[:, 0] >= 0, 1.0, -1.0)
    u = om + sgn[:, None] * e1
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    H = np.eye(d) - 2.0 * u[:, :, None] * u[:, None, :]
    return H[:, :, 1:]


@dataclass
class ConvexityReport:
    samples: np.ndarray
    margins: np.ndarray
    c_bar: float
    threshold: float
    in_O: bool

    def to_dict(self):
        return {"n_samples": int(len(self.samples)), "c_bar": self.c_bar,
                "threshold": self.threshold, "in_O": self.in_O,
                "min_margin_at": self.samples[int(np.argmin(self.margins))].tolist()}


def convexity_margin(G, samples, directions=32, threshold=1e-3, seed=0):
    """Smallest ratio ``v P_perp (G + x.grad G / 2) P_perp v / v P_perp G P_perp v``.

    The block generalized eigenvalue gives the minimizer; ``directions``
    random unit vectors in ``x^perp`` guard the eigen solve.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if np.any(np.linalg.norm(samples, axis=1) == 0.0):
        raise DomainError("samples must exclude the origin")
    defect = orthogonal_decomposition_defect(G, samples)
    if np.any(defect > DEFECT_TOL):
        i = int(np.argmax(defect))
        raise PreconditionError(
            f"orthogonal decomposition defect {defect[i]:.3e} at x={samples[i].tolist()}")
    M, dM = G.derivatives(samples, 1)
    T = M + 0.5 * np.einsum("pk,pkij->pij", samples, dM)
    W = _perp_basis(samples)
    A = np.einsum("pia,pij,pjb->pab", W, T, W)
    B = np.einsum("pia,pij,pjb->pab", W, M, W)
    L = np.linalg.cholesky(B)
    Linv = np.linalg.inv(L)
    C = Linv @ A @ np.swapaxes(Linv, -1, -2)
    eig = np.linalg.eigvalsh(0.5 * (C + np.swapaxes(C, -1, -2)))[:, 0]
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(directions, samples.shape[1] - 1))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    num = np.einsum("na,pab,nb->pn", u, A, u)
    den = np.einsum("na,pab,nb->pn", u, B, u)
    margins = np.minimum(eig, (num / den).min(axis=1))
    c_bar = float(margins.min())
    return ConvexityReport(samples, margins, c_bar, threshold, bool(c_bar >= threshold))


@dataclass
class SeminormReport:
    suprema: dict
    estimate: float
    order: int
    n_points: int

    def to_dict(self):
        return {"estimate": self.estimate, "order": self.order, "n_points": self.n_points,
                "suprema": {str(k): v for k, v in self.suprema.items()}}


def _seminorm_of(derivs, pts, order):
    br = _bracket(pts)
    d = pts.shape[-1]
    sup = {(): float(np.max(np.abs(derivs[0])))}
    for m in range(1, order + 1):
        T = np.abs(derivs[m]) * br.reshape((-1,) + (1,) * (m + 2)) ** m
        for alpha in itertools.combinations_with_replacement(range(d), m):
            sup[alpha] = float(np.max(T[(slice(None),) + alpha]))
    return sup


def seminorm(G, lattice=None, order=None, chunk=4096):
    """Sampled ``||G||_l = sup <x>^|alpha| |d^alpha g_ij|`` on a lattice."""
    return perturbation_distance(G, None, lattice, order, chunk)


def perturbation_distance(G_tilde, G, lattice=None, order=None, chunk=4096):
    """Sampled estimate of ``||G_tilde - G||_l``; ``G=None`` gives ``||G_tilde||_l``.

    This is a lower bound for the true supremum over R^d.
    """
    if G is not None and (G.dim != G_tilde.dim):
        raise ValueError("dimension mismatch")
    order = min(order or G_tilde.order, MAX_DERIVATIVE_ORDER)
    if lattice is None:
        lattice = LogRadialLattice(G_tilde.dim)
    pts = lattice.points() if hasattr(lattice, "points") else np.asarray(lattice, float)
    total = {}
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        dt = G_tilde.derivatives(p, order)
        if G is not None:
            dg = G.derivatives(p, order)
            dt = [a - b for a, b in zip(dt, dg)]
        for k, v in _seminorm_of(dt, p, order).items():
            total[k] = max(total.get(k, 0.0), v)
    return SeminormReport(total, max(total.values()), order, len(pts))
