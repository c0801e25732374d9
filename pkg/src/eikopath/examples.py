"""Metric families built from radial potentials, and the logarithmic-spiral metric.

Potential-induced metrics
-------------------------
For a radial potential ``V`` and energy ``lam >= 0`` put ``K = 2 (lam - V)``
and ``rho(r) = int_0^r sqrt(K)``.  The radial map ``Phi(y) = r(|y|) y/|y|``
(with ``r`` the inverse of ``rho``) pulls the conformal metric ``K I`` back
to ``G(y) = P + f(|y|)^2 P_perp`` with ``f(rho) = sqrt(K(r)) r / rho``; in
the ``y`` coordinates the distance to the origin is exactly ``|y|``.

Numerically everything is expressed in ``u = r^2`` and ``w = rho^2 = |y|^2``.
With ``Psi(u) = rho / r`` one has ``w = u Psi^2`` and ``F = f^2 = k / Psi^2``
where ``k(u) = K(sqrt(u))``.  ``Psi`` and its ``u``-derivatives come from
Gauss-Legendre quadrature for ``u < 1`` and from the identity
``2 u Psi' + Psi = sqrt(k)`` (differentiated ``n`` times) for ``u >= 1``;
``F`` as a function of ``w`` is then obtained by series reversion.

Spiral metric
-------------
A conformal metric ``exp(2 eps f(theta - eps ln r) chi(r)) I`` on the plane,
flat inside the unit disc, whose geodesics wind around the origin like
logarithmic spirals.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .errors import ConstructionError, PreconditionError
from .jets import Jet, compose_series, revert_series
from .metric import (ConformalField, MetricField, RadialBlockField, RadialProfile,
                     convexity_margin, euclidean, ellipticity_estimate, orthogonal_decomposition_defect)
from .solver import integrate_batch

_GL16_T, _GL16_W = np.polynomial.legendre.leggauss(16)
_GL16_T = 0.5 * (_GL16_T + 1.0)
_GL16_W = 0.5 * _GL16_W
_GL24_T, _GL24_W = np.polynomial.legendre.leggauss(24)
_GL24_T = 0.5 * (_GL24_T + 1.0)
_GL24_W = 0.5 * _GL24_W

F_ORDER = 4            # F is needed up to its 4th w-derivative
U_SWITCH = 1.0


# --------------------------------------------------------------------------
# radial potentials
# --------------------------------------------------------------------------
@dataclass
class RadialPotential:
    """``V(r) = -sum_j A_j <r>^(-2 p_j)``, a finite sum of negative power brackets.

    ``mu`` is the declared decay exponent (``mu in (0, 2)`` decaying,
    ``mu <= 0`` non-decaying) and ``sigma`` the virial constant in
    ``r V' + 2 V <= sigma V``.
    """

    terms: tuple
    mu: float
    sigma: float
    lam: float = 0.0
    order: int = 3
    name: str = "potential"

    # constructors ---------------------------------------------------------
    @classmethod
    def decaying(cls, mu=1.0, A=1.0, lam=0.0, sigma=None, order=3):
        """``V = -A <r>^-mu``; the largest admissible ``sigma`` is ``2 - mu``."""
        sigma = 2.0 - mu if sigma is None else sigma
        return cls(((float(A), mu / 2.0),), float(mu), float(sigma), float(lam), order,
                   name=f"decaying(mu={mu:g})")

    @classmethod
    def constant(cls, value=-0.5, lam=0.0, sigma=2.0, order=3):
        if value >= 0:
            raise ConstructionError("the potential must be negative")
        return cls(((-float(value), 0.0),), 0.0, float(sigma), float(lam), order,
                   name=f"constant({value:g})")

    @classmethod
    def two_term(cls, A0=0.5, A1=0.5, nu=1.0, lam=0.0, sigma=1.0, order=3):
        """``V = -A0 - A1 <r>^-nu``: a non-decaying (``mu = 0``) potential."""
        return cls(((float(A0), 0.0), (float(A1), nu / 2.0)), 0.0, float(sigma),
                   float(lam), order, name=f"two_term(nu={nu:g})")

    def with_energy(self, lam):
        return RadialPotential(self.terms, self.mu, self.sigma, float(lam), self.order, self.name)

    # evaluation -----------------------------------------------------------
    def V_u(self, u, n=0):
        """``d^n/du^n V`` as a function of ``u = r^2``; shape ``(n+1,) + u.shape``."""
        u = np.asarray(u, dtype=float)
        out = np.zeros((n + 1,) + u.shape)
        for A, p in self.terms:
            coef = -A
            for m in range(n + 1):
                out[m] += coef * (1.0 + u) ** (-p - m)
                coef *= -p - m
        return out

    def V(self, r):
        return self.V_u(np.asarray(r, dtype=float) ** 2)[0]

    def K(self, r):
        return 2.0 * (self.lam - self.V(r))

    def k_u(self, u, n=0):
        """``k(u) = K(sqrt(u))`` and its ``u``-derivatives."""
        out = -2.0 * self.V_u(u, n)
        out[0] += 2.0 * self.lam
        return out

    @property
    def constant_near_zero(self):
        """Whether ``V`` is constant near the origin (true only for constants)."""
        return all(p == 0.0 for _, p in self.terms)

    # checks ---------------------------------------------------------------
    def envelope(self, r):
        """Sampled ``(a_V, A_V)`` with ``-A_V <r>^-mu <= V <= -a_V <r>^-mu``."""
        r = np.asarray(r, dtype=float)
        q = -self.V(r) * (1.0 + r * r) ** (self.mu / 2.0)
        return float(q.min()), float(q.max())

    def virial_margin(self, r):
        """``min_r (2 + r V'/V) - sigma``; nonnegative iff the virial bound holds."""
        u = np.asarray(r, dtype=float) ** 2
        Vd = self.V_u(u, 1)
        ratio = 2.0 + 2.0 * u * Vd[1] / Vd[0]
        return float(ratio.min() - self.sigma)

    def check(self, r=None, tol=1e-12):
        if r is None:
            r = np.concatenate([[0.0], np.geomspace(1e-3, 1e6, 2000)])
        if not (0.0 < self.sigma <= 2.0):
            raise ConstructionError(f"virial constant sigma={self.sigma} outside (0, 2]")
        if self.lam < 0:
            raise ConstructionError("energy lam must be nonnegative")
        if self.mu >= 2.0:
            raise ConstructionError("decay exponent mu must be below 2")
        if np.any(self.V(r) >= 0):
            raise ConstructionError("potential must be negative")
        if self.virial_margin(r) < -tol:
            raise ConstructionError(
                f"virial bound r V' + 2V <= sigma V fails (margin {self.virial_margin(r):.3e})")
        a_V, A_V = self.envelope(r)
        if not a_V > 0:
            raise ConstructionError("envelope constant a_V must be positive")
        return a_V, A_V

    def to_dict(self):
        return {"name": self.name, "terms": [list(t) for t in self.terms], "mu": self.mu,
                "sigma": self.sigma, "lam": self.lam, "order": self.order}


def radial_eikonal_oracle(pot, r, epsabs=1e-10):
    """``S(r) = int_0^r sqrt(K)`` by adaptive quadrature."""
    r = float(r)
    if r < 0:
        raise ValueError("r must be nonnegative")
    val, _ = integrate.quad(lambda t: math.sqrt(pot.K(t)), 0.0, r, epsabs=epsabs,
                            epsrel=1e-13, limit=500)
    return val


def integral_bounds(pot, r=None):
    """The ``(c, C)`` enclosing ``int_0^1 sqrt(K(s r)/K(r)) ds`` uniformly in lam.

    ``c = sqrt(a_V/A_V)`` and ``C = sqrt(A_V/a_V) sup phi`` for decaying
    potentials, with ``phi(r) = <r>^(mu/2) r^-1 int_0^r <t>^(-mu/2) dt``
    (limits 1 and ``2/(2 - mu)``); for ``mu <= 0`` the roles swap.
    """
    if r is None:
        r = np.geomspace(1e-3, 1e6, 400)
    a_V, A_V = pot.envelope(np.concatenate([[0.0], r]))
    mu = pot.mu
    phi = np.array([(1 + t * t) ** (mu / 4) / t
                    * integrate.quad(lambda z: (1 + z * z) ** (-mu / 4), 0, t, limit=200)[0]
                    for t in r])
    if mu > 0:
        return math.sqrt(a_V / A_V), math.sqrt(A_V / a_V) * max(phi.max(), 2.0 / (2.0 - mu))
    return math.sqrt(a_V / A_V) * min(phi.min(), 1.0), math.sqrt(A_V / a_V)


# --------------------------------------------------------------------------
# the rho table
# --------------------------------------------------------------------------
class InducedMetricTable:
    """``rho(r) = int_0^r sqrt(K)`` on log-spaced nodes, its inverse and ``f``.

    ``rho`` is exact to rounding at the nodes (16-point Gauss-Legendre per
    interval) and between them (a further Gauss-Legendre integral from the
    nearest node).  ``r(rho)`` is found by Newton's method started from linear
    interpolation of the node values.  The table extends itself when asked
    for radii beyond its last node.
    """

    def __init__(self, pot, n_nodes=10_000, r_min=1e-3, r_max=1e5):
        self.pot = pot
        self.n_nodes = n_nodes
        self._lock = threading.Lock()
        self.r = np.concatenate([[0.0], np.geomspace(r_min, r_max, n_nodes)])
        self.rho_nodes = np.concatenate([[0.0], np.cumsum(self._segments(self.r[:-1], self.r[1:]))])
        self._ratio = self.r[-1] / self.r[-2]
        if not np.all(np.diff(self.rho_nodes) > 0):
            raise ConstructionError("rho is not strictly increasing on the table")

    def _segments(self, a, b):
        t = a[:, None] + (b - a)[:, None] * _GL16_T[None, :]
        vals = np.sqrt(self.pot.K(t))
        if not np.all(np.isfinite(vals)):
            raise ConstructionError("non-finite sqrt(K) during table construction")
        return (b - a) * (vals @ _GL16_W)

    def _extend_to_r(self, r_need):
        with self._lock:
            if r_need <= self.r[-1]:
                return
            n_more = int(np.ceil(np.log(r_need / self.r[-1]) / np.log(self._ratio))) + 1
            new_r = self.r[-1] * self._ratio ** np.arange(1, n_more + 1)
            seg = self._segments(np.concatenate([[self.r[-1]], new_r[:-1]]), new_r)
            self.rho_nodes = np.concatenate([self.rho_nodes, self.rho_nodes[-1] + np.cumsum(seg)])
            self.r = np.concatenate([self.r, new_r])

    def _extend_to_rho(self, rho_need):
        while rho_need > self.rho_nodes[-1]:
            self._extend_to_r(self.r[-1] * 10.0)

    # rho and its inverse --------------------------------------------------
    def rho(self, r):
        r = np.asarray(r, dtype=float)
        if r.size and r.max() > self.r[-1]:
            self._extend_to_r(float(r.max()))
        idx = np.clip(np.searchsorted(self.r, r, side="right") - 1, 0, len(self.r) - 2)
        return self.rho_nodes[idx] + self._segments(self.r[idx].ravel(), r.ravel()).reshape(r.shape)

    def r_of_rho(self, rho, tol=1e-15, max_iter=50):
        rho = np.asarray(rho, dtype=float)
        if np.any(rho < 0):
            raise ValueError("rho must be nonnegative")
        if rho.size:
            self._extend_to_rho(float(rho.max()))
        r = np.interp(rho, self.rho_nodes, self.r)
        for _ in range(max_iter):
            step = (self.rho(r) - rho) / np.sqrt(self.pot.K(r))
            r = np.maximum(r - step, 0.0)
            # quadratic convergence: after a relative step of sqrt(tol) the
            # updated iterate is already accurate to about tol
            if np.all(np.abs(step) <= np.sqrt(tol) * np.maximum(r, 1e-300)):
                break
        return r

    def f(self, rho):
        """Conformal factor ``f(rho) = sqrt(K(r)) r / rho`` (1 at the origin)."""
        return np.sqrt(self.F_w(np.asarray(rho, dtype=float) ** 2, 0)[0])

    # Psi = rho / r as a function of u = r^2 -------------------------------
    def psi_u(self, u, n):
        """``Psi, Psi', ..., Psi^(n)`` in ``u``; shape ``(n+1,) + u.shape``."""
        u = np.asarray(u, dtype=float)
        shape = u.shape
        u = u.ravel()
        out = np.empty((n + 1,) + u.shape)
        small = u < U_SWITCH
        if np.any(small):
            us = u[small]
            nodes = (_GL24_T[:, None] ** 2) * us[None, :]
            kap = self._sqrt_k_derivs(nodes, n)
            for m in range(n + 1):
                out[m][small] = np.einsum("k,kp->p", _GL24_W * _GL24_T ** (2 * m), kap[m])
        big = ~small
        if np.any(big):
            ub = u[big]
            r = np.sqrt(ub)
            out[0][big] = self.rho(r) / r
            kap = self._sqrt_k_derivs(ub, n)
            for m in range(n):
                out[m + 1][big] = (kap[m] - (2 * m + 1) * out[m][big]) / (2.0 * ub)
        return out.reshape((n + 1,) + shape)

    def _sqrt_k_derivs(self, u, n):
        kc = self.pot.k_u(u, n)
        fact = np.array([math.factorial(m) for m in range(n + 1)]).reshape((-1,) + (1,) * u.ndim)
        root = Jet(kc / fact).sqrt()
        return root.c * fact

    # F = f^2 as a function of w = rho^2 -----------------------------------
    def F_w(self, w, n):
        """``F, dF/dw, ..., d^n F/dw^n`` at ``w = |y|^2``."""
        w = np.asarray(w, dtype=float)
        u = self.r_of_rho(np.sqrt(w)) ** 2
        fact = np.array([math.factorial(m) for m in range(n + 1)]).reshape((-1,) + (1,) * w.ndim)
        psi = Jet(self.psi_u(u, n) / fact)
        k = Jet(self.pot.k_u(u, n) / fact)
        uj = Jet.linear(u, np.ones_like(u), n)
        psi2 = psi * psi
        Fu = k / psi2
        wu = uj * psi2
        back = revert_series(wu.c)
        return compose_series(Fu.c, back) * fact

    def limit_at_infinity(self):
        """``lim F`` as ``r -> inf``: 1 when ``K`` tends to a positive constant,
        ``(1 - p)^2`` when ``K ~ r^(-2p)`` with the slowest decay ``p``."""
        p_min = min(p for _, p in self.pot.terms)
        if self.pot.lam > 0 or p_min == 0.0:
            return 1.0
        return (1.0 - p_min) ** 2

    def bounds(self):
        """Range of ``F`` over every tenth table node and its limit at infinity."""
        rho = self.rho_nodes
        F = np.append(self.F_w(rho[::10] ** 2, 0)[0], self.limit_at_infinity())
        return float(F.min()), float(F.max())

    def to_csv(self, path):
        F = self.F_w(self.rho_nodes ** 2, 0)[0]
        np.savetxt(path, np.column_stack([self.r, self.rho_nodes, np.sqrt(F)]), delimiter=",",
                   header="r,rho,f", comments="", fmt="%.17g")


class InducedProfile(RadialProfile):
    """``F(w) = f(sqrt(w))^2`` backed by an :class:`InducedMetricTable`."""

    def __init__(self, table):
        self.table = table

    def derivs(self, w, order):
        if order > F_ORDER:
            raise ValueError(f"profile derivatives above order {F_ORDER} unsupported")
        return self.table.F_w(w, order)

    def bounds(self):
        return self.table.bounds()


def build_induced_metric(pot, d=2, n_nodes=10_000, r_min=1e-3, r_max=1e5):
    """Potential-induced metric ``G(y) = P + f(|y|)^2 P_perp`` in ``d`` dimensions."""
    pot.check()
    table = InducedMetricTable(pot, n_nodes, r_min, r_max)
    profile = InducedProfile(table)
    lo, hi = profile.bounds()
    if not lo > 0:
        raise ConstructionError("conformal factor must stay positive")
    params = dict(pot.to_dict())
    params["constant_near_zero"] = pot.constant_near_zero
    return MetricField(RadialBlockField(profile, d), "potential-induced", pot.order,
                       min(1.0, lo), max(1.0, hi), name=f"induced[{pot.name}, lam={pot.lam:g}]",
                       params=params)


def table_of(G):
    return G.field.profile.table


def Phi(G, y):
    """Radial map ``y -> r(|y|) y/|y|`` from metric to physical coordinates."""
    y = np.asarray(y, dtype=float)
    rho = np.linalg.norm(y, axis=-1, keepdims=True)
    r = table_of(G).r_of_rho(rho)
    return np.where(rho > 0, r * y / np.where(rho > 0, rho, 1.0), 0.0)


def Phi_inverse(G, z):
    z = np.asarray(z, dtype=float)
    r = np.linalg.norm(z, axis=-1, keepdims=True)
    rho = table_of(G).rho(r)
    return np.where(r > 0, rho * z / np.where(r > 0, r, 1.0), 0.0)


@dataclass
class MembershipReport:
    defect_max: float
    c_bar: float
    c_bar_required: float
    sup_f: float
    ellipticity: dict
    declared_envelope: tuple
    integral_bounds: tuple
    constant_near_zero: bool
    tol: float
    violations: list = field(default_factory=list)

    @property
    def in_O(self):
        return not self.violations

    def to_dict(self):
        return {"in_O": self.in_O, "defect_max": self.defect_max, "c_bar": self.c_bar,
                "c_bar_required": self.c_bar_required, "sup_f": self.sup_f,
                "ellipticity": {str(k): v for k, v in self.ellipticity.items()},
                "declared_envelope": list(self.declared_envelope),
                "integral_bounds": list(self.integral_bounds),
                "constant_near_zero": self.constant_near_zero, "violations": self.violations}


def verify_membership_O(pot, metric=None, radii=None, n_dirs=8, lambdas=(0.0, 0.1, 1.0, 10.0),
                        tol=1e-6, d=2):
    """Check the orthogonal decomposition, the convexity margin and the
    lam-uniform ellipticity of potential-induced metrics.

    The convexity margin must reach ``(sigma/2) / sup f``.  For every ``lam``
    on the grid the sampled eigenvalue range of ``G`` must lie inside the
    lam-independent envelope ``[1/C^2, 1/c^2]`` implied by
    :func:`integral_bounds`.
    """
    if radii is None:
        radii = np.geomspace(1e-2, 1e3, 60)
    if metric is None:
        metric = build_induced_metric(pot, d)
    ang = 2 * np.pi * (np.arange(n_dirs) + 0.5) / n_dirs
    dirs = np.zeros((n_dirs, metric.dim))
    dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
    pts = (radii[:, None, None] * dirs[None]).reshape(-1, metric.dim)
    violations = []
    defect = float(np.max(orthogonal_decomposition_defect(metric, pts)))
    if defect > 1e-10:
        violations.append(f"orthogonal decomposition defect {defect:.3e}")
    table = table_of(metric)
    sup_f = float(np.sqrt(table.bounds()[1]))
    required = (pot.sigma / 2.0) / sup_f
    rep = convexity_margin(metric, pts, threshold=max(required - tol, 1e-12))
    if rep.c_bar < required - tol:
        violations.append(f"convexity margin {rep.c_bar:.6f} below {required:.6f}")
    c, C = integral_bounds(pot)
    envelope = (1.0 / C**2, 1.0 / c**2)
    ell = {}
    for lam in lambdas:
        G_lam = metric if lam == pot.lam else build_induced_metric(pot.with_energy(lam), metric.dim)
        a_est, b_est = ellipticity_estimate(G_lam, pts)
        ell[lam] = (a_est, b_est)
        if a_est < envelope[0] - tol or b_est > envelope[1] + tol:
            violations.append(f"lam={lam}: eigenvalues [{a_est:.4f}, {b_est:.4f}] leave "
                              f"[{envelope[0]:.4f}, {envelope[1]:.4f}]")
    return MembershipReport(defect, rep.c_bar, required, sup_f, ell, envelope, (c, C),
                            pot.constant_near_zero, tol, violations)


# --------------------------------------------------------------------------
# the logarithmic-spiral metric
# --------------------------------------------------------------------------
def _smoothstep_derivs(t, n):
    """Septic smoothstep ``S(t) = 35 t^4 - 84 t^5 + 70 t^6 - 20 t^7`` on [0, 1],
    constant outside; C^3 at both ends."""
    t = np.asarray(t, dtype=float)
    coeffs = np.zeros(8)
    coeffs[4:] = [35.0, -84.0, 70.0, -20.0]
    poly = np.polynomial.Polynomial(coeffs)
    inside = (t > 0.0) & (t < 1.0)
    out = np.zeros((n + 1,) + t.shape)
    for m in range(n + 1):
        pm = poly.deriv(m) if m else poly
        out[m] = np.where(inside, pm(np.clip(t, 0.0, 1.0)), 0.0)
    out[0] = np.where(t >= 1.0, 1.0, out[0])
    return out


@dataclass
class SpiralConfig:
    """Trigonometric profile ``f(th) = sum_k a_k cos(k th) + b_k sin(k th)``
    (default ``sin``), small ``eps``, and a cutoff switching on over
    ``[r_in, r_out]``."""

    eps: float = 0.05
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = (1.0,)
    r_in: float = 1.0
    r_out: float = 2.0

    def f_derivs(self, th, n):
        th = np.asarray(th, dtype=float)
        out = np.zeros((n + 1,) + th.shape)
        for coeffs, is_sin in ((self.cos_coeffs, False), (self.sin_coeffs, True)):
            for k, c in enumerate(coeffs, start=1):
                if c == 0.0:
                    continue
                for m in range(n + 1):
                    # d^m/dth^m of cos(k th) = k^m cos(k th + m pi/2)
                    shift = m * np.pi / 2 - (np.pi / 2 if is_sin else 0.0)
                    out[m] += c * k**m * np.cos(k * th + shift)
        return out

    def sup_abs_f(self):
        th = np.linspace(0, 2 * np.pi, 4097)
        return float(np.abs(self.f_derivs(th, 0)[0]).max())

    def roots(self, xtol=1e-13, grid=4096):
        """Solutions of ``f'(th) = 1/(1 + eps^2)`` in ``[-pi, pi)`` with the sign
        of ``f''`` (negative: sink, positive: saddle)."""
        target = 1.0 / (1.0 + self.eps**2)
        th = np.linspace(-np.pi, np.pi, grid + 1)
        g = self.f_derivs(th, 1)[1] - target
        if g.max() < -1e-10:
            raise ConstructionError("max f' must reach 1")
        if g.max() <= 1e-10:
            i = int(np.argmax(g))
            raise PreconditionError(f"degenerate (tangential) spiral root near theta={th[i]}")
        out = []
        for i in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
            root = optimize.bisect(lambda t: self.f_derivs(t, 1)[1] - target, th[i], th[i + 1],
                                   xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
            f2 = float(self.f_derivs(root, 2)[2])
            if abs(f2) < 1e-8:
                raise PreconditionError(f"degenerate spiral root at theta={root}")
            out.append({"theta": float(root), "f2": f2, "kind": "sink" if f2 < 0 else "saddle",
                        "residual": float(self.f_derivs(root, 1)[1] - target)})
        return out

    def launch_radius(self, theta0):
        """``r0 > r_out`` with ``theta0 = -eps ln r0`` modulo 2 pi."""
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        th = theta0 - 2 * np.pi * np.ceil((theta0 + self.eps * np.log(self.r_out)) / (2 * np.pi))
        return float(np.exp(-th / self.eps)), float(th)

    def to_dict(self):
        return {"eps": self.eps, "cos_coeffs": list(self.cos_coeffs),
                "sin_coeffs": list(self.sin_coeffs), "r_in": self.r_in, "r_out": self.r_out}


def spiral_phase(x):
    """``theta - eps ln r`` is assembled by callers; this returns ``(ln r, theta)``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(np.hypot(x[..., 0], x[..., 1])), np.arctan2(x[..., 1], x[..., 0])


def build_spiral_metric(cfg, order=3):
    """Conformal metric ``exp(2 eps f(theta - eps ln r) chi(r)) I`` on R^2."""
    eps = float(cfg.eps)
    width = cfg.r_out - cfg.r_in

    def exponent(xj):
        x0 = xj.c[0]
        r0 = np.hypot(x0[..., 0], x0[..., 1])
        # the cutoff vanishes with all derivatives for r <= r_in, where the
        # logarithm is replaced by a harmless value
        safe = r0 > 0.5 * cfg.r_in
        shift = np.where(safe, 0.0, 1.0)
        z = Jet(xj.c[..., 0] + shift + 1j * xj.c[..., 1])
        logz = z.log()
        phase = Jet(((1.0 - 1j * eps) * logz.c).imag)
        fj = phase.compose(cfg.f_derivs(phase.c[0], xj.order))
        rj = (Jet(xj.c[..., 0] + shift) * Jet(xj.c[..., 0] + shift)
              + Jet(xj.c[..., 1]) * Jet(xj.c[..., 1])).sqrt()
        chi = rj.compose(_smoothstep_derivs((rj.c[0] - cfg.r_in) / width, xj.order)
                         / width ** np.arange(xj.order + 1).reshape((-1,) + (1,) * r0.ndim))
        chi = Jet(np.where(safe, chi.c, 0.0))
        return (fj * chi) * (2.0 * eps)

    fmax = cfg.sup_abs_f()
    return MetricField(ConformalField(exponent, 2), "spiral", order,
                       math.exp(-2 * eps * fmax), math.exp(2 * eps * fmax),
                       name=f"spiral(eps={eps:g})", base=euclidean(2), params=cfg.to_dict())


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass
class SpiralRun:
    launch: dict
    log_r: np.ndarray
    phase: np.ndarray
    final_r: float
    final_phase: float
    nearest_sink: float | None
    distance: float | None
    rate: float | None
    conservation_defect: float
    truncated: bool = False

    def to_dict(self):
        return {"launch": self.launch, "final_r": self.final_r, "final_phase": self.final_phase,
                "nearest_sink": self.nearest_sink, "distance": self.distance, "rate": self.rate,
                "conservation_defect": self.conservation_defect, "truncated": self.truncated}


def _unwrapped_phase(cfg, gam):
    ln_r, th = spiral_phase(gam)
    return ln_r, np.unwrap(th, axis=0) - cfg.eps * ln_r


def exact_spiral_check(cfg, G=None, root=None, decades=2.0, steps=4000, use_symmetry=False):
    """Follow the orbit started on a logarithmic spiral and report the
    largest deviation of ``theta - eps ln r`` from its initial value over
    ``decades`` of radius.

    The launch point is ``(r0, 0)`` with ``r0`` from ``theta0 = -eps ln r0`` and
    initial direction ``(1, eps)``.  With ``use_symmetry`` the metric's
    invariance under ``r -> lambda r, theta -> theta + eps ln lambda`` is used
    to start on the same spiral at radius ``3 r_out`` instead (needed for
    roots whose ``r0`` is astronomically large).
    """
    G = build_spiral_metric(cfg) if G is None else G
    roots = cfg.roots()
    if root is None:
        root = roots[0]
    theta0 = root["theta"]
    r0, th_mod = cfg.launch_radius(theta0)
    if use_symmetry or r0 > 1e6:
        r_start = 3.0 * cfg.r_out
        ang = th_mod + cfg.eps * np.log(r_start)
    else:
        r_start, ang = r0, 0.0
    om = np.array([np.cos(ang), np.sin(ang)])
    om_perp = np.array([-np.sin(ang), np.cos(ang)])
    v = om + cfg.eps * om_perp
    start = r_start * om
    # d ln r / dtau is about <r>/r >= 1 along an outgoing spiral
    span = decades * np.log(10.0) * 1.1
    s, ys, vs = integrate_batch(G, v[None], steps, starts=start[None], span=span, log_time=True)
    gam = ys[:, 0]
    ln_r, ph = _unwrapped_phase(cfg, gam)
    keep = ln_r <= np.log(r_start) + decades * np.log(10.0)
    dev = float(np.max(np.abs(ph[keep] - ph[0])))
    from .solver import _conservation_defect
    return {"theta0": theta0, "kind": root["kind"], "r0": r0, "r_start": r_start,
            "r_end": float(np.exp(ln_r[keep][-1])), "max_deviation": dev,
            "conservation_defect": float(np.max(_conservation_defect(G, ys, vs)))}


def spiral_attractor_check(cfg, launches=10, r_final=1e3, steps=6000, G=None, offset=0.1,
                           tol=0.01):
    """Integrate geodesics from the origin and track ``theta - eps ln r``.

    ``launches`` is either a number of equally spaced initial directions or
    an array of initial velocities.  For each run the final phase, the
    nearest sink root (``f'' < 0``, compared modulo 2 pi), the distance to it
    and a fitted convergence rate ``-d ln|phase - sink| / d ln r`` over the
    outer decade are reported.
    """
    G = build_spiral_metric(cfg) if G is None else G
    if np.isscalar(launches):
        ang = 2 * np.pi * (np.arange(int(launches)) / int(launches)) + offset
        V = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        V = np.atleast_2d(np.asarray(launches, dtype=float))
    sinks = [r["theta"] for r in cfg.roots() if r["kind"] == "sink"]
    # tau needed to reach r_final from unit speed: ~ asinh(r_final) plus slack
    span = float(np.arcsinh(r_final * np.linalg.norm(V, axis=1).max()) + 1.0)
    s, ys, vs = integrate_batch(G, V, steps, span=span, log_time=True)
    from .solver import _conservation_defect
    defects = _conservation_defect(G, ys, vs)
    runs = []
    for j in range(V.shape[0]):
        gam = ys[:, j]
        ln_r, ph = _unwrapped_phase(cfg, gam)
        outside = ln_r > np.log(cfg.r_out)
        reach = np.flatnonzero(ln_r >= np.log(r_final))
        truncated = reach.size == 0
        end = reach[0] if not truncated else len(ln_r) - 1
        final_phase = float(_wrap(ph[end]))
        nearest = dist = rate = None
        if sinks:
            diffs = [abs(float(_wrap(final_phase - sk))) for sk in sinks]
            i = int(np.argmin(diffs))
            nearest, dist = sinks[i], diffs[i]
            sel = outside.copy()
            sel[end + 1:] = False
            sel &= ln_r >= ln_r[end] - np.log(10.0)
            err = np.abs(_wrap(ph[sel] - nearest))
            if sel.sum() > 4 and np.all(err > 0):
                rate = float(-np.polyfit(ln_r[sel], np.log(err), 1)[0])
        runs.append(SpiralRun({"v": V[j].tolist()}, ln_r, ph, float(np.exp(ln_r[end])),
                              final_phase, nearest, dist, rate, float(defects[j]), truncated))
    converged = [r.distance is not None and r.distance <= tol and not r.truncated for r in runs]
    return {"eps": cfg.eps, "sinks": sinks, "r_final": r_final, "tol": tol,
            "all_converged": bool(all(converged)), "n_converged": int(sum(converged)),
            "runs": runs}
