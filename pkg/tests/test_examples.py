import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import hyp2f1

from eikopath import examples as ex
from eikopath import metric as mt
from eikopath.errors import ConstructionError, PreconditionError
from eikopath.solver import minimize_energy


def decaying_oracle(r, mu, A=1.0, lam=0.0):
    # lam = 0: int_0^r sqrt(2 A) <t>^(-mu/2) dt = sqrt(2A) r 2F1(mu/4, 1/2; 3/2; -r^2)
    assert lam == 0.0
    return math.sqrt(2 * A) * r * hyp2f1(mu / 4, 0.5, 1.5, -r * r)


@pytest.mark.parametrize("r", [0.0, 0.1, 1.0, 7.5, 300.0])
def test_quadrature_oracle_matches_hypergeometric_closed_form(r):
    pot = ex.RadialPotential.decaying(mu=1.0)
    assert ex.radial_eikonal_oracle(pot, r) == pytest.approx(decaying_oracle(r, 1.0), rel=1e-10,
                                                             abs=1e-14)


def test_constant_potential_is_flat():
    pot = ex.RadialPotential.constant(-0.5, lam=0.3)
    assert ex.radial_eikonal_oracle(pot, 4.0) == pytest.approx(4.0 * math.sqrt(2 * 0.8))
    G = ex.build_induced_metric(pot)
    assert_allclose(G(np.array([[3.0, 4.0], [0.01, 0.0]])), np.broadcast_to(np.eye(2), (2, 2, 2)),
                    atol=1e-12)


def test_table_rho_matches_oracle(induced_mu1):
    tab = ex.table_of(induced_mu1)
    r = np.array([0.0, 1e-3, 0.5, 2.0, 77.7, 1e4])
    expected = [decaying_oracle(t, 1.0) for t in r]
    assert_allclose(tab.rho(r), expected, rtol=1e-12, atol=1e-15)


def test_phi_roundtrip(induced_mu1, rng):
    y = rng.normal(size=(50, 2)) * np.geomspace(1e-2, 1e3, 50)[:, None]
    assert_allclose(ex.Phi_inverse(induced_mu1, ex.Phi(induced_mu1, y)), y, rtol=1e-8)
    assert_allclose(ex.Phi(induced_mu1, np.zeros(2)), 0.0)


def test_induced_distance_is_the_norm_of_y(induced_mu1):
    # in metric coordinates the induced distance to the origin is |y|
    y = np.array([2.0, -1.5])
    assert minimize_energy(induced_mu1, y).S == pytest.approx(np.linalg.norm(y), rel=1e-10)


def test_induced_metric_eigenvalues_within_declared_bounds(induced_mu1, rng):
    pts = rng.normal(size=(200, 2)) * np.geomspace(1e-2, 1e4, 200)[:, None]
    a, b = mt.ellipticity_estimate(induced_mu1, pts)
    assert induced_mu1.a - 1e-12 <= a and b <= induced_mu1.b + 1e-12


@pytest.mark.parametrize("mu", [0.5, 1.0, 1.5])
def test_membership_of_decaying_potentials(mu):
    rep = ex.verify_membership_O(ex.RadialPotential.decaying(mu=mu), radii=np.geomspace(1e-2, 1e3, 20),
                                 n_dirs=4, lambdas=(0.0, 1.0))
    assert rep.in_O, rep.violations
    assert rep.defect_max < 1e-10
    assert not rep.constant_near_zero


def test_two_term_potential_membership():
    rep = ex.verify_membership_O(ex.RadialPotential.two_term(), radii=np.geomspace(1e-2, 1e3, 20),
                                 n_dirs=4, lambdas=(0.0, 1.0))
    assert rep.in_O, rep.violations


def test_potential_validation():
    with pytest.raises(ConstructionError):
        ex.RadialPotential.constant(0.1)
    with pytest.raises(ConstructionError):
        ex.RadialPotential.decaying(mu=1.0, sigma=1.5).check()   # virial bound fails
    with pytest.raises(ConstructionError):
        ex.RadialPotential.decaying(mu=2.5).check()
    with pytest.raises(ConstructionError):
        ex.RadialPotential.decaying(mu=1.0, lam=-1.0).check()


def test_spiral_roots_match_closed_form():
    cfg = ex.SpiralConfig(eps=0.05)
    roots = cfg.roots()
    theta = math.acos(1.0 / (1.0 + 0.05**2))
    assert theta == pytest.approx(0.0706371397162927, abs=1e-15)
    assert [r["kind"] for r in roots] == ["saddle", "sink"]
    assert_allclose([r["theta"] for r in roots], [-theta, theta], atol=1e-12)


def test_spiral_root_errors():
    with pytest.raises(ConstructionError):
        ex.SpiralConfig(sin_coeffs=(0.5,)).roots()
    # eps = 0: f' = cos(th) = 1 only tangentially, a double root at th = 0
    with pytest.raises(PreconditionError):
        ex.SpiralConfig(eps=0.0).roots()


def test_spiral_with_zero_eps_is_euclidean():
    G = ex.build_spiral_metric(ex.SpiralConfig(eps=0.0))
    pts = np.array([[0.0, 0.0], [0.5, 0.1], [1.5, -1.0], [40.0, 3.0]])
    assert_allclose(G(pts), np.broadcast_to(np.eye(2), (4, 2, 2)), atol=0)


def test_spiral_bounds_and_inner_region(spiral):
    pts = np.array([[0.0, 0.0], [0.3, -0.4], [0.99, 0.0]])
    assert_allclose(spiral(pts), np.broadcast_to(np.eye(2), (3, 2, 2)), atol=0)
    lat = mt.LogRadialLattice(2, 24, 16, 1e-2, 1e4)
    a, b = mt.ellipticity_estimate(spiral, lat.points())
    assert spiral.a - 1e-12 <= a and b <= spiral.b + 1e-12
    assert a < 0.96 and b > 1.04          # the oscillation is actually present


def test_spiral_seminorm_is_linear_in_eps():
    lat = mt.LogRadialLattice(2, 24, 16, 1e-2, 1e4)
    base = mt.euclidean(2)
    vals = [mt.perturbation_distance(ex.build_spiral_metric(ex.SpiralConfig(eps=e)), base, lat,
                                     order=2).estimate for e in (0.01, 0.02, 0.05)]
    ratios = np.array(vals) / np.array([0.01, 0.02, 0.05])
    assert np.ptp(ratios) / ratios.mean() < 0.15


def test_spiral_invariant_under_scale_rotation(spiral):
    eps = 0.05
    lam = 7.0
    x = np.array([[3.0, 1.0], [10.0, -20.0]])
    ang = eps * math.log(lam)
    R = np.array([[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]])
    y = lam * x @ R.T
    # the conformal factor is invariant, so G(y) = G(x) (both multiples of I)
    assert_allclose(spiral(y), spiral(x), rtol=1e-12)


def test_exact_spiral_is_preserved(spiral):
    out = ex.exact_spiral_check(ex.SpiralConfig(eps=0.05), G=spiral, decades=1.0, steps=1500)
    assert out["max_deviation"] < 1e-8
    assert out["conservation_defect"] < 1e-8
