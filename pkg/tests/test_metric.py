import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from eikopath import metric as mt
from eikopath.errors import (ConditionViolationError, DomainError, MetricEvaluationError,
                             PreconditionError)


def fd_derivative(G, x, k, h=1e-5):
    e = np.zeros_like(x)
    e[k] = h
    return (G(x + e) - G(x - e)) / (2 * h)


def conformal_metric(d=2):
    # exp(0.1 sin(x0) + 0.2 cos(x1)) I, a non-radial field with closed-form derivatives
    def exponent(xj):
        return xj[..., 0].sin() * 0.1 + xj[..., 1].cos() * 0.2
    return mt.MetricField(mt.ConformalField(exponent, d), "analytic", 3, name="conformal")


@pytest.mark.parametrize("factory", [
    lambda: mt.radial_block_metric(mt.BracketProfile(0.5, 0.5)),
    conformal_metric,
    lambda: mt.perturbed(mt.euclidean(2), mt.TailField(np.diag([1.0, -0.5])), 0.1),
    lambda: mt.perturbed(mt.euclidean(2),
                         mt.CompactBump((0.5, 0.0), 2.0, np.array([[1.0, 0.3], [0.3, 0.0]])), 0.1),
])
def test_first_and_second_derivatives_match_finite_differences(factory, rng):
    G = factory()
    pts = rng.normal(size=(6, 2)) * 1.5
    M, dM, d2M = G.derivatives(pts, 2)
    assert_allclose(M, G(pts), rtol=1e-14)
    for p in range(len(pts)):
        for k in range(2):
            assert_allclose(dM[p, k], fd_derivative(G, pts[p], k), atol=1e-8)
            e = np.zeros(2)
            e[k] = 1e-5
            fd2 = (G.derivatives(pts[p] + e, 1)[1] - G.derivatives(pts[p] - e, 1)[1]) / 2e-5
            assert_allclose(d2M[p, k], fd2, atol=1e-7)


def test_third_derivatives_are_symmetric(rng):
    G = mt.radial_block_metric(mt.BracketProfile(0.5, 0.5), d=3)
    d3 = G.derivatives(rng.normal(size=(4, 3)), 3)[3]
    assert_allclose(d3, np.swapaxes(d3, 1, 2), atol=1e-13)
    assert_allclose(d3, np.swapaxes(d3, 2, 3), atol=1e-13)
    assert_allclose(d3, np.swapaxes(d3, 4, 5), atol=1e-13)


def test_radial_block_form_small_and_large_radii():
    prof = mt.BracketProfile(0.5, 0.5)
    G = mt.radial_block_metric(prof)
    for r in (1e-4, 0.3, 0.999, 1.001, 50.0):
        x = np.array([r, 0.0])
        F = prof.derivs(np.array(r * r), 0)[0]
        assert_allclose(G(x), np.diag([1.0, F]), atol=1e-14)
    pts = np.array([[0.2, 0.1], [3.0, -4.0], [1e3, 2e3]])
    assert_allclose(mt.orthogonal_decomposition_defect(G, pts), 0.0, atol=1e-12)


def test_decomposition_defect_detects_non_radial_metric():
    G = conformal_metric()
    assert np.all(mt.orthogonal_decomposition_defect(G, np.array([[1.5, 0.0]])) > 1e-3)
    with pytest.raises(DomainError):
        mt.orthogonal_decomposition_defect(G, np.zeros((1, 2)))
    with pytest.raises(PreconditionError):
        mt.convexity_margin(G, np.array([[1.0, 2.0]]))


def test_bracket_convexity_margin_closed_form():
    # P_perp (G + x.grad G/2) P_perp = F + w F' on x^perp, divided by F
    beta, floor = 0.5, 0.5
    G = mt.radial_block_metric(mt.BracketProfile(beta, floor))
    r = np.geomspace(0.01, 100, 30)
    pts = np.stack([r, 0 * r], axis=1)
    rep = mt.convexity_margin(G, pts)
    w = r * r
    F = floor + (1 - floor) * (1 + w) ** -beta
    Fp = -beta * (1 - floor) * (1 + w) ** (-beta - 1)
    assert_allclose(rep.margins, (F + w * Fp) / F, rtol=1e-10)
    assert rep.in_O


def test_euclidean_seminorm_and_perturbation_distance():
    lat = mt.LogRadialLattice(2, 16, 8)
    rep = mt.seminorm(mt.euclidean(2), lat, order=3)
    assert rep.estimate == pytest.approx(1.0)
    G = mt.radial_block_metric(mt.BracketProfile(0.5, 0.5))
    assert mt.perturbation_distance(G, G, lat).estimate == 0.0


def test_seminorm_is_linear_in_eps():
    lat = mt.LogRadialLattice(2, 16, 8)
    base = mt.euclidean(2)
    delta = mt.TailField(np.eye(2))
    d1 = mt.perturbation_distance(mt.perturbed(base, delta, 0.01), base, lat).estimate
    d2 = mt.perturbation_distance(mt.perturbed(base, delta, 0.03), base, lat).estimate
    assert d2 == pytest.approx(3 * d1, rel=1e-12)


@pytest.mark.parametrize("d", [2, 3])
def test_refined_lattice_is_superset(d):
    lat = mt.LogRadialLattice(d, 5, 4, 0.1, 10.0)
    coarse, fine = lat.points(), lat.refined().points()
    dist = np.min(np.linalg.norm(coarse[:, None] - fine[None], axis=-1), axis=1)
    assert_allclose(dist, 0.0, atol=1e-9)
    assert len(fine) > len(coarse)


def test_ellipticity_estimate_and_errors():
    G = mt.constant_metric([[2.0, 0.5], [0.5, 1.0]])
    ev = np.linalg.eigvalsh([[2.0, 0.5], [0.5, 1.0]])
    assert_allclose(mt.ellipticity_estimate(G, np.zeros((3, 2))), ev)
    assert (G.a, G.b) == pytest.approx(tuple(ev))
    with pytest.raises(ConditionViolationError):
        mt.constant_metric([[1.0, 2.0], [2.0, 1.0]])
    bad = mt.from_callable(lambda x: np.full(x.shape[:-1] + (2, 2), np.nan), 2)
    with pytest.raises(MetricEvaluationError):
        mt.eval_metric(bad, np.ones(2))
    with pytest.raises(MetricEvaluationError):
        mt.eval_metric(G, np.array([np.inf, 0.0]))
    with pytest.raises(ValueError):
        mt.ellipticity_estimate(G, np.zeros((0, 2)))


def test_metric_field_validation():
    with pytest.raises(ValueError):
        mt.MetricField(mt.ConstantField(np.eye(2)), "nonsense")
    with pytest.raises(ValueError):
        mt.MetricField(mt.ConstantField(np.eye(1)), "analytic")
    with pytest.raises(ValueError):
        mt.MetricField(mt.ConstantField(np.eye(2)), "analytic", order=1)


def test_callable_metric_falls_back_to_finite_differences():
    G = mt.from_callable(lambda x: (1.0 + 0.1 * x[..., 0, None, None] ** 2) * np.eye(2), 2)
    x = np.array([[0.7, -0.2]])
    _, dM, d2M = G.derivatives(x, 2)
    assert_allclose(dM[0, 0], 0.14 * np.eye(2), atol=1e-6)
    assert_allclose(d2M[0, 0, 0], 0.2 * np.eye(2), atol=1e-4)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.9), st.floats(-50, 50), st.floats(-50, 50))
def test_bracket_metric_is_uniformly_elliptic(beta, floor, x0, x1):
    G = mt.radial_block_metric(mt.BracketProfile(beta, floor))
    ev = np.linalg.eigvalsh(G(np.array([x0, x1])))
    assert ev[0] >= G.a - 1e-12 and ev[-1] <= G.b + 1e-12
