import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from eikopath import solver as sv
from eikopath._backend import NUMBA_AVAILABLE
from eikopath.errors import DomainError, NonConvergenceError
from eikopath.metric import TailField, constant_metric, euclidean, perturbed
from eikopath.pathspace import DiscretePath


def test_euclidean_distance_is_exact_with_flat_minimizer():
    x = np.array([3.0, 4.0])
    sol = sv.minimize_energy(euclidean(2), x, N=64)
    assert sol.S == pytest.approx(5.0, abs=1e-12)
    assert_allclose(sol.kappa.values, 0.0, atol=1e-12)
    assert_allclose(sol.grad_S, x / 5.0, atol=1e-10)
    assert sol.converged and not sol.hessian_indefinite


def test_constant_metric_distance_is_the_norm():
    M = np.array([[2.0, 0.5], [0.5, 1.0]])
    x = np.array([1.0, -2.0])
    sol = sv.minimize_energy(constant_metric(M), x, N=32)
    assert sol.S == pytest.approx(np.sqrt(x @ M @ x), rel=1e-12)


def test_newton_recovers_from_a_bent_initial_path():
    x = np.array([1.0, 1.0])
    init = DiscretePath.from_function(lambda s: [np.sin(np.pi * s), -0.5 * s * (1 - s)], 64, 2)
    sol = sv.minimize_energy(euclidean(2), x, init=init)
    assert sol.S == pytest.approx(np.sqrt(2.0), abs=1e-12)


def test_hessian_eigenvalue_of_identity_metric_is_two():
    sol = sv.minimize_energy(euclidean(2), np.array([1.0, 2.0]), N=64)
    assert sv.hessian_smallest_eigenvalue(euclidean(2), sol) == pytest.approx(2.0, rel=1e-9)
    # the sparse shift-invert path agrees with the dense one
    assert sv.hessian_smallest_eigenvalue(euclidean(2), sol, dense_limit=0) == \
        pytest.approx(2.0, rel=1e-8)


def test_distance_bounds_and_uniqueness(induced_mu1, rng):
    x = np.array([4.0, -3.0])
    Ss = []
    for _ in range(5):
        init = DiscretePath.from_interior(0.5 * rng.normal(size=(127, 2)))
        Ss.append(sv.minimize_energy(induced_mu1, x, init=init).S)
    assert np.ptp(Ss) < 1e-6
    r = np.linalg.norm(x)
    assert np.sqrt(induced_mu1.a) * r <= Ss[0] <= np.sqrt(induced_mu1.b) * r


def test_non_convergence_carries_best_iterate(bracket):
    G = perturbed(bracket, TailField(np.array([[1.0, 0.5], [0.5, -0.5]])), 0.2)
    with pytest.raises(NonConvergenceError) as err:
        sv.minimize_energy(G, np.array([30.0, 5.0]), N=64, max_iter=1)
    assert err.value.best is not None
    with pytest.raises(ValueError):
        sv.minimize_energy(bracket, np.array([1.0, 0.0]), tol=0.0)


def test_gradient_at_origin_is_undefined():
    sol = sv.minimize_energy(euclidean(2), np.zeros(2), N=16)
    assert sol.S == 0.0 and sol.grad_S is None
    with pytest.raises(DomainError):
        sv.gradient_of_distance(euclidean(2), sol)


def test_solution_serialization(tmp_path):
    sol = sv.minimize_energy(euclidean(2), np.array([3.0, 4.0]), N=16)
    d = json.loads(sol.to_json())
    assert d["S"] == pytest.approx(5.0) and d["N"] == 16
    sol.trajectory_csv(tmp_path / "y.csv")
    y = np.loadtxt(tmp_path / "y.csv", delimiter=",", skiprows=1)
    assert_allclose(y[-1], [1.0, 3.0, 4.0])


def test_geodesic_rhs_vanishes_for_flat_metric_and_radial_lines(bracket, rng):
    V = rng.normal(size=(5, 2))
    assert_allclose(sv.geodesic_ode_rhs(euclidean(2), V, V), 0.0, atol=1e-15)
    # radial lines through the origin are geodesics of radial block metrics
    assert_allclose(sv.geodesic_ode_rhs(bracket, 2.0 * V, V), 0.0, atol=1e-12)


def test_integration_conserves_speed(induced_mu1):
    res = sv.integrate_geodesic(induced_mu1, np.array([2.0, 1.0]), start=np.array([1.0, -1.0]))
    assert res.conservation_defect < 1e-9
    q = res.speed_squared(induced_mu1)
    assert_allclose(q, q[0], rtol=1e-9)
    with pytest.raises(ValueError):
        sv.integrate_geodesic(induced_mu1, np.ones(2), steps=99)


def test_batch_matches_single_integration(bracket):
    V = np.array([[1.0, 0.5], [-0.3, 2.0]])
    starts = np.array([[0.5, 0.5], [1.0, 0.0]])
    s, ys, vs = sv.integrate_batch(bracket, V, 200, starts=starts)
    assert s.shape == (201, 2) and ys.shape == (201, 2, 2)
    one = sv.integrate_geodesic(bracket, V[1], 200, start=starts[1])
    assert_allclose(ys[:, 1], one.gamma, rtol=1e-14)


def test_shooting_with_identity_metric_returns_target():
    x = np.array([2.0, -1.0])
    res = sv.shoot_to_target(euclidean(2), x)
    assert_allclose(res.v, x, atol=1e-10)
    assert_allclose(res.terminal, x, atol=1e-10)


def test_shooting_agrees_with_energy_minimization(bracket):
    x = np.array([3.0, 2.0])
    res = sv.shoot_to_target(bracket, x)
    sol = sv.minimize_energy(bracket, x)
    assert np.sqrt(res.speed_squared(bracket)[0]) == pytest.approx(sol.S, rel=1e-5)
    assert json.loads(res.to_json())["terminal_error"] <= 1e-10 * np.linalg.norm(x)


@pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba unavailable")
def test_backends_give_the_same_solution(bracket):
    x = np.array([2.0, 5.0])
    a = sv.minimize_energy(bracket, x, N=64, backend="numpy")
    b = sv.minimize_energy(bracket, x, N=64, backend="numba")
    assert a.S == pytest.approx(b.S, rel=1e-13)
