import itertools
import math
import types

import numpy as np
import pytest
from numpy.testing import assert_allclose

from eikopath import analysis as an
from eikopath.errors import DomainError
from eikopath.metric import euclidean, perturbed
from eikopath.solver import integrate_geodesic


@pytest.mark.parametrize("alpha", [(1, 0), (0, 1), (2, 0), (1, 1), (3, 0), (2, 1), (1, 1, 1)])
def test_stencils_are_exact_one_degree_above_the_order(alpha):
    d = len(alpha)
    rng = np.random.default_rng(sum(alpha))
    # random polynomial of degree |alpha| + 1 in d variables
    deg = sum(alpha) + 1
    monos = [m for m in itertools.product(range(deg + 1), repeat=d) if sum(m) <= deg]
    coef = rng.normal(size=len(monos))

    def f(x):
        return sum(c * np.prod(x ** np.array(m)) for c, m in zip(coef, monos))

    def exact(x):
        tot = 0.0
        for c, m in zip(coef, monos):
            term = c
            for mi, ai, xi in zip(m, alpha, x):
                if ai > mi:
                    term = 0.0
                    break
                term *= math.factorial(mi) / math.factorial(mi - ai) * xi ** (mi - ai)
            tot += term
        return tot

    x0 = rng.normal(size=d)
    h = 0.1
    pts, w = an.fd_stencil(alpha)
    est = sum(wi * f(x0 + h * p) for p, wi in zip(pts, w)) / h ** sum(alpha)
    assert est == pytest.approx(exact(x0), rel=1e-9, abs=1e-9)


def test_multi_indices():
    assert an.multi_indices(2, 2) == [(2, 0), (1, 1), (0, 2)]
    assert len(an.multi_indices(3, 3)) == 10
    assert all(isinstance(k, int) for m in an.multi_indices(2, 1) for k in m)


def test_observables_radial_and_tangential():
    G = euclidean(2)
    gam = np.array([[2.0, 0.0], [2.0, 0.0]])
    v = np.array([[3.0, 0.0], [0.0, 1.5]])
    A, B, r, sp, spG = an.observables(G, gam, v)
    assert_allclose(A, [1.0, 0.0])
    assert_allclose(B, [1.0, 0.0])
    assert_allclose(spG, [3.0, 1.5])


def test_reference_metric_strips_perturbation(spiral):
    assert an.reference_metric(spiral) is spiral.base
    G = perturbed(euclidean(2), an.perturbation_shape("tail"), 0.1)
    assert an.reference_metric(G).name == "euclidean"


def test_straight_line_observables_are_monotone():
    G = euclidean(2)
    traj = integrate_geodesic(G, np.array([1.0, 1.0]), steps=400, start=np.array([-3.0, 0.5]),
                              span=6.0)
    trace = an.observable_trace(G, traj)
    assert trace.bounded()
    # straight lines attain the rate inequality with equality at c_bar = 1
    rep = an.monotonicity_check(trace, c_bar=0.9)
    assert rep.monotone and rep.inequality_holds
    assert trace.A[0] < 0 < trace.A[-1]


def test_trace_reports_return_to_origin():
    traj = types.SimpleNamespace(s=np.array([0.0, 0.5, 1.0]),
                                 gamma=np.array([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]),
                                 gamma_dot=np.ones((3, 2)))
    trace = an.observable_trace(euclidean(2), traj)
    assert trace.violations and len(trace.s) == 2


def test_static_inequalities(induced_mu1, bracket):
    for G in (induced_mu1, bracket):
        rep = an.static_inequalities(G, n_samples=2000, seed=3)
        assert rep.ok, rep.to_dict()
        assert rep.max_A2 <= 1 + 1e-12


def test_s_function_vanishes_for_euclidean():
    assert an.s_function(euclidean(2), np.array([3.0, 4.0]), N=32) == pytest.approx(0.0, abs=1e-14)
    with pytest.raises(DomainError):
        an.s_function(euclidean(2), np.zeros(2))


def test_eikonal_scan_on_euclidean():
    scan = an.eikonal_residual_scan(euclidean(2), np.array([[1.0, 0.0], [3.0, -4.0]]), N=32)
    assert scan.max_residual < 1e-10
    assert_allclose(scan.S, [1.0, 5.0])
    assert scan.grid().shape == (2, 4)
    with pytest.raises(DomainError):
        an.eikonal_residual_scan(euclidean(2), np.zeros((1, 2)))


def test_perturbation_shapes_have_unit_seminorm():
    from eikopath.metric import LogRadialLattice, MetricField, seminorm
    for name in ("bump", "tail"):
        f = an.perturbation_shape(name)
        est = seminorm(MetricField(f, "analytic", 3), LogRadialLattice(2)).estimate
        assert est == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        an.perturbation_shape("wave")


def test_small_perturbation_sweep_scales_linearly():
    G = euclidean(2)
    rep = an.perturbation_sweep(G, an.perturbation_shape("bump"), [0.02, 0.01],
                                x_lattice=np.array([[1.5, 0.5], [2.0, -1.0]]), N=64)
    assert not rep.failures
    assert rep.slopes["s"] == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        an.perturbation_sweep(G, an.perturbation_shape("bump"), [0.01, 0.02])


def test_scaling_sweep_for_euclidean():
    rep = an.derivative_scaling_sweep(euclidean(2), [1.0, 10.0], max_order=2, N=32)
    # d|x| = x/|x|: the largest partial is max(|cos|, |sin|) of the direction;
    # second derivatives scale like 1/|x|
    assert_allclose(rep.S_scaled[1], max(abs(math.cos(0.3)), abs(math.sin(1.9))), rtol=1e-6)
    var = rep.variation(rep.S_scaled)
    assert var[2] < 2.0
    with pytest.raises(ValueError):
        an.derivative_scaling_sweep(euclidean(2), [0.5])


def test_loglog_slope_and_parallel_map():
    eps = np.array([0.1, 0.05, 0.025])
    assert an.loglog_slope(eps, 3 * eps**0.5) == pytest.approx(0.5)
    assert math.isnan(an.loglog_slope(eps, [1.0, 0.0, 1.0]))
    assert an.parallel_map(lambda k: k * k, range(20), workers=4) == [k * k for k in range(20)]
    assert an.parallel_map(lambda k: -k, [1, 2], workers=1) == [-1, -2]
