"""Numba kernels against the numpy/scipy fallback and dense linear algebra."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from eikopath import kernels
from eikopath._backend import NUMBA_AVAILABLE
from eikopath.pathspace import DiscretePath, path_samples

needs_numba = pytest.mark.skipif(not NUMBA_AVAILABLE, reason="numba unavailable")


def random_blocks(rng, n, d, shift=4.0):
    A = rng.normal(size=(n, d, d))
    diag = np.einsum("nij,nkj->nik", A, A) + shift * np.eye(d)
    upper = 0.5 * rng.normal(size=(n, d, d))   # upper[j] couples j-1 and j
    upper[0] = 0.0
    return diag, upper


def samples(metric, rng, N=64):
    x = np.array([2.0, -1.0])
    kappa = DiscretePath.from_interior(0.3 * rng.normal(size=(N - 1, 2)))
    return path_samples(metric, x, kappa, 2)


@needs_numba
def test_assembly_backends_agree(induced_mu1, rng):
    ydot, (G, dG, d2G) = samples(induced_mu1, rng)
    g1, D1, U1 = kernels.assemble(ydot, G, dG, d2G, backend="numba")
    g2, D2, U2 = kernels.assemble(ydot, G, dG, d2G, backend="numpy")
    assert_allclose(g1, g2, rtol=1e-12, atol=1e-14)
    assert_allclose(D1, D2, rtol=1e-12, atol=1e-14)
    assert_allclose(U1, U2, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_block_solve_matches_dense(backend, rng):
    D, U = random_blocks(rng, 20, 3)
    rhs = rng.normal(size=(20, 3))
    x = kernels.block_solve(D, U, rhs, backend=backend)
    dense = kernels.to_dense(D, U)
    assert_allclose(dense @ x.ravel(), rhs.ravel(), rtol=1e-10, atol=1e-12)
    assert_allclose(kernels.block_matvec(D, U, x), rhs, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_positive_definiteness_detection(backend, rng):
    D, U = random_blocks(rng, 10, 2)
    assert kernels.is_positive_definite(D, U, backend=backend)
    D[4] -= 50.0 * np.eye(2)
    assert not kernels.is_positive_definite(D, U, backend=backend)


@needs_numba
@given(st.integers(2, 30), st.integers(2, 3), st.integers(0, 2**31 - 1))
def test_solvers_agree_on_random_systems(n, d, seed):
    rng = np.random.default_rng(seed)
    D, U = random_blocks(rng, n, d)
    rhs = rng.normal(size=(n, d))
    assert_allclose(kernels.block_solve(D, U, rhs, backend="numba"),
                    kernels.block_solve(D, U, rhs, backend="numpy"), rtol=1e-9, atol=1e-11)


def test_unknown_backend_rejected(rng):
    D, U = random_blocks(rng, 4, 2)
    with pytest.raises(ValueError):
        kernels.block_solve(D, U, np.zeros((4, 2)), backend="fortran")


def test_banded_layout_roundtrip(rng):
    D, U = random_blocks(rng, 5, 2)
    dense = kernels.to_dense(D, U)
    (lo, up), ab = kernels.to_banded(D, U)
    n = dense.shape[0]
    for i in range(n):
        for j in range(max(0, i - lo), min(n, i + up + 1)):
            assert ab[up + i - j, j] == pytest.approx(dense[i, j])
    _, low = kernels.to_banded(D, U, lower_only=True)
    for i in range(n):
        for j in range(max(0, i - lo), i + 1):
            assert low[i - j, j] == pytest.approx(dense[i, j])


@given(st.integers(2, 12), st.integers(2, 3), st.floats(-3.0, 3.0), st.integers(0, 2**31 - 1))
def test_positive_definiteness_matches_dense_spectrum(n, d, shift, seed):
    rng = np.random.default_rng(seed)
    D, U = random_blocks(rng, n, d, shift=shift)
    lam_min = np.linalg.eigvalsh(kernels.to_dense(D, U))[0]
    if abs(lam_min) < 1e-8:
        return
    for backend in (["numpy", "numba"] if NUMBA_AVAILABLE else ["numpy"]):
        assert kernels.is_positive_definite(D, U, backend=backend) == (lam_min > 0)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_singular_system_raises(backend):
    D = np.zeros((3, 2, 2))
    U = np.zeros((3, 2, 2))
    with pytest.raises(np.linalg.LinAlgError):
        kernels.block_solve(D, U, np.ones((3, 2)), backend=backend)


@pytest.mark.parametrize("backend", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_indefinite_system_is_still_solved(backend, rng):
    D, U = random_blocks(rng, 8, 2, shift=0.0)
    D[3] -= 3.0 * np.eye(2)
    rhs = rng.normal(size=(8, 2))
    x = kernels.block_solve(D, U, rhs, backend=backend)
    assert_allclose(kernels.block_matvec(D, U, x), rhs, rtol=1e-8, atol=1e-10)


def test_env_flag_selects_numpy_fallback():
    env = dict(os.environ, EIKOPATH_DISABLE_NUMBA="1")
    code = ("from eikopath._backend import default_backend, NUMBA_AVAILABLE;"
            "print(default_backend(), NUMBA_AVAILABLE)")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.split()[0] == "numpy"
