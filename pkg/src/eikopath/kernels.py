"""Hot loops of the path-space Newton solver.

The discrete energy of a piecewise-linear path couples only neighbouring
nodes, so its gradient is assembled element by element and its Hessian is
block tridiagonal with ``d x d`` blocks.  Every kernel exists twice: a numba
``@njit`` version with explicit loops and a numpy/scipy version (einsum
assembly, LAPACK banded solves).  ``backend=None`` picks numba unless it is
unavailable or disabled through ``EIKOPATH_DISABLE_NUMBA``.

Block layout used throughout: unknown block ``j`` is path node ``j + 1``
(``j = 0 .. N-2``); ``diag[j]`` is the diagonal block and ``upper[j]`` couples
block ``j - 1`` (row) to block ``j`` (column), with ``upper[0]`` unused.
"""
import numpy as np
from scipy import linalg

from ._backend import NUMBA_AVAILABLE, default_backend, njit


def _pick(backend):
    backend = backend or default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is unavailable")
    return backend


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------
@njit
def _assemble_nb(ydot, G, dG, d2G, h, with_hessian):
    N, d = ydot.shape
    n = N - 1
    grad = np.zeros((n, d))
    diag = np.zeros((n, d, d))
    upper = np.zeros((n, d, d))
    a = np.empty(d)
    c = np.empty(d)
    B = np.empty((d, d))
    D = np.empty((d, d))
    for q in range(N):
        v = ydot[q]
        for i in range(d):
            s = 0.0
            for j in range(d):
                s += G[q, i, j] * v[j]
            a[i] = s
        for k in range(d):
            ck = 0.0
            for i in range(d):
                bik = 0.0
                for j in range(d):
                    bik += dG[q, k, i, j] * v[j]
                B[i, k] = bik
                ck += v[i] * bik
            c[k] = ck
        if q <= N - 2:
            for i in range(d):
                grad[q, i] += 2.0 * a[i] + 0.5 * h * c[i]
        if q >= 1:
            for i in range(d):
                grad[q - 1, i] += -2.0 * a[i] + 0.5 * h * c[i]
        if not with_hessian:
            continue
        for k in range(d):
            for l in range(d):
                s = 0.0
                for i in range(d):
                    for j in range(d):
                        s += v[i] * d2G[q, k, l, i, j] * v[j]
                D[k, l] = s
        two_n = 2.0 / h
        for i in range(d):
            for j in range(d):
                base = two_n * G[q, i, j] + 0.25 * h * D[i, j]
                sym = B[i, j] + B[j, i]
                if q <= N - 2:
                    diag[q, i, j] += base + sym
                if q >= 1:
                    diag[q - 1, i, j] += base - sym
                if 1 <= q <= N - 2:
                    upper[q, i, j] = -two_n * G[q, i, j] - B[i, j] + B[j, i] \
                        + 0.25 * h * D[i, j]
    return grad, diag, upper


def _assemble_np(ydot, G, dG, d2G, h, with_hessian):
    N, d = ydot.shape
    a = np.einsum("qij,qj->qi", G, ydot)
    B = np.einsum("qkij,qj->qik", dG, ydot)
    c = np.einsum("qi,qik->qk", ydot, B)
    elem = 0.5 * h * c
    grad = (2.0 * a[:-1] + elem[:-1]) + (-2.0 * a[1:] + elem[1:])
    if not with_hessian:
        return grad, None, None
    D = np.einsum("qi,qklij,qj->qkl", ydot, d2G, ydot)
    base = (2.0 / h) * G + 0.25 * h * D
    sym = B + np.swapaxes(B, 1, 2)
    diag = (base[:-1] + sym[:-1]) + (base[1:] - sym[1:])
    upper = np.zeros((N - 1, d, d))
    upper[1:] = (-(2.0 / h) * G[1:-1] - B[1:-1] + np.swapaxes(B[1:-1], 1, 2)
                 + 0.25 * h * D[1:-1])
    return grad, diag, upper


def assemble(ydot, G, dG, d2G=None, with_hessian=True, backend=None):
    """Gradient and block-tridiagonal Hessian of the midpoint-rule energy.

    Parameters
    ----------
    ydot : (N, d) array
        Constant path velocity on each of the ``N`` subintervals.
    G, dG, d2G : arrays
        Metric and its first and second partials at the subinterval
        midpoints, shaped ``(N, d, d)``, ``(N, d, d, d)`` and
        ``(N, d, d, d, d)`` with derivative indices leading.
    """
    backend = _pick(backend)
    N, d = ydot.shape
    h = 1.0 / N
    if d2G is None:
        if with_hessian:
            raise ValueError("second metric derivatives needed for the Hessian")
        d2G = np.zeros((N, d, d, d, d))
    args = (np.ascontiguousarray(ydot, dtype=float), np.ascontiguousarray(G, dtype=float),
            np.ascontiguousarray(dG, dtype=float), np.ascontiguousarray(d2G, dtype=float))
    if backend == "numba":
        grad, diag, upper = _assemble_nb(*args, h, with_hessian)
        if not with_hessian:
            return grad, None, None
        return grad, diag, upper
    return _assemble_np(*args, h, with_hessian)


# --------------------------------------------------------------------------
# block tridiagonal linear algebra
# --------------------------------------------------------------------------
@njit
def _small_cholesky(A, L):
    d = A.shape[0]
    for j in range(d):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        L[j, j] = np.sqrt(s)
        for i in range(j + 1, d):
            t = A[i, j]
            for k in range(j):
                t -= L[i, k] * L[j, k]
            L[i, j] = t / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit
def _small_lu(A, perm):
    """In-place LU factorization with partial pivoting of a small block."""
    d = A.shape[0]
    for k in range(d):
        p = k
        for i in range(k + 1, d):
            if abs(A[i, k]) > abs(A[p, k]):
                p = i
        perm[k] = p
        if A[p, k] == 0.0:
            return False
        if p != k:
            for j in range(d):
                t = A[k, j]
                A[k, j] = A[p, j]
                A[p, j] = t
        for i in range(k + 1, d):
            A[i, k] /= A[k, k]
            for j in range(k + 1, d):
                A[i, j] -= A[i, k] * A[k, j]
    return True


@njit
def _small_lu_solve(LU, perm, b):
    """Overwrite ``b`` with ``A^-1 b`` given the factors from :func:`_small_lu`."""
    d = LU.shape[0]
    for k in range(d):
        p = perm[k]
        if p != k:
            t = b[k]
            b[k] = b[p]
            b[p] = t
    for i in range(d):
        for j in range(i):
            b[i] -= LU[i, j] * b[j]
    for i in range(d - 1, -1, -1):
        for j in range(i + 1, d):
            b[i] -= LU[i, j] * b[j]
        b[i] /= LU[i, i]


@njit
def _block_solve_nb(diag, upper, rhs):
    """Block Thomas algorithm: ``S_j = D_j - U_j^T S_{j-1}^-1 U_j``."""
    n, d = rhs.shape
    W = np.zeros((n, d, d))        # W[j] = S_{j-1}^-1 U_j
    z = np.empty((n, d))           # z[j] = S_j^-1 y_j
    S = np.empty((d, d))
    perm = np.empty(d, dtype=np.int64)
    col = np.empty(d)
    x = np.empty((n, d))
    for j in range(n):
        for a in range(d):
            z[j, a] = rhs[j, a]
            for b in range(d):
                S[a, b] = diag[j, a, b]
        if j > 0:
            for a in range(d):
                for b in range(d):
                    acc = 0.0
                    for c in range(d):
                        acc += upper[j, c, a] * W[j, c, b]
                    S[a, b] -= acc
                acc = 0.0
                for c in range(d):
                    acc += upper[j, c, a] * z[j - 1, c]
                z[j, a] -= acc
        if not _small_lu(S, perm):
            return x, False
        _small_lu_solve(S, perm, z[j])
        if j + 1 < n:
            for b in range(d):
                for a in range(d):
                    col[a] = upper[j + 1, a, b]
                _small_lu_solve(S, perm, col)
                for a in range(d):
                    W[j + 1, a, b] = col[a]
    for a in range(d):
        x[n - 1, a] = z[n - 1, a]
    for j in range(n - 2, -1, -1):
        for a in range(d):
            acc = z[j, a]
            for b in range(d):
                acc -= W[j + 1, a, b] * x[j + 1, b]
            x[j, a] = acc
    for j in range(n):
        for a in range(d):
            if not np.isfinite(x[j, a]):
                return x, False
    return x, True


@njit
def _block_pd_nb(diag, upper):
    """Block Cholesky: every Schur complement pivot must be positive definite."""
    n, d = diag.shape[0], diag.shape[1]
    L = np.zeros((d, d))
    S = np.empty((d, d))
    w = np.zeros((d, d))
    for j in range(n):
        for a in range(d):
            for b in range(d):
                S[a, b] = 0.5 * (diag[j, a, b] + diag[j, b, a])
        if j > 0:
            # w = L_{j-1}^-1 U_j, S -= w^T w
            for b in range(d):
                for a in range(d):
                    t = upper[j, a, b]
                    for c in range(a):
                        t -= L[a, c] * w[c, b]
                    w[a, b] = t / L[a, a]
            for a in range(d):
                for b in range(d):
                    acc = 0.0
                    for c in range(d):
                        acc += w[c, a] * w[c, b]
                    S[a, b] -= acc
        if not _small_cholesky(S, L):
            return False
    return True


def to_banded(diag, upper, lower_only=False):
    """Pack the block tridiagonal matrix into LAPACK band storage.

    Returns the ``(l, u)``/``ab`` pair for :func:`scipy.linalg.solve_banded`,
    or the lower form for :func:`scipy.linalg.cholesky_banded` when
    ``lower_only`` is true.
    """
    n, d = diag.shape[0], diag.shape[1]
    bw = 2 * d - 1
    size = n * d
    j, r, c = np.meshgrid(np.arange(n), np.arange(d), np.arange(d), indexing="ij")
    rows = [(j * d + r).ravel()]
    cols = [(j * d + c).ravel()]
    vals = [diag.ravel()]
    if n > 1:
        ju, ru, cu = j[1:], r[1:], c[1:]
        up = upper[1:].ravel()
        # row block j-1, column block j, and the mirrored lower entry
        rows += [((ju - 1) * d + ru).ravel(), (ju * d + cu).ravel()]
        cols += [(ju * d + cu).ravel(), ((ju - 1) * d + ru).ravel()]
        vals += [up, up]
    rows, cols, vals = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    if lower_only:
        keep = rows >= cols
        ab = np.zeros((bw + 1, size))
        ab[rows[keep] - cols[keep], cols[keep]] = vals[keep]
    else:
        ab = np.zeros((2 * bw + 1, size))
        ab[bw + rows - cols, cols] = vals
    return (bw, bw), ab


def block_solve(diag, upper, rhs, backend=None):
    """Solve ``H x = rhs`` for the block tridiagonal ``H``.

    Raises :class:`numpy.linalg.LinAlgError` when the matrix is singular.
    """
    backend = _pick(backend)
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if backend == "numba":
        x, ok = _block_solve_nb(np.ascontiguousarray(diag), np.ascontiguousarray(upper), rhs)
        if not ok:
            raise np.linalg.LinAlgError("singular block pivot")
        return x
    n, d = rhs.shape
    lu, ab = to_banded(diag, upper)
    x = linalg.solve_banded(lu, ab, rhs.reshape(-1), check_finite=False)
    if not np.all(np.isfinite(x)):
        raise np.linalg.LinAlgError("non-finite banded solution")
    return x.reshape(n, d)


def is_positive_definite(diag, upper, backend=None):
    """Whether the symmetric block tridiagonal matrix is positive definite."""
    backend = _pick(backend)
    if backend == "numba":
        return bool(_block_pd_nb(np.ascontiguousarray(diag), np.ascontiguousarray(upper)))
    _, ab = to_banded(diag, upper, lower_only=True)
    try:
        linalg.cholesky_banded(ab, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return False
    return True


def block_matvec(diag, upper, v):
    """Product of the block tridiagonal matrix with ``v`` of shape (n, d)."""
    out = np.einsum("jab,jb->ja", diag, v)
    out[:-1] += np.einsum("jab,jb->ja", upper[1:], v[1:])
    out[1:] += np.einsum("jba,jb->ja", upper[1:], v[:-1])
    return out


def to_dense(diag, upper):
    n, d = diag.shape[0], diag.shape[1]
    A = np.zeros((n * d, n * d))
    for j in range(n):
        A[j * d:(j + 1) * d, j * d:(j + 1) * d] = diag[j]
        if j >= 1:
            A[(j - 1) * d:j * d, j * d:(j + 1) * d] = upper[j]
            A[j * d:(j + 1) * d, (j - 1) * d:j * d] = upper[j].T
    return A
