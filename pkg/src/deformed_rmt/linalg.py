"""Dense Hermitian eigensolver and Gaussian samplers.

The eigensolver reduces a complex Hermitian matrix to real symmetric
tridiagonal form with Householder reflections (the complex phases of the
off-diagonal are absorbed into a diagonal unitary) and then runs the implicit
shift QL iteration. Both stages are compiled with numba.

Random draws go through a counter-based Philox bit generator and Box-Muller,
so a ``(seed, key...)`` tuple reproduces the same matrices on any platform.
"""

from dataclasses import dataclass

import numba
import numpy as np

from .errors import ConvergenceError, InvalidInputError

HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True)
class HermitianEigenResult:
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray | None  # unitary, columns


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _tridiagonalize(a, want_q):
    """In-place Householder reduction of the lower triangle of ``a``.

    Returns (diag, offdiag, reflectors); ``offdiag[k]`` couples k and k+1 and
    is complex. Reflector k acts on indices k+1..n-1 and is stored in row k of
    ``reflectors`` (only when ``want_q``).
    """
    n = a.shape[0]
    d = np.empty(n)
    e = np.zeros(max(n - 1, 0), dtype=np.complex128)
    refl = np.zeros((n if want_q else 1, n), dtype=np.complex128)
    p = np.empty(n, dtype=np.complex128)
    v = np.empty(n, dtype=np.complex128)
    for k in range(n - 2):
        m = n - k - 1
        s = 0.0
        for i in range(k + 1, n):
            s += a[i, k].real ** 2 + a[i, k].imag ** 2
        xnorm = np.sqrt(s)
        x0 = a[k + 1, k]
        tail = s - (x0.real ** 2 + x0.imag ** 2)
        if tail <= 0.0:
            # already tridiagonal in this column
            e[k] = x0
            continue
        ax0 = abs(x0)
        phase = x0 / ax0 if ax0 > 0.0 else 1.0 + 0.0j
        alpha = -phase * xnorm
        for i in range(m):
            v[i] = a[k + 1 + i, k]
        v[0] -= alpha
        vn = 0.0
        for i in range(m):
            vn += v[i].real ** 2 + v[i].imag ** 2
        vn = np.sqrt(vn)
        for i in range(m):
            v[i] /= vn
        # p = A_sub v using only the lower triangle
        for i in range(m):
            p[i] = 0.0
        for i in range(m):
            ri = k + 1 + i
            vi = v[i]
            acc = a[ri, ri].real * vi
            for j in range(i):
                aij = a[ri, k + 1 + j]
                acc += aij * v[j]
                p[j] += aij.conjugate() * vi
            p[i] += acc
        kk = 0.0
        for i in range(m):
            kk += (v[i].conjugate() * p[i]).real
        for i in range(m):
            p[i] -= kk * v[i]
        # A_sub -= 2 (v w^* + w v^*) on the lower triangle, w stored in p
        for i in range(m):
            ri = k + 1 + i
            vi2 = 2.0 * v[i]
            wi2 = 2.0 * p[i]
            for j in range(i + 1):
                a[ri, k + 1 + j] -= vi2 * p[j].conjugate() + wi2 * v[j].conjugate()
        e[k] = alpha
        if want_q:
            for i in range(m):
                refl[k, k + 1 + i] = v[i]
    if n >= 2:
        e[n - 2] = a[n - 1, n - 2]
    for i in range(n):
        d[i] = a[i, i].real
    return d, e, refl


@numba.njit(cache=True)
def _accumulate_q(refl, n):
    q = np.eye(n, dtype=np.complex128)
    tmp = np.empty(n, dtype=np.complex128)
    for k in range(n - 3, -1, -1):
        lo = k + 1
        nz = False
        for i in range(lo, n):
            if refl[k, i] != 0.0:
                nz = True
                break
        if not nz:
            continue
        # Q_sub <- (I - 2 v v^*) Q_sub
        for j in range(lo, n):
            tmp[j] = 0.0
        for i in range(lo, n):
            vc = refl[k, i].conjugate()
            for j in range(lo, n):
                tmp[j] += vc * q[i, j]
        for i in range(lo, n):
            vi2 = 2.0 * refl[k, i]
            for j in range(lo, n):
                q[i, j] -= vi2 * tmp[j]
    return q


@numba.njit(cache=True)
def _tql(d, e, zt, want_z, max_iter):
    """Implicit-shift QL on a real symmetric tridiagonal matrix.

    ``e[i]`` couples i and i+1 with ``e[n-1] == 0``. Eigenvector rows of ``zt``
    are rotated in place. Returns -1 on success, otherwise the index whose
    iteration budget was exhausted.
    """
    n = d.shape[0]
    eps = 2.220446049250313e-16
    total = 0
    for l in range(n):
        it = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            it += 1
            total += 1
            if total > max_iter:
                return l
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if want_z:
                    for k in range(zt.shape[1]):
                        f = zt[i + 1, k]
                        zt[i + 1, k] = s * zt[i, k] + c * f
                        zt[i, k] = c * zt[i, k] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


@numba.njit(cache=True)
def _apply_q_adjoint(refl, b):
    """``Q^* b`` for ``Q = H_0 H_1 ... H_{n-3}`` stored as reflectors."""
    n = b.shape[0]
    out = b.copy()
    for k in range(n - 2):
        lo = k + 1
        for j in range(out.shape[1]):
            acc = 0.0 + 0.0j
            for i in range(lo, n):
                acc += refl[k, i].conjugate() * out[i, j]
            if acc != 0.0:
                for i in range(lo, n):
                    out[i, j] -= 2.0 * refl[k, i] * acc
    return out


@numba.njit(cache=True)
def _eigvals_batch(stack, max_iter):
    k, n = stack.shape[0], stack.shape[1]
    out = np.empty((k, n))
    zt = np.empty((1, 1))
    for b in range(k):
        d, e_c, _ = _tridiagonalize(stack[b].copy(), False)
        e = np.zeros(n)
        for i in range(n - 1):
            e[i] = abs(e_c[i])
        if _tql(d, e, zt, False, max_iter) >= 0:
            return out, b
        out[b] = np.sort(d)
    return out, -1


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _check_hermitian(a):
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {a.shape}")
    a = a.astype(np.complex128)
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = np.max(np.abs(a)) if a.size else 0.0
    skew = np.max(np.abs(a - a.conj().T)) if a.size else 0.0
    if skew > HERMITIAN_RTOL * max(scale, np.finfo(float).tiny):
        raise InvalidInputError(
            f"matrix is not Hermitian (max |A - A*| = {skew:.3e}, max |A| = {scale:.3e})"
        )
    return 0.5 * (a + a.conj().T)


def hermitian_eigen(a, vectors=True):
    """Full spectral decomposition of a Hermitian matrix.

    Parameters
    ----------
    a : array_like, shape (n, n)
        Hermitian within a relative tolerance of 1e-12.
    vectors : bool
        When False only the eigenvalues are computed, which skips the
        O(n^3) accumulation of the reflectors.

    Returns
    -------
    HermitianEigenResult
        Ascending eigenvalues and, if requested, a unitary matrix whose
        columns are the matching eigenvectors.
    """
    a = _check_hermitian(a)
    n = a.shape[0]
    if n == 0:
        return HermitianEigenResult(np.empty(0), np.empty((0, 0), complex) if vectors else None)
    work = np.ascontiguousarray(a)
    d, e_c, refl = _tridiagonalize(work, vectors)

    # absorb off-diagonal phases: T = Phi T_real Phi^*
    phases = np.ones(n, dtype=np.complex128)
    e = np.zeros(n)
    for k in range(n - 1):
        mag = abs(e_c[k])
        e[k] = mag
        phases[k + 1] = phases[k] * (e_c[k] / mag if mag > 0.0 else 1.0)

    zt = np.eye(n) if vectors else np.empty((1, 1))
    failed = _tql(d, e, zt, vectors, 30 * max(n, 1))
    if failed >= 0:
        raise ConvergenceError(
            f"implicit QL did not converge for eigenvalue index {failed}", index=int(failed)
        )
    order = np.argsort(d, kind="stable")
    vals = d[order]
    if not vectors:
        return HermitianEigenResult(vals, None)
    q = _accumulate_q(refl, n)
    vecs = (q * phases[None, :]) @ zt[order].T
    return HermitianEigenResult(vals, vecs)


def hermitian_eigen_projected(a, b):
    """Eigenvalues of ``a`` and the projections ``V^* b`` onto its eigenvectors.

    Equivalent to ``res = hermitian_eigen(a); res.eigenvectors.conj().T @ b``
    but the QL rotations are applied to the columns of ``b`` only, so the cost
    stays close to the eigenvalue-only path when ``b`` is thin.
    """
    a = _check_hermitian(a)
    n = a.shape[0]
    b = np.asarray(b, dtype=np.complex128)
    if b.ndim != 2 or b.shape[0] != n:
        raise InvalidInputError(f"b must have {n} rows, got shape {b.shape}")
    if n == 0:
        return np.empty(0), np.empty((0, b.shape[1]), complex)
    d, e_c, refl = _tridiagonalize(np.ascontiguousarray(a), True)
    phases = np.ones(n, dtype=np.complex128)
    e = np.zeros(n)
    for k in range(n - 1):
        mag = abs(e_c[k])
        e[k] = mag
        phases[k + 1] = phases[k] * (e_c[k] / mag if mag > 0.0 else 1.0)
    zt = _apply_q_adjoint(refl, np.ascontiguousarray(b)) * phases.conj()[:, None]
    zt = np.ascontiguousarray(zt)
    failed = _tql(d, e, zt, True, 30 * max(n, 1))
    if failed >= 0:
        raise ConvergenceError(
            f"implicit QL did not converge for eigenvalue index {failed}", index=int(failed)
        )
    order = np.argsort(d, kind="stable")
    return d[order], zt[order]


def eigvalsh(a):
    """Ascending eigenvalues of a Hermitian matrix (no eigenvectors)."""
    return hermitian_eigen(a, vectors=False).eigenvalues


def eigvalsh_batch(stack):
    """Ascending eigenvalues of each matrix in a ``(k, n, n)`` Hermitian stack."""
    stack = np.asarray(stack)
    if stack.ndim != 3:
        raise InvalidInputError("expected a (k, n, n) stack")
    if stack.shape[1] != stack.shape[2]:
        raise InvalidInputError(f"expected square matrices, got shape {stack.shape[1:]}")
    work = stack.astype(np.complex128)
    if not np.all(np.isfinite(work)):
        raise InvalidInputError("matrix has non-finite entries")
    adj = work.conj().transpose(0, 2, 1)
    if work.size:
        scale = np.abs(work).max(axis=(1, 2))
        skew = np.abs(work - adj).max(axis=(1, 2))
        bad = skew > HERMITIAN_RTOL * np.maximum(scale, np.finfo(float).tiny)
        if bad.any():
            raise InvalidInputError(f"matrix {int(np.flatnonzero(bad)[0])} of the stack is not Hermitian")
    work = 0.5 * (work + adj)
    n = stack.shape[1]
    vals, failed = _eigvals_batch(np.ascontiguousarray(work), 30 * max(n, 1))
    if failed >= 0:
        raise ConvergenceError(f"implicit QL did not converge for matrix {failed}", index=int(failed))
    return vals


# ---------------------------------------------------------------------------
# random sampling
# ---------------------------------------------------------------------------


def make_rng(seed, *keys):
    """Philox generator for ``seed`` and an optional tuple of stream keys.

    Distinct key tuples give statistically independent streams; the mapping is
    fixed so the same ``(seed, keys)`` always reproduces the same draws.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def _box_muller(rng, shape):
    u1 = 1.0 - rng.random(shape)  # in (0, 1]
    u2 = rng.random(shape)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return radius, angle


def sample_complex_gaussian(rows, cols, rng):
    """``rows x cols`` matrix of iid complex Gaussians with E|X|^2 = 1.

    Real and imaginary parts are independent N(0, 1/2): they are the two
    outputs of one Box-Muller pair, scaled by 1/sqrt(2).
    """
    if rows < 1 or cols < 1:
        raise InvalidInputError("dimensions must be positive")
    radius, angle = _box_muller(rng, (rows, cols))
    return np.sqrt(0.5) * radius * np.exp(1j * angle)


def sample_gue(dim, rng, size=None):
    """GUE matrix: real N(0,1) diagonal, off-diagonal parts N(0,1/2).

    With ``size`` a stack of ``size`` independent matrices is returned.
    """
    if dim < 1:
        raise InvalidInputError("dim must be >= 1")
    k = 1 if size is None else int(size)
    z = sample_complex_gaussian(k * dim, dim, rng).reshape(k, dim, dim)
    g = np.triu(z, 1)
    g = g + g.conj().transpose(0, 2, 1)
    diag = np.sqrt(2.0) * sample_complex_gaussian(k, dim, rng).real
    idx = np.arange(dim)
    g[:, idx, idx] = diag
    return g[0] if size is None else g
