"""Stieltjes transform of the limiting spectral measure and its finite-n analogue.

The transform ``m(z)`` is the unique solution in the upper half plane of

    m = 1 / (-z + sum_k w_k t_k / (1 + c m t_k)).

Off the real axis the solver runs a damped fixed-point iteration and finishes
with Newton on ``G(m) = m - F(m)``. When that fails, or when ``z`` is real, the
solution is tracked along ``x + iy`` for decreasing ``y`` with warm starts,
which pins the branch selected by the limit from the upper half plane.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, InvalidInputError, SingularityError
from .measure import DiscreteMeasure

RESIDUAL_TOL = 1e-12
DAMPING = 0.5
ITERATION_BUDGET = 100_000
REAL_PATH = tuple(10.0 ** -k for k in range(0, 13))
RICHARDSON_Y = (1e-3, 5e-4, 2.5e-4)
DEFAULT_GRID_POINTS = 2001


@dataclass(frozen=True)
class StieltjesSolution:
    z: complex
    m: complex
    residual: float
    iterations: int


@dataclass(frozen=True)
class DensityCurve:
    grid: np.ndarray
    values: np.ndarray
    atom_at_zero: float

    def mass(self):
        """Atom plus the integrated density.

        When the grid starts at 0 the first panel is integrated under the
        ``f ~ C / sqrt(x)`` model (exact for the hard edge at c = 1, and
        negligible when the density vanishes near 0).
        """
        x, f = self.grid, self.values
        if x.size >= 2 and x[0] == 0.0:
            head = 2.0 * x[1] * f[1]
            return self.atom_at_zero + head + float(np.trapezoid(f[1:], x[1:]))
        return self.atom_at_zero + float(np.trapezoid(f, x))

    def to_csv(self):
        lines = ["x,f"]
        lines += [f"{x:.12g},{f:.12g}" for x, f in zip(self.grid, self.values)]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# vectorised kernels on (t, w, c)
# ---------------------------------------------------------------------------


def _sums(m, t, w, c):
    den = 1.0 + c * m[:, None] * t[None, :]
    s1 = (w * t / den).sum(axis=1)
    s2 = (w * t * t / den**2).sum(axis=1)
    return s1, s2


def _fixed_map(m, z, t, w, c):
    s1, _ = _sums(m, t, w, c)
    return 1.0 / (-z + s1)


def _residual(m, z, t, w, c):
    return np.abs(m - _fixed_map(m, z, t, w, c))


def _accepted(res, m):
    return res <= RESIDUAL_TOL * np.maximum(1.0, np.abs(m))


def _newton(m, z, t, w, c, max_iter=60):
    """Vectorised Newton on ``G(m) = m - F(m)``; returns (m, converged, iters)."""
    m = m.copy()
    done = np.zeros(m.shape, bool)
    iters = 0
    for _ in range(max_iter):
        act = ~done
        if not act.any():
            break
        iters += 1
        s1, s2 = _sums(m[act], t, w, c)
        f = 1.0 / (-z[act] + s1)
        g = m[act] - f
        gp = 1.0 - f * f * c * s2
        with np.errstate(divide="ignore", invalid="ignore"):
            step = g / gp
        bad = ~np.isfinite(step)
        step[bad] = 0.0
        m_act = m[act] - step
        m[act] = m_act
        res = _residual(m_act, z[act], t, w, c)
        ok = _accepted(res, m_act) & np.isfinite(m_act)
        idx = np.flatnonzero(act)
        done[idx[ok]] = True
        if bad.any():
            # leave non-finite steps unconverged
            done[idx[bad]] = False
    return m, done, iters


def _polish(m, z, t, w, c, steps=6):
    """Extra Newton steps while they keep shrinking.

    The residual test alone leaves an error of order residual / (1 - F'(m)),
    which is large where the fixed point is ill-conditioned (tiny gaps).
    """
    prev = np.full(m.shape, np.inf)
    for _ in range(steps):
        s1, s2 = _sums(m, t, w, c)
        f = 1.0 / (-z + s1)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = (m - f) / (1.0 - f * f * c * s2)
        size = np.abs(step)
        take = np.isfinite(step) & (size < prev)
        if not take.any():
            break
        cand = np.where(take, m - np.where(take, step, 0), m)
        better = _residual(cand, z, t, w, c) <= 2.0 * _residual(m, z, t, w, c) + 1e-300
        m = np.where(take & better, cand, m)
        prev = np.where(take & better, size, 0.0)
    return m


def _damped(m, z, t, w, c, budget):
    """Damped fixed-point iteration; stops early once progress stalls."""
    m = m.copy()
    best = np.inf
    it = 0
    while it < budget:
        f = _fixed_map(m, z, t, w, c)
        res = np.abs(m - f)
        if np.all(_accepted(res, m)):
            break
        m = (1.0 - DAMPING) * m + DAMPING * f
        it += 1
        if it % 50 == 0:
            worst = res.max()
            if worst > 0.5 * best:
                break
            best = worst
    return m, it


def _solve_upper(z, t, w, c, m0=None):
    """Solve for every ``z`` with ``Im z > 0``; returns (m, iterations)."""
    z = np.asarray(z, dtype=complex)
    m = -1.0 / z if m0 is None else np.asarray(m0, dtype=complex).copy()
    m, it = _damped(m, z, t, w, c, ITERATION_BUDGET // 2)
    res = _residual(m, z, t, w, c)
    todo = ~_accepted(res, m)
    if todo.any():
        mn, ok, k = _newton(m[todo], z[todo], t, w, c)
        it += k
        ok &= mn.imag > 0
        idx = np.flatnonzero(todo)
        m[idx[ok]] = mn[ok]
        todo[idx[ok]] = False
    if todo.any():
        idx = np.flatnonzero(todo)
        mc, k = _continue_down(z[idx].real, z[idx].imag, t, w, c)
        m[idx] = mc
        it += k
    return m, it


def _start_height(x, t, c):
    return 10.0 * (1.0 + np.max(np.abs(x), initial=0.0) + (1.0 + c) * 4.0 * t.max())


def _continue_down(x, y_target, t, w, c):
    """Track the upper-half-plane root along ``x + iy`` from large y down to ``y_target``."""
    x = np.asarray(x, dtype=float)
    y_target = np.broadcast_to(np.asarray(y_target, dtype=float), x.shape).copy()
    y = np.full(x.shape, max(_start_height(x, t, c), y_target.max()))
    z0 = x + 1j * y
    m, it = _damped(-1.0 / z0, z0, t, w, c, ITERATION_BUDGET // 2)
    m, ok, k = _newton(m, z0, t, w, c)
    it += k
    if not ok.all():
        raise ConvergenceError("fixed point failed at the continuation start",
                               residual=float(_residual(m, z0, t, w, c).max()))
    ratio = np.full(x.shape, 10.0)
    while np.any(y > y_target):
        act = np.flatnonzero(y > y_target)
        y_new = np.maximum(y[act] / ratio[act], y_target[act])
        z_new = x[act] + 1j * y_new
        mn, ok, k = _newton(m[act], z_new, t, w, c)
        it += k
        ok &= mn.imag > 0
        m[act[ok]] = mn[ok]
        y[act[ok]] = y_new[ok]
        fail = act[~ok]
        ratio[fail] = np.sqrt(ratio[fail])
        if np.any(ratio[fail] < 1.0 + 1e-9):
            bad = fail[ratio[fail] < 1.0 + 1e-9][0]
            raise ConvergenceError(
                f"continuation stalled at z = {x[bad]} + {y[bad]}i",
                index=int(bad),
                residual=float(_residual(m[[bad]], np.array([x[bad] + 1j * y[bad]]), t, w, c)[0]),
            )
        if it > ITERATION_BUDGET:
            raise ConvergenceError("iteration budget exhausted during continuation")
        # regrow the step after success
        ratio[act[ok]] = np.minimum(ratio[act[ok]] ** 2, 10.0)
    return m, it


def _x_prime(m, t, w, c):
    _, s2 = _sums(np.atleast_1d(m), t, w, c)
    return (1.0 / np.atleast_1d(m) ** 2 - c * s2).real


def _solve_real(x, t, w, c):
    """Real root of the fixed point at real ``x`` outside the support."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    mc, it = _continue_down(xa, REAL_PATH[-1], t, w, c)
    m = mc.real.astype(complex)
    mr, ok, k = _newton(m, xa.astype(complex), t, w, c)
    it += k
    mr = mr.real
    for i, xi in enumerate(xa):
        if not ok[i] or not np.isfinite(mr[i]) or mr[i] == 0.0:
            raise DomainError(f"evaluation inside support at x = {xi}")
        den = 1.0 + c * mr[i] * t
        if np.any(np.abs(den) < 1e-14):
            raise DomainError(f"evaluation inside support at x = {xi}")
        xp = _x_prime(np.array([mr[i]]), t, w, c)[0]
        if not xp > 0:
            raise DomainError(f"evaluation inside support at x = {xi}")
        # in a gap Im m(x + iy) ~ y m'(x) = y / x'(m), large near tiny gaps
        if abs(mc[i].imag) > max(1e-6 * max(1.0, abs(mr[i])), 100.0 * REAL_PATH[-1] / xp):
            raise DomainError(f"evaluation inside support at x = {xi}")
    return mr.astype(complex), it


def _solve(z, t, w, c):
    z = complex(z)
    if not (np.isfinite(z.real) and np.isfinite(z.imag)):
        raise InvalidInputError("z must be finite")
    zz = np.array([z])
    if z.imag > 0:
        m, it = _solve_upper(zz, t, w, c)
    elif z.imag < 0:
        m, it = _solve_upper(zz.conj(), t, w, c)
        m = m.conj()
    else:
        if np.all(t == 0.0):
            if z.real == 0.0:
                raise DomainError("evaluation inside support at x = 0")
            m, it = np.array([-1.0 / z]), 0
        else:
            m, it = _solve_real(z.real, t, w, c)
    m = _polish(m, zz, t, w, c)
    if z.imag == 0:
        m = m.real.astype(complex)
    res = float(_residual(m, zz, t, w, c)[0])
    if not _accepted(np.array([res]), m)[0]:
        raise ConvergenceError(f"fixed point residual {res:.3e} above tolerance at z = {z}",
                               residual=res)
    return StieltjesSolution(z=z, m=complex(m[0]), residual=res, iterations=int(it))


def solve_m(spec, z):
    """Limiting Stieltjes transform ``m(z)`` of the model ``spec``.

    ``z`` may be any complex number off the real axis, or a real number in a
    gap of the support (including negative reals). Real points inside a bulk
    raise :class:`DomainError`.
    """
    return _solve(z, spec.nu.locations, spec.nu.weights, spec.c)


def _finite_measure(d):
    d = np.asarray(d, dtype=float)
    if d.ndim != 1 or d.size == 0 or np.any(d < 0) or not np.all(np.isfinite(d)):
        raise InvalidInputError("d must be a non-empty vector of finite nonnegative values")
    uniq, counts = np.unique(d, return_counts=True)
    return DiscreteMeasure(uniq, counts / d.size)


def solve_m_finite(c_n, d, z):
    """Finite-n transform ``m_n(z)`` with ``nu_n = n^-1 sum_j delta_{d_j}``."""
    nu_n = _finite_measure(d)
    if not c_n > 0:
        raise InvalidInputError("c_n must be positive")
    return _solve(z, nu_n.locations, nu_n.weights, float(c_n))


def t_tilde_diag(c_n, d, z, m_n):
    """Diagonal of ``[-z (I + c_n m_n D)]^{-1}``."""
    d = np.asarray(d, dtype=float)
    den = 1.0 + c_n * m_n * d
    if np.any(np.abs(den) < 1e-14):
        j = int(np.argmin(np.abs(den)))
        raise SingularityError(f"1 + c_n m_n d_j vanishes at j = {j} (d_j = {d[j]})")
    return 1.0 / (-z * den)


def atom_at_zero(spec):
    if spec.is_noiseless:
        return 1.0
    return max(0.0, 1.0 - 1.0 / spec.c)


def density_bound(spec):
    scale = max([spec.nu.max_location] + [w for w, _ in spec.spikes] + [1.0])
    return 4.0 * (1.0 + np.sqrt(spec.c)) ** 2 * scale


def _richardson(vals, ratio=2.0):
    # linear-then-quadratic error model in y with halving steps
    table = list(vals)
    order = 1
    while len(table) > 1:
        fac = ratio**order
        table = [(fac * b - a) / (fac - 1.0) for a, b in zip(table, table[1:])]
        order += 1
    return table[0]


def density(spec, grid=None):
    """Density of the continuous part of the limiting spectral measure.

    ``f(x) = Im m(x + iy) / pi`` is evaluated at three small heights and
    extrapolated to ``y = 0``. The Dirac mass at zero is removed analytically
    before extrapolating; ``f(0)`` is reported as 0.
    """
    atom = atom_at_zero(spec)
    if grid is None:
        from .support import compute_support

        upper = compute_support(spec).upper_edge
        if upper <= 0:
            upper = 1.0
        grid = np.linspace(0.0, 1.2 * upper, DEFAULT_GRID_POINTS)
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise InvalidInputError("grid must be strictly increasing")
    if grid[0] < 0 or grid[-1] > density_bound(spec):
        raise InvalidInputError(f"grid must lie in [0, {density_bound(spec):.6g}]")
    if spec.is_noiseless:
        return DensityCurve(grid, np.zeros_like(grid), atom)
    t, w, c = spec.nu.locations, spec.nu.weights, spec.c
    samples = []
    m = None
    for y in RICHARDSON_Y:
        z = grid + 1j * y
        if m is None:
            m, _ = _continue_down(grid, y, t, w, c)
        else:
            m, ok, _ = _newton(m, z, t, w, c)
            if not np.all(ok & (m.imag > 0)):
                m, _ = _continue_down(grid, y, t, w, c)
        im = m.imag - atom * y / (grid**2 + y**2)
        samples.append(im / np.pi)
    vals = np.maximum(_richardson(samples), 0.0)
    vals[grid == 0.0] = 0.0
    return DensityCurve(grid, vals, atom)
