"""Bulk / gap structure of the limiting spectral measure.

A real point x0 lies outside the support iff ``x0 = x(m0)`` for some admissible
``m0`` with ``x'(m0) > 0``, where

    x(m) = -1/m + sum_k w_k t_k / (1 + c m t_k).

The admissible set splits into open intervals separated by the poles
``-1/(c t_k)`` and by 0. On each interval the increasing runs of ``x`` are found
by a log-spaced scan of ``x'`` (seeded with the exact critical points, which are
roots of a polynomial for atomic measures) and bisection, and every increasing
run maps to one gap.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, ConvergenceError, DomainError
from .stieltjes import atom_at_zero

log = logging.getLogger(__name__)

SCAN_POINTS = 2048
BISECT_RTOL = 1e-12
EDGE_TOL = 1e-9


@dataclass(frozen=True)
class Gap:
    """Open interval ``(lo, hi)`` of the complement of the support in (0, inf).

    ``m_lo`` / ``m_hi`` bound the increasing run of ``x(m)`` that maps onto it
    (possibly infinite or a pole).
    """

    lo: float
    hi: float
    m_lo: float
    m_hi: float

    @property
    def bounded(self):
        return np.isfinite(self.hi)

    def contains(self, x):
        return self.lo < x < self.hi

    def to_dict(self):
        return {"lo": self.lo, "hi": None if not self.bounded else self.hi}


@dataclass(frozen=True)
class SupportReport:
    bulks: list
    gaps: list
    atom_at_zero: float
    first_bulk_left_edge: float
    critical_points: list = field(default_factory=list)

    @property
    def upper_edge(self):
        return self.bulks[-1][1] if self.bulks else 0.0

    def gaps_right_of_first_bulk(self):
        """Gaps where outliers may appear (everything except ``(0, A)``)."""
        if not self.bulks:
            return list(self.gaps)
        return [g for g in self.gaps if g.lo > 0]

    def gap_containing(self, x):
        for g in self.gaps:
            if g.contains(x):
                return g
        return None

    def to_dict(self):
        return {
            "bulks": [[a, b] for a, b in self.bulks],
            "gaps": [g.to_dict() for g in self.gaps],
            "atom_at_zero": self.atom_at_zero,
            "first_bulk_left_edge": self.first_bulk_left_edge,
            "critical_points": [{"m": m, "x": x} for m, x in self.critical_points],
        }


def _atoms(spec):
    t, w = spec.nu.locations, spec.nu.weights
    keep = t > 0
    return t[keep], w[keep]


def _check_domain(spec, m):
    m = np.asarray(m, dtype=float)
    if np.any(m == 0) or not np.all(np.isfinite(m)):
        raise DomainError("m must be finite and nonzero")
    t, _ = _atoms(spec)
    den = 1.0 + spec.c * np.multiply.outer(m, t)
    if np.any(np.abs(den) < 1e-14):
        raise DomainError("-1/(c m) lies in the support of nu")
    return m


def _x_raw(m, t, w, c):
    m = np.asarray(m, dtype=float)
    return -1.0 / m + (w * t / (1.0 + c * np.multiply.outer(m, t))).sum(axis=-1)


def _xp_raw(m, t, w, c):
    m = np.asarray(m, dtype=float)
    den = 1.0 + c * np.multiply.outer(m, t)
    return 1.0 / m**2 - c * (w * t * t / den**2).sum(axis=-1)


def x_of_m(spec, m):
    """Inverse of the Stieltjes transform on the admissible set."""
    m = _check_domain(spec, m)
    t, w = _atoms(spec)
    out = _x_raw(m, t, w, spec.c)
    return float(out) if out.ndim == 0 else out


def x_prime(spec, m):
    """Analytic derivative ``1/m^2 - c sum w t^2 / (1 + c m t)^2``."""
    m = _check_domain(spec, m)
    t, w = _atoms(spec)
    out = _xp_raw(m, t, w, spec.c)
    return float(out) if out.ndim == 0 else out


def _components(t, c):
    poles = np.sort(-1.0 / (c * t))
    edges = [-np.inf, *poles, 0.0, np.inf]
    return [(a, b) for a, b in zip(edges[:-1], edges[1:])]


def _scan_grid(lo, hi, n=SCAN_POINTS):
    u = np.logspace(-12, 12, n)
    if np.isinf(lo) and np.isinf(hi):
        raise ValueError("component cannot be the whole line")
    if np.isinf(lo):
        return hi - max(abs(hi), 1.0) * u[::-1]
    if np.isinf(hi):
        return lo + max(abs(lo), 1.0) * u
    s = np.logspace(-12, np.log10(0.5), n // 2)
    s = np.concatenate([s, 1.0 - s[::-1]])
    return lo + (hi - lo) * s


def _critical_polynomial_roots(t, w, c):
    """Real roots of ``x'(m) = 0`` after clearing denominators."""
    P = np.polynomial.Polynomial
    lin = [P([1.0, c * ti]) for ti in t]
    prod_all = P([1.0])
    for p in lin:
        prod_all = prod_all * p * p
    acc = P([0.0])
    for i, (ti, wi) in enumerate(zip(t, w)):
        term = P([wi * ti * ti])
        for j, p in enumerate(lin):
            if j != i:
                term = term * p * p
        acc = acc + term
    poly = prod_all - P([0.0, 0.0, c]) * acc
    roots = poly.roots()
    real = roots[np.abs(roots.imag) <= 1e-8 * np.maximum(1.0, np.abs(roots))].real
    return np.unique(real[real != 0.0])


def _bisect_sign_change(f, a, b):
    fa = f(a)
    for _ in range(200):
        mid = 0.5 * (a + b)
        if abs(b - a) <= BISECT_RTOL * max(1.0, abs(mid)):
            return mid
        fm = f(mid)
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def _limit(m_end, side, comp, t, w, c):
    """One-sided limit of ``x`` at a run endpoint; ``side`` is +1 from the right."""
    if np.isinf(m_end):
        return 0.0
    if m_end == 0.0:
        return -np.inf if side > 0 else np.inf
    if m_end in comp and m_end < 0:
        # pole -1/(c t_k)
        return np.inf if side > 0 else -np.inf
    return float(_x_raw(m_end, t, w, c))


def _increasing_runs(comp, t, w, c, seeds):
    lo, hi = comp
    grid = _scan_grid(lo, hi)
    extra = [r for r in seeds if lo < r < hi]
    for r in extra:
        d = 1e-9 * max(1.0, abs(r))
        grid = np.concatenate([grid, [r - d, r + d]])
    grid = np.unique(grid[(grid > lo) & (grid < hi)])
    xp = _xp_raw(grid, t, w, c)
    pos = xp > 0
    runs = []
    i = 0
    nxp = lambda m: float(_xp_raw(m, t, w, c))
    while i < grid.size:
        if not pos[i]:
            i += 1
            continue
        j = i
        while j + 1 < grid.size and pos[j + 1]:
            j += 1
        if i == 0:
            m1 = lo
        else:
            m1 = _bisect_sign_change(nxp, grid[i - 1], grid[i])
        if j == grid.size - 1:
            m2 = hi
        else:
            m2 = _bisect_sign_change(nxp, grid[j], grid[j + 1])
        runs.append((m1, m2))
        i = j + 1
    return runs


def compute_support(spec):
    """Bulks, gaps, atom at zero and the critical points generating each edge."""
    t, w = _atoms(spec)
    c = spec.c
    comps = _components(t, c)
    seeds = _critical_polynomial_roots(t, w, c) if t.size else np.array([])
    raw = []
    for comp in comps:
        for m1, m2 in _increasing_runs(comp, t, w, c, seeds):
            xa = _limit(m1, +1, comp, t, w, c)
            xb = _limit(m2, -1, comp, t, w, c)
            if not xb > xa:
                raise ConvergenceError(f"increasing run on component {comp} has a non-increasing image")
            if xb <= 0:
                continue
            raw.append((max(xa, 0.0), xb, m1, m2, xa))
    raw.sort()
    for (a1, b1, *_), (a2, b2, *_) in zip(raw, raw[1:]):
        if a2 < b1 - EDGE_TOL * max(1.0, abs(b1)):
            raise ConsistencyError(f"gap images overlap: ({a1}, {b1}) and ({a2}, {b2})")
    gaps = [Gap(a, b, m1, m2) for a, b, m1, m2, _ in raw]
    if not gaps or np.isfinite(gaps[-1].hi):
        raise ConvergenceError("no unbounded gap found to the right of the support")

    bulks = []
    left = 0.0
    for g in gaps:
        if g.lo > left:
            bulks.append((left, g.lo))
        left = g.hi
    crit = []
    for g in gaps:
        if g.lo > 0 and np.isfinite(g.m_lo):
            crit.append((float(g.m_lo), g.lo))
        if np.isfinite(g.hi):
            crit.append((float(g.m_hi), g.hi))
    crit.sort(key=lambda p: p[1])
    first_edge = bulks[0][0] if bulks else 0.0
    return SupportReport(
        bulks=bulks,
        gaps=gaps,
        atom_at_zero=atom_at_zero(spec),
        first_bulk_left_edge=first_edge,
        critical_points=crit,
    )


def m_in_gap(spec, x, gap):
    """Real ``m(x)`` for ``x`` inside ``gap`` by bisection on the increasing run."""
    if not gap.contains(x):
        raise DomainError(f"x = {x} is not inside the gap ({gap.lo}, {gap.hi})")
    t, w = _atoms(spec)
    c = spec.c
    f = lambda m: float(_x_raw(m, t, w, c)) - x
    mid = _midpoint(gap.m_lo, gap.m_hi)

    def toward(end, want_positive):
        for k in range(1, 400):
            if np.isinf(end):
                cand = mid + np.sign(end) * 2.0**k
            else:
                cand = end + (mid - end) * 2.0**-k
            val = f(cand)
            if np.isfinite(val) and (val > 0) == want_positive:
                return cand
        raise ConvergenceError(f"could not bracket m for x = {x}")

    fm = f(mid)
    a = mid if fm < 0 else toward(gap.m_lo, False)
    b = mid if fm > 0 else toward(gap.m_hi, True)
    for _ in range(400):
        mm = 0.5 * (a + b)
        if f(mm) < 0:
            a = mm
        else:
            b = mm
        if abs(b - a) <= 4e-16 * max(1e-300, abs(mm)):
            break
    return 0.5 * (a + b)


def _midpoint(lo, hi):
    if np.isinf(lo) and np.isinf(hi):
        return 0.0
    if np.isinf(lo):
        return hi - max(1.0, abs(hi))
    if np.isinf(hi):
        return lo + max(1.0, abs(lo))
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class XmCurve:
    rows: np.ndarray  # columns m, x, x'
    skipped: int

    def to_csv(self):
        lines = ["m,x,xprime"]
        lines += [f"{m:.12g},{x:.12g},{xp:.12g}" for m, x, xp in self.rows]
        return "\n".join(lines) + "\n"


def emit_xm_curve(spec, m_grid):
    """Tabulate ``(m, x(m), x'(m))`` on the admissible part of ``m_grid``."""
    m_grid = np.asarray(m_grid, dtype=float)
    t, w = _atoms(spec)
    c = spec.c
    den = 1.0 + c * np.multiply.outer(m_grid, t)
    ok = (m_grid != 0) & np.all(np.abs(den) >= 1e-14, axis=-1) & np.isfinite(m_grid)
    skipped = int((~ok).sum())
    if skipped:
        log.warning("emit_xm_curve: skipped %d grid points outside the admissible set", skipped)
    m = m_grid[ok]
    rows = np.column_stack([m, _x_raw(m, t, w, c), _xp_raw(m, t, w, c)]) if m.size else np.empty((0, 3))
    return XmCurve(rows, skipped)
