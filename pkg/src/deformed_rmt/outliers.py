"""First-order outlier locations and inverse spike design.

For spikes of the form ``nu(dt) x Omega`` the outliers solve ``omega^2 g(x) = 1``
with ``g(x) = m(x) (c x m(x) - 1 + c)``, which is decreasing on each gap. For a
general matrix measure ``Lambda`` they are the zeros of ``det(H(x) + I)`` with
``H(x) = int m(x) / (1 + c m(x) t) Lambda(dt)``, increasing in the Hermitian
order on each gap. Gaps to the left of the first bulk never hold outliers.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, DomainError, InvalidInputError, SingularityError
from .measure import MatrixMeasure, ModelSpec
from .stieltjes import solve_m
from .support import compute_support

EDGE_INSET = 1e-6
X_TOL = 1e-12
UNBOUNDED_FACTOR = 1e3
TRACK_POINTS = 64


@dataclass(frozen=True)
class OutlierPrediction:
    rho: float
    multiplicity: int
    spike_omega_sq: float | None
    gap: tuple

    def to_dict(self):
        lo, hi = self.gap
        return {
            "rho": self.rho,
            "multiplicity": self.multiplicity,
            "omega_sq": self.spike_omega_sq,
            "gap": [lo, None if not np.isfinite(hi) else hi],
        }


def _gap_of(support, x):
    gap = support.gap_containing(x)
    if gap is None:
        raise DomainError(f"x = {x} is inside the support")
    return gap


def _m_real(spec, x):
    return solve_m(spec, float(x)).m.real


def g_func(spec, x, support=None):
    """``g(x) = m(x) (c x m(x) - 1 + c)`` at a point ``x`` of a gap."""
    support = support or compute_support(spec)
    _gap_of(support, x)
    m = _m_real(spec, x)
    return m * (spec.c * x * m - 1.0 + spec.c)


def compute_H(spec, x, lam=None, support=None):
    """``H(x) = sum_k m(x) / (1 + c m(x) t_k) W_k``.

    ``lam`` defaults to ``nu x Omega`` built from the spikes of ``spec``; pass
    any :class:`MatrixMeasure` for the general case.
    """
    lam = spec.spike_lambda() if lam is None else lam
    support = support or compute_support(spec)
    _gap_of(support, x)
    m = _m_real(spec, x)
    den = 1.0 + spec.c * m * lam.locations
    if np.any(np.abs(den) < 1e-12):
        raise SingularityError(f"1 + c m t vanishes at x = {x}")
    h = np.tensordot(m / den, lam.weights, axes=(0, 0))
    return 0.5 * (h + h.conj().T)


def _bracket(gap, upper_edge):
    lo = gap.lo + EDGE_INSET * (gap.hi - gap.lo if gap.bounded else max(gap.lo, 1.0))
    if gap.bounded:
        hi = gap.hi - EDGE_INSET * (gap.hi - gap.lo)
    else:
        hi = max(upper_edge, gap.lo, 1.0) * UNBOUNDED_FACTOR
    return lo, hi


def _bisect_decreasing(f, lo, hi):
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if hi - lo <= max(X_TOL, 4e-16 * abs(mid)):
            break
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def find_outliers(spec, support=None):
    """Limits of the outlier eigenvalues for the spikes in ``spec``.

    One prediction per (spike, gap) pair where ``omega^2 g(x) = 1`` has its
    unique root, ordered by decreasing ``rho``.
    """
    support = support or compute_support(spec)
    g = lambda x: g_func(spec, x, support)
    out = []
    for omega_sq, mult in spec.spikes:
        for gap in support.gaps_right_of_first_bulk():
            lo, hi = _bracket(gap, support.upper_edge)
            h = lambda x: omega_sq * g(x) - 1.0
            if h(lo) <= 0:
                continue
            if not gap.bounded:
                while h(hi) >= 0:
                    hi *= 10.0
            elif h(hi) >= 0:
                continue
            rho = _bisect_decreasing(h, lo, hi)
            out.append(OutlierPrediction(rho, mult, omega_sq, (gap.lo, gap.hi)))
    out.sort(key=lambda p: -p.rho)
    return out


def _eig_h_plus_i(spec, lam, x, support):
    return np.linalg.eigvalsh(compute_H(spec, x, lam, support) + np.eye(lam.dim))


def find_outliers_matrix(c, nu, lam, support=None):
    """Zeros of ``det(H(x) + I_r)`` on every gap right of the first bulk.

    Each sorted eigenvalue of ``H(x) + I`` is nondecreasing on a gap, so each
    contributes at most one zero; coincident zeros are merged into a single
    prediction whose multiplicity counts the crossing branches.
    """
    spec = ModelSpec(c, nu, ())
    if not isinstance(lam, MatrixMeasure):
        raise InvalidInputError("lam must be a MatrixMeasure")
    support = support or compute_support(spec)
    r = lam.dim
    preds = []
    for gap in support.gaps_right_of_first_bulk():
        lo, hi = _bracket(gap, support.upper_edge)
        ev = lambda x: _eig_h_plus_i(spec, lam, x, support)
        if not gap.bounded:
            while ev(hi)[0] <= 0:
                hi *= 10.0
        xs = np.linspace(lo, hi, TRACK_POINTS) if gap.bounded else np.geomspace(lo, hi, TRACK_POINTS)
        table = np.array([ev(x) for x in xs])
        scale = max(1.0, np.abs(table).max())
        if np.any(np.diff(table, axis=0) < -1e-9 * scale):
            raise ConsistencyError(
                f"eigenvalue branches of H + I decrease on gap ({gap.lo}, {gap.hi}); refine the grid"
            )
        roots = []
        for ell in range(r):
            branch = table[:, ell]
            if branch[0] >= 0 or branch[-1] <= 0:
                continue
            k = int(np.flatnonzero(branch > 0)[0])
            f = lambda x, ell=ell: -ev(x)[ell]
            roots.append(float(_bisect_decreasing(f, xs[k - 1], xs[k])))
        if len(roots) > r:
            raise ConsistencyError("more zeros than the rank of Lambda")
        roots.sort(reverse=True)
        groups = []
        for x in roots:
            if groups and abs(groups[-1][0] - x) <= 1e-9 * max(1.0, abs(x)):
                groups[-1][1] += 1
            else:
                groups.append([x, 1])
        preds += [OutlierPrediction(float(x), k, None, (gap.lo, gap.hi)) for x, k in groups]
    preds.sort(key=lambda p: -p.rho)
    return preds


def design_spikes(spec, targets, support=None):
    """Spike amplitudes ``omega^2 = 1 / g(rho)`` placing outliers at ``targets``.

    Equal targets merge into one spike with multiplicity. The returned list is
    sorted by decreasing amplitude, ready for :meth:`ModelSpec.with_spikes`.
    """
    support = support or compute_support(spec)
    a = support.first_bulk_left_edge
    allowed = support.gaps_right_of_first_bulk()
    counts = {}
    for rho in targets:
        rho = float(rho)
        gap = support.gap_containing(rho)
        if gap is None:
            raise DomainError(f"target {rho} lies inside the support")
        if gap not in allowed or (support.bulks and rho < a):
            raise DomainError(f"target {rho}: no outlier can exist left of the first bulk")
        counts[rho] = counts.get(rho, 0) + 1
    spikes = []
    for rho, mult in counts.items():
        g = g_func(spec, rho, support)
        if not g > 0:
            raise DomainError(f"target {rho} cannot be reached by nu x Omega spikes (g = {g:.6g} <= 0)")
        spikes.append((1.0 / g, mult))
    spikes.sort(key=lambda s: -s[0])
    return spikes
