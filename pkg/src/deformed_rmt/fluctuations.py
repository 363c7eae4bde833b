"""Second-order behaviour of the outliers.

At an outlier location ``rho`` (with ``m = m(rho)`` real) the relevant sums are

    Delta  = 1 - c sum w (m t / (1 + c m t))^2            (so m' = m^2 / Delta)
    alpha2 = m^2/Delta [sum w (t^2 + 2 w2 t)/(1+cmt)^2 + c (sum w w2 m t/(1+cmt)^2)^2]

and the fluctuations ``sqrt(n) (lambda_hat - rho)`` of a multiplicity-j outlier
converge to the ordered eigenvalues of ``(alpha G + bias) / (omega^2 g'(rho))``
with ``G`` a j x j GUE matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DomainError, InvalidInputError, SingularityError
from .linalg import eigvalsh_batch, sample_gue
from .stieltjes import solve_m, solve_m_finite
from .support import compute_support

PRECONDITION_TOL = 1e-8


def _m_at(spec, rho, support=None):
    support = support or compute_support(spec)
    gap = support.gap_containing(rho)
    if gap is None or gap not in support.gaps_right_of_first_bulk():
        raise DomainError(f"rho = {rho} is not in a gap right of the first bulk")
    return solve_m(spec, float(rho)).m.real


def _terms(spec, m):
    t, w, c = spec.nu.locations, spec.nu.weights, spec.c
    den = 1.0 + c * m * t
    return t, w, c, den


def _delta_from_m(spec, m):
    t, w, c, den = _terms(spec, m)
    delta = 1.0 - c * np.sum(w * (m * t / den) ** 2)
    if not delta > 0:
        raise ConsistencyError(f"Delta = {delta:.6g} is not positive; rho is misplaced")
    return float(delta)


def compute_delta(spec, rho, support=None):
    """``Delta(rho) = 1 - c int (m t / (1 + c m t))^2 nu(dt)``, in (0, 1]."""
    return _delta_from_m(spec, _m_at(spec, rho, support))


def g_prime(spec, rho, support=None):
    """Analytic ``g'(rho) = m'(2 c rho m - 1 + c) + c m^2`` with ``m' = m^2 / Delta``."""
    m = _m_at(spec, rho, support)
    mp = m * m / _delta_from_m(spec, m)
    return float(mp * (2.0 * spec.c * rho * m - 1.0 + spec.c) + spec.c * m * m)


def _checked_m(spec, rho, omega_sq, support):
    m = _m_at(spec, rho, support)
    g = m * (spec.c * rho * m - 1.0 + spec.c)
    if abs(omega_sq * g - 1.0) > PRECONDITION_TOL:
        raise InvalidInputError(
            f"rho = {rho} does not solve omega^2 g(rho) = 1 (residual {omega_sq * g - 1.0:.3e})"
        )
    return m


def compute_alpha_sq(spec, rho, omega_sq, support=None):
    """Limiting variance factor ``alpha^2`` of the outlier at ``rho``."""
    m = _checked_m(spec, rho, omega_sq, support)
    t, w, c, den = _terms(spec, m)
    delta = _delta_from_m(spec, m)
    first = np.sum(w * (t * t + 2.0 * omega_sq * t) / den**2)
    second = c * np.sum(w * omega_sq * m * t / den**2) ** 2
    return float(m * m / delta * (first + second))


def compute_lemma3p_variances(spec, rho, omega_sq, support=None):
    """The three partial variances ``(varsigma^2, sigma^2, sigma_tilde^2)``.

    They recombine as ``sigma^2 / m^2 + rho^2 m^2 sigma_tilde^2 + 2 varsigma^2 = alpha^2``.
    """
    m = _checked_m(spec, rho, omega_sq, support)
    t, w, c, den = _terms(spec, m)
    delta = _delta_from_m(spec, m)
    varsigma = omega_sq / delta * np.sum(w * m * m * t / den**2)
    sigma = np.sum(w * m**4 * t * t / den**2) / delta
    sigma_tilde = c * omega_sq**2 / (rho * rho * delta) * np.sum(w * m * t / den**2) ** 2
    return float(varsigma), float(sigma), float(sigma_tilde)


def compute_bias(c_n, d, lam_n, rho, block):
    """Finite-n offset ``sqrt(n) (H_n(rho) + I)`` restricted to one diagonal block.

    ``lam_n`` is the matrix measure attached to the deformation (for instance
    :meth:`MatrixMeasure.from_factor`), ``block`` a slice or ``(start, stop)``.
    """
    d = np.asarray(d, dtype=float)
    n = d.size
    m_n = solve_m_finite(c_n, d, float(rho)).m.real
    den = 1.0 + c_n * m_n * lam_n.locations
    if np.any(np.abs(den) < 1e-12):
        raise SingularityError(f"1 + c_n m_n t vanishes at rho = {rho}")
    h = np.tensordot(m_n / den, lam_n.weights, axes=(0, 0))
    sl = block if isinstance(block, slice) else slice(*block)
    hb = h[sl, sl]
    out = np.sqrt(n) * (hb + np.eye(hb.shape[0]))
    return 0.5 * (out + out.conj().T)


@dataclass(frozen=True)
class FluctuationReport:
    rho: float
    omega_sq: float
    multiplicity: int
    delta: float
    g_prime: float
    alpha_sq: float
    varsigma_sq: float
    sigma_sq: float
    sigma_tilde_sq: float
    scale: float
    bias_matrix: np.ndarray = field(default=None)

    @property
    def limit_std(self):
        """Standard deviation of the j = 1 limit law with zero bias."""
        return abs(self.scale) * np.sqrt(self.alpha_sq)

    def to_dict(self):
        b = np.asarray(self.bias_matrix)
        return {
            "rho": self.rho,
            "omega_sq": self.omega_sq,
            "multiplicity": self.multiplicity,
            "delta": self.delta,
            "g_prime": self.g_prime,
            "alpha_sq": self.alpha_sq,
            "varsigma_sq": self.varsigma_sq,
            "sigma_sq": self.sigma_sq,
            "sigma_tilde_sq": self.sigma_tilde_sq,
            "scale": self.scale,
            "limit_std": self.limit_std,
            "bias_matrix": {"re": b.real.tolist(), "im": b.imag.tolist()},
        }


def fluctuation_report(spec, rho, omega_sq, multiplicity=1, bias=None, support=None):
    support = support or compute_support(spec)
    alpha_sq = compute_alpha_sq(spec, rho, omega_sq, support)
    varsigma, sigma, sigma_tilde = compute_lemma3p_variances(spec, rho, omega_sq, support)
    gp = g_prime(spec, rho, support)
    bias = np.zeros((multiplicity, multiplicity), complex) if bias is None else np.asarray(bias, complex)
    if bias.shape != (multiplicity, multiplicity):
        raise InvalidInputError(f"bias must be {multiplicity}x{multiplicity}, got {bias.shape}")
    return FluctuationReport(
        rho=float(rho),
        omega_sq=float(omega_sq),
        multiplicity=int(multiplicity),
        delta=compute_delta(spec, rho, support),
        g_prime=gp,
        alpha_sq=alpha_sq,
        varsigma_sq=varsigma,
        sigma_sq=sigma,
        sigma_tilde_sq=sigma_tilde,
        scale=1.0 / (omega_sq * gp),
        bias_matrix=bias,
    )


def sample_limit_law(report, rng, size=None):
    """Draw from the limiting law of ``sqrt(n) (lambda_hat - rho)``.

    Returns the j eigenvalues of ``scale (alpha G + bias)`` in decreasing
    order; with ``size`` an array of shape ``(size, j)``.
    """
    alpha = np.sqrt(report.alpha_sq)
    bias = np.asarray(report.bias_matrix, complex)
    k = 1 if size is None else int(size)
    mats = report.scale * (alpha * sample_gue(report.multiplicity, rng, size=k) + bias[None])
    vals = eigvalsh_batch(mats)[:, ::-1]
    return vals[0] if size is None else vals
