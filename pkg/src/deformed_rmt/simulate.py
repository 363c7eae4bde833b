"""Monte Carlo realizations of ``Sigma = n^{-1/2} X D^{1/2} + P`` and experiments on them.

Every trial draws from its own Philox stream keyed by ``(seed, trial_index)``,
so trials can be farmed out to worker processes and reassembled in index order
without changing a single bit of the results. The worker count is read from
``DEFORMED_RMT_THREADS`` (default: number of CPUs).
"""

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, DomainError, InvalidInputError, SingularityError
from .linalg import eigvalsh, hermitian_eigen_projected, make_rng, sample_complex_gaussian
from .measure import MatrixMeasure, ModelSpec, quantile_discretize
from .outliers import find_outliers
from .stieltjes import density
from .support import compute_support

log = logging.getLogger(__name__)

DEFAULT_SEED = 20240607
THREADS_ENV = "DEFORMED_RMT_THREADS"
GAP_INSET = 1e-3
ZERO_TOL = 1e-10
SAMPLER_STREAM = 2**31 - 1  # stream key reserved for limit-law draws
RESOLVENT_GUARD = 1e-8


@dataclass(frozen=True)
class RealizationConfig:
    spec: ModelSpec
    n: int
    seed: int = DEFAULT_SEED
    trials: int = 1
    deterministic_s: bool = False

    def __post_init__(self):
        if int(self.n) < 1:
            raise InvalidInputError("n must be >= 1")
        object.__setattr__(self, "n", int(self.n))
        if int(self.trials) < 1:
            raise InvalidInputError("trials must be >= 1")
        object.__setattr__(self, "trials", int(self.trials))
        r = self.spec.rank
        if r > min(self.N, self.n):
            raise InvalidInputError(f"spike rank {r} exceeds min(N, n) = {min(self.N, self.n)}")

    @property
    def N(self):
        return max(1, int(round(self.spec.c * self.n)))

    @property
    def c_n(self):
        return self.N / self.n

    def to_dict(self):
        return {
            "model": self.spec.to_dict(),
            "n": self.n,
            "N": self.N,
            "seed": self.seed,
            "trials": self.trials,
            "deterministic_s": self.deterministic_s,
        }


@dataclass(frozen=True)
class Realization:
    sigma: np.ndarray  # N x n
    y: np.ndarray  # X D^{1/2}, N x n
    u: np.ndarray  # N x r, first canonical columns
    r_factor: np.ndarray  # n x r, P = U R^*
    d: np.ndarray

    @property
    def p(self):
        return self.u @ self.r_factor.conj().T

    def lambda_n(self):
        """Matrix measure ``R^* diag(delta_{d_j}) R`` of the deformation."""
        return MatrixMeasure.from_factor(self.d, self.r_factor)


def _deterministic_s(d, r):
    """Columns ``exp(2 pi i k l / n_t)`` on each block of equal ``d``: ``S^* S = n I``."""
    n = d.size
    s = np.zeros((n, r), complex)
    for value in np.unique(d):
        idx = np.flatnonzero(d == value)
        if idx.size < r:
            raise InvalidInputError(
                f"deterministic S needs at least r = {r} coordinates per noise level; d = {value} has {idx.size}"
            )
        ell = np.arange(idx.size)[:, None]
        s[idx] = np.exp(2j * np.pi * ell * np.arange(r)[None, :] / idx.size)
    return s


def build_realization(cfg, trial_index=0):
    spec, n, N = cfg.spec, cfg.n, cfg.N
    rng = make_rng(cfg.seed, trial_index)
    d = quantile_discretize(spec.nu, n)
    y = sample_complex_gaussian(N, n, rng) * np.sqrt(d)[None, :]
    r = spec.rank
    u = np.zeros((N, r))
    u[np.arange(r), np.arange(r)] = 1.0
    if r:
        s = _deterministic_s(d, r) if cfg.deterministic_s else sample_complex_gaussian(n, r, rng)
        amp = np.sqrt(np.diag(spec.omega))
        r_factor = s * amp[None, :] / np.sqrt(n)
    else:
        r_factor = np.zeros((n, 0), complex)
    sigma = y / np.sqrt(n) + u @ r_factor.conj().T
    return Realization(sigma=sigma, y=y, u=u, r_factor=r_factor, d=d)


def gram_eigenvalues(sigma):
    """Ascending eigenvalues of ``Sigma Sigma^*`` via the smaller Gram matrix."""
    N, n = sigma.shape
    if N <= n:
        return eigvalsh(sigma @ sigma.conj().T)
    vals = eigvalsh(sigma.conj().T @ sigma)
    return np.concatenate([np.zeros(N - n), vals])


def _inset_bounds(gap):
    if gap.bounded:
        pad = GAP_INSET * (gap.hi - gap.lo)
        return gap.lo + pad, gap.hi - pad
    return gap.lo + GAP_INSET * max(gap.lo, 1.0), np.inf


def count_in_gaps(eigs, gaps):
    out = []
    for g in gaps:
        lo, hi = _inset_bounds(g)
        out.append(int(np.count_nonzero((eigs > lo) & (eigs < hi))))
    return out


@dataclass(frozen=True)
class TrialResult:
    trial_index: int
    eigenvalues: np.ndarray  # ascending, N values
    outliers_per_gap: list
    top: np.ndarray  # top r eigenvalues, descending

    def to_dict(self):
        return {
            "trial_index": self.trial_index,
            "outliers_per_gap": self.outliers_per_gap,
            "top": self.top.tolist(),
        }


def run_trial(cfg, trial_index=0, support=None):
    support = support or compute_support(cfg.spec.without_spikes())
    real = build_realization(cfg, trial_index)
    try:
        eigs = gram_eigenvalues(real.sigma)
    except ConvergenceError as exc:
        raise ConvergenceError(f"trial {trial_index}: {exc}", index=exc.index) from exc
    r = max(cfg.spec.rank, 1)
    return TrialResult(
        trial_index=trial_index,
        eigenvalues=eigs,
        outliers_per_gap=count_in_gaps(eigs, support.gaps),
        top=eigs[::-1][:r].copy(),
    )


def _workers():
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            raise InvalidInputError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    return os.cpu_count() or 1


def _trial_job(args):
    cfg, k, support = args
    return run_trial(cfg, k, support)


def run_trials(cfg, support=None):
    """All ``cfg.trials`` trials, in trial-index order."""
    support = support or compute_support(cfg.spec.without_spikes())
    jobs = [(cfg, k, support) for k in range(cfg.trials)]
    workers = min(_workers(), cfg.trials)
    if workers <= 1:
        return [_trial_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial_job, jobs, chunksize=max(1, cfg.trials // (4 * workers))))


# ---------------------------------------------------------------------------
# detection determinant
# ---------------------------------------------------------------------------


class ShatDeterminant:
    """``x -> det S_hat(x)`` for one realization.

    Only the smaller no-spike Gram matrix is decomposed. With ``Q`` and ``Q~``
    the two resolvents, the push-through identities ``Y Q~ = Q Y`` and
    ``x Q~ = Y^* Q Y / n - I`` (and their mirror images) express every block
    through projections of two thin matrices onto the eigenvectors, so each
    evaluation costs O(min(N, n) r^2).
    """

    def __init__(self, y, u, r_factor):
        y = np.asarray(y, complex)
        u = np.asarray(u, complex)
        r_factor = np.asarray(r_factor, complex)
        N, n = y.shape
        self.r = u.shape[1]
        self.wide = N > n
        if self.wide:
            # decompose Y^*Y/n; direct side R, reflected side Y^*U/sqrt(n)
            gram = y.conj().T @ y / n
            direct, reflected, self.base = r_factor, y.conj().T @ u / np.sqrt(n), u.conj().T @ u
        else:
            # decompose YY^*/n; direct side U, reflected side YR/sqrt(n)
            gram = y @ y.conj().T / n
            direct, reflected, self.base = u, y @ r_factor / np.sqrt(n), r_factor.conj().T @ r_factor
        self.lam, proj = hermitian_eigen_projected(gram, np.hstack([direct, reflected]))
        self.p_direct, self.p_reflected = proj[:, : self.r], proj[:, self.r:]

    def matrix(self, x):
        x = float(x)
        if x <= 0:
            raise DomainError("x must be positive")
        gap = np.abs(self.lam - x).min() if self.lam.size else np.inf
        if gap < RESOLVENT_GUARD:
            raise SingularityError(f"x = {x} is within {gap:.2e} of a no-spike eigenvalue")
        q = 1.0 / (self.lam - x)
        dq = self.p_direct.conj().T * q
        direct = dq @ self.p_direct
        cross = dq @ self.p_reflected
        other = ((self.p_reflected.conj().T * q) @ self.p_reflected - self.base) / x
        eye = np.eye(self.r)
        if self.wide:
            uqu, rqr, mid = other, direct, eye + cross.conj().T
        else:
            uqu, rqr, mid = direct, other, eye + cross
        sx = np.sqrt(x)
        return np.block([[sx * uqu, mid], [mid.conj().T, sx * rqr]])

    def __call__(self, x):
        return float(np.linalg.det(self.matrix(x)).real)


def shat_det(y, u, r_factor, x):
    """Determinant of the ``2r x 2r`` detection matrix at a single real ``x``."""
    return ShatDeterminant(y, u, r_factor)(x)


def count_sign_changes(values):
    s = np.sign(np.asarray(values, dtype=float))
    s = s[s != 0]
    return int(np.count_nonzero(s[1:] != s[:-1]))


def shat_gap_census(cfg, trial_index, gap, points=200, support=None):
    """Sign changes of ``det S_hat`` over a gap versus the direct eigenvalue count."""
    real = build_realization(cfg, trial_index)
    eigs = gram_eigenvalues(real.sigma)
    lo, hi = _inset_bounds(gap)
    if not np.isfinite(hi):
        hi = max(eigs[-1], lo) + 1.0
    det = ShatDeterminant(real.y, real.u, real.r_factor)
    grid = np.linspace(lo, hi, points)
    values = [det(x) for x in grid]
    direct = int(np.count_nonzero((eigs > lo) & (eigs < hi)))
    return count_sign_changes(values), direct, grid, np.array(values)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DensityExperiment:
    edges: np.ndarray
    histogram: np.ndarray
    theory: np.ndarray
    l1: float
    atom_fraction: float
    theory_atom: float

    def to_dict(self):
        return {"l1": self.l1, "atom_fraction": self.atom_fraction, "theory_atom": self.theory_atom,
                "bins": int(self.histogram.size)}

    def to_csv(self):
        lines = ["lo,hi,empirical,theory"]
        for lo, hi, h, f in zip(self.edges[:-1], self.edges[1:], self.histogram, self.theory):
            lines.append(f"{lo:.12g},{hi:.12g},{h:.12g},{f:.12g}")
        return "\n".join(lines) + "\n"


def experiment_density(cfg, bins=100, support=None, trials=None):
    """Averaged eigenvalue histogram versus the limiting density.

    Near-zero eigenvalues are counted as the atom at zero and kept out of the
    histogram, which is normalized so that it integrates to the continuous mass.
    """
    base = cfg.spec.without_spikes()
    support = support or compute_support(base)
    trials = trials if trials is not None else run_trials(cfg, support)
    eigs = np.concatenate([t.eigenvalues for t in trials])
    zero = eigs <= ZERO_TOL
    total = eigs.size
    top = support.upper_edge * 1.05 if support.bulks else 1.0
    edges = np.linspace(0.0, top, bins + 1)
    counts, _ = np.histogram(eigs[~zero], bins=edges)
    width = np.diff(edges)
    hist = counts / (total * width)
    centers = 0.5 * (edges[1:] + edges[:-1])
    theory = density(base, grid=centers).values if support.bulks else np.zeros(bins)
    l1 = float(np.sum(np.abs(hist - theory) * width))
    return DensityExperiment(edges, hist, theory, l1, float(zero.mean()), support.atom_at_zero)


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov statistic."""
    a, b = np.sort(np.asarray(a, float)), np.sort(np.asarray(b, float))
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.abs(fa - fb).max())


@dataclass(frozen=True)
class FluctuationSummary:
    samples: np.ndarray  # (used trials, j), descending within a row
    mean: np.ndarray
    std: np.ndarray
    ks: np.ndarray
    escaped: int
    limit_samples: np.ndarray = field(repr=False, default=None)

    def to_dict(self):
        return {
            "trials_used": int(self.samples.shape[0]),
            "escaped": self.escaped,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "ks": self.ks.tolist(),
        }

    def to_csv(self):
        j = self.samples.shape[1]
        lines = [",".join(f"m{k + 1}" for k in range(j))]
        lines += [",".join(f"{v:.12g}" for v in row) for row in self.samples]
        return "\n".join(lines) + "\n"


def _block_offset(spec, prediction):
    preds = find_outliers(spec)
    return sum(p.multiplicity for p in preds if p.gap == prediction.gap and p.rho > prediction.rho)


def experiment_fluctuations(cfg, prediction, report, draws=100_000, support=None, trials=None):
    """Statistics of ``sqrt(n) (lambda_hat - rho)`` for the outliers of one prediction."""
    from .fluctuations import sample_limit_law

    support = support or compute_support(cfg.spec.without_spikes())
    offset = _block_offset(cfg.spec, prediction)
    j = prediction.multiplicity
    gap = support.gap_containing(prediction.rho)
    lo, hi = _inset_bounds(gap)
    rows, escaped = [], 0
    for t in trials if trials is not None else run_trials(cfg, support):
        desc = t.eigenvalues[::-1]
        inside = desc[(desc > lo) & (desc < hi)]
        block = inside[offset:offset + j]
        if block.size < j:
            escaped += 1
            continue
        rows.append(np.sqrt(cfg.n) * (block - prediction.rho))
    if escaped:
        log.info("experiment_fluctuations: %d trials had eigenvalues outside the gap", escaped)
    samples = np.array(rows).reshape(-1, j)
    limit = sample_limit_law(report, make_rng(cfg.seed, SAMPLER_STREAM), size=draws)
    ks = np.array([ks_distance(samples[:, k], limit[:, k]) for k in range(j)]) if samples.size else np.full(j, np.nan)
    return FluctuationSummary(
        samples=samples,
        mean=samples.mean(axis=0) if samples.size else np.full(j, np.nan),
        std=samples.std(axis=0, ddof=1) if samples.shape[0] > 1 else np.full(j, np.nan),
        ks=ks,
        escaped=escaped,
        limit_samples=limit,
    )
