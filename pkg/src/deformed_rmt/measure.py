"""Discrete scalar and matrix-valued measures on [0, inf) and the model description."""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

MASS_TOL = 1e-10
PSD_RTOL = 1e-12


def _as_values(kernel, t):
    vals = np.asarray(kernel(t) if callable(kernel) else kernel, dtype=complex)
    vals = np.broadcast_to(vals, t.shape[:1] + vals.shape[1:] if vals.ndim else t.shape)
    bad = ~np.isfinite(vals)
    if bad.ndim > 1:
        bad = bad.reshape(bad.shape[0], -1).any(axis=1)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise InvalidInputError(f"kernel is not finite at atom t={float(t[k])!r}")
    return vals


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite nonnegative measure ``sum_k w_k delta_{t_k}`` on [0, inf).

    Duplicate locations are merged and atoms are sorted on construction.
    """

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.locations, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if t.ndim != 1 or t.shape != w.shape or t.size == 0:
            raise InvalidInputError("locations and weights must be non-empty 1-D arrays of equal length")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w))):
            raise InvalidInputError("atoms must be finite")
        if np.any(t < 0):
            raise InvalidInputError("atom locations must be >= 0")
        if np.any(w <= 0):
            raise InvalidInputError("atom weights must be > 0")
        uniq, inv = np.unique(t, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        object.__setattr__(self, "locations", uniq)
        object.__setattr__(self, "weights", merged)

    @classmethod
    def from_pairs(cls, pairs):
        arr = np.asarray(pairs, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InvalidInputError("expected a list of [t, w] pairs")
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def dirac(cls, t=1.0):
        return cls(np.array([t]), np.array([1.0]))

    @property
    def mass(self):
        return float(self.weights.sum())

    @property
    def max_location(self):
        return float(self.locations[-1])

    def mass_at(self, t):
        hit = self.locations == t
        return float(self.weights[hit].sum())

    def to_pairs(self):
        return [[float(t), float(w)] for t, w in zip(self.locations, self.weights)]


def integrate(m, kernel):
    """Exact ``sum_k w_k f(t_k)``; ``kernel`` maps an array of locations to values."""
    vals = _as_values(kernel, m.locations)
    return complex(np.sum(m.weights * vals))


@dataclass(frozen=True)
class MatrixMeasure:
    """``sum_k delta_{t_k} W_k`` with r x r Hermitian PSD weights."""

    locations: np.ndarray
    weights: np.ndarray  # shape (k, r, r)

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.locations, dtype=float))
        w = np.asarray(self.weights, dtype=complex)
        if w.ndim == 2:
            w = w[None]
        if w.ndim != 3 or w.shape[1] != w.shape[2] or w.shape[0] != t.size:
            raise InvalidInputError("weights must have shape (atoms, r, r)")
        if np.any(t < 0) or not np.all(np.isfinite(t)):
            raise InvalidInputError("atom locations must be finite and >= 0")
        order = np.argsort(t, kind="stable")
        t, w = t[order], w[order]
        for k in range(t.size):
            wk = w[k]
            scale = max(np.abs(wk).max(), 1.0)
            if np.abs(wk - wk.conj().T).max() > PSD_RTOL * scale:
                raise InvalidInputError(f"weight at t={t[k]} is not Hermitian")
            wk = 0.5 * (wk + wk.conj().T)
            lo = np.linalg.eigvalsh(wk)[0] if wk.size else 0.0
            if lo < -PSD_RTOL * max(np.linalg.norm(wk, 2), 1.0):
                raise InvalidInputError(f"weight at t={t[k]} is not PSD (min eigenvalue {lo:.3e})")
            w[k] = wk
        object.__setattr__(self, "locations", t)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self):
        return self.weights.shape[1]

    @property
    def total_mass(self):
        return self.weights.sum(axis=0)

    @classmethod
    def product(cls, nu, omega):
        """``nu(dt) x Omega`` for a scalar measure and an r x r PSD matrix."""
        omega = np.atleast_2d(np.asarray(omega, dtype=complex))
        return cls(nu.locations, nu.weights[:, None, None] * omega[None])

    @classmethod
    def from_factor(cls, d, r_mat):
        """Measure ``R^* diag(delta_{d_j}) R`` attached to the factor ``R`` (n x r)."""
        d = np.asarray(d, dtype=float)
        r_mat = np.asarray(r_mat, dtype=complex)
        uniq, inv = np.unique(d, return_inverse=True)
        outer = r_mat.conj()[:, :, None] * r_mat[:, None, :]
        w = np.zeros((uniq.size, r_mat.shape[1], r_mat.shape[1]), dtype=complex)
        np.add.at(w, inv, outer)
        return cls(uniq, w)

    def conjugated(self, u):
        """``W Lambda W^*`` for a unitary ``u``."""
        u = np.asarray(u, dtype=complex)
        return MatrixMeasure(self.locations, u[None] @ self.weights @ u.conj().T[None])


def integrate_matrix(m, kernel):
    """``sum_k f(t_k) W_k`` for a scalar kernel ``f``."""
    vals = _as_values(kernel, m.locations)
    out = np.tensordot(vals, m.weights, axes=(0, 0))
    if np.all(np.abs(vals.imag) == 0):
        out = 0.5 * (out + out.conj().T)
    return out


def quantile_discretize(nu, n):
    """``d_j = F^{-1}((j - 1/2) / n)`` for j = 1..n, with F the CDF of ``nu``."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    cdf = np.cumsum(nu.weights) / nu.mass
    u = (np.arange(1, n + 1) - 0.5) / n
    idx = np.searchsorted(cdf, u - 1e-13, side="left")
    idx = np.minimum(idx, nu.locations.size - 1)
    return nu.locations[idx]


@dataclass(frozen=True)
class ModelSpec:
    """Asymptotic model: ratio c = N/n, noise profile nu, spike amplitudes.

    ``spikes`` is a tuple of ``(omega_sq, multiplicity)`` sorted strictly
    decreasing in ``omega_sq``. ``nu`` must be a probability measure with no
    atom at zero, except for the fully degenerate noiseless case nu = delta_0.
    """

    c: float
    nu: DiscreteMeasure
    spikes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        c = float(self.c)
        if not (np.isfinite(c) and c > 0):
            raise InvalidInputError(f"c must be a positive number, got {self.c!r}")
        object.__setattr__(self, "c", c)
        if abs(self.nu.mass - 1.0) > MASS_TOL:
            raise InvalidInputError(f"nu must have total mass 1, got {self.nu.mass}")
        zero = self.nu.mass_at(0.0)
        if 0.0 < zero and not self.is_noiseless:
            raise InvalidInputError(
                "nu has an atom at 0; rescale c by (1 - nu({0})) and renormalize nu instead"
            )
        spikes = tuple((float(w), int(j)) for w, j in self.spikes)
        for w, j in spikes:
            if not (np.isfinite(w) and w > 0) or j < 1:
                raise InvalidInputError(f"invalid spike ({w}, {j})")
        if any(a[0] <= b[0] for a, b in zip(spikes, spikes[1:])):
            raise InvalidInputError("spike amplitudes must be strictly decreasing")
        object.__setattr__(self, "spikes", spikes)

    @property
    def is_noiseless(self):
        return self.nu.locations.size == 1 and self.nu.locations[0] == 0.0

    @property
    def rank(self):
        return sum(j for _, j in self.spikes)

    @property
    def omega(self):
        """Diagonal r x r matrix of spike amplitudes, repeated by multiplicity."""
        return np.diag(np.repeat([w for w, _ in self.spikes], [j for _, j in self.spikes]).astype(float))

    def spike_lambda(self):
        return MatrixMeasure.product(self.nu, self.omega)

    def without_spikes(self):
        return ModelSpec(self.c, self.nu, ())

    def with_spikes(self, spikes):
        return ModelSpec(self.c, self.nu, tuple(spikes))

    def to_dict(self):
        return {
            "c": self.c,
            "nu": self.nu.to_pairs(),
            "spikes": [[w, j] for w, j in self.spikes],
        }

    @classmethod
    def from_dict(cls, data):
        try:
            c = data["c"]
            nu = DiscreteMeasure.from_pairs(data["nu"])
            spikes = [tuple(s) for s in data.get("spikes", [])]
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InvalidInputError):
                raise
            raise InvalidInputError(f"malformed model description: {exc}") from exc
        for s in spikes:
            if len(s) != 2:
                raise InvalidInputError("spikes must be [omega_sq, multiplicity] pairs")
        return cls(c, nu, tuple(spikes))

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"invalid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidInputError("model JSON must be an object")
        return cls.from_dict(data)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)
