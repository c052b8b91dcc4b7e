"""Line spectral signal model: steering vectors, synthetic truth, DOA mapping."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_FREQ_DRAWS = 10_000


class ConfigError(ValueError):
    """Raised for inconsistent or infeasible configurations."""


@dataclass(frozen=True)
class RowSet:
    """Ordered subset of observed sample indices out of ``0..n_full-1``."""

    indices: np.ndarray
    n_full: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ConfigError("row set must be a nonempty 1-D index list")
        if idx.size > self.n_full:
            raise ConfigError("more rows than samples")
        if np.any(np.diff(idx) <= 0):
            raise ConfigError("row indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.n_full:
            raise ConfigError(f"row indices must lie in [0, {self.n_full - 1}]")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def M(self) -> int:
        return int(self.indices.size)

    @classmethod
    def prefix(cls, M: int, N: int) -> "RowSet":
        return cls(np.arange(M), N)

    @classmethod
    def full(cls, N: int) -> "RowSet":
        return cls(np.arange(N), N)

    @classmethod
    def random(cls, M: int, N: int, rng: np.random.Generator) -> "RowSet":
        if M > N:
            raise ConfigError("M must not exceed N")
        return cls(np.sort(rng.choice(N, size=M, replace=False)), N)


@dataclass(frozen=True)
class LineSpectralTruth:
    frequencies: np.ndarray  # (K,) radians in [-pi, pi)
    weights: np.ndarray  # (K, L) complex
    rows: RowSet
    noise_var: float

    @property
    def K(self) -> int:
        return int(self.frequencies.size)

    @property
    def L(self) -> int:
        return int(self.weights.shape[1])

    def z_rows(self) -> np.ndarray:
        """Noiseless samples on the observed rows, shape (M, L)."""
        return steering_matrix(self.frequencies, self.rows.indices) @ self.weights

    def z_full(self) -> np.ndarray:
        """Noiseless samples on all N indices, shape (N, L)."""
        n = np.arange(self.rows.n_full)
        return steering_matrix(self.frequencies, n) @ self.weights


@dataclass(frozen=True)
class TruthConfig:
    N: int
    M: int
    K: int
    L: int
    snr_db: float
    row_policy: str = "random"
    seed: int | None = 0
    fixed_frequencies: tuple | None = field(default=None)


def _as_indices(rows) -> np.ndarray:
    if isinstance(rows, RowSet):
        return rows.indices
    return np.asarray(rows, dtype=np.int64)


def steering(theta: float, rows) -> np.ndarray:
    """Steering vector ``exp(j * m_i * theta)`` over the row indices."""
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    m = _as_indices(rows)
    return np.exp(1j * m * float(theta))


def steering_matrix(thetas, rows) -> np.ndarray:
    """Stack of steering vectors, shape (len(rows), len(thetas))."""
    m = _as_indices(rows)
    return np.exp(1j * np.outer(m, np.asarray(thetas, dtype=float)))


def wrap_angle(x):
    """Map angles into [-pi, pi)."""
    return (np.asarray(x) + np.pi) % (2 * np.pi) - np.pi


def min_wrap_distance(freqs) -> float:
    f = np.sort(np.asarray(freqs, dtype=float))
    if f.size < 2:
        return np.inf
    gaps = np.diff(f)
    return float(min(gaps.min(), 2 * np.pi - (f[-1] - f[0])))


def draw_frequencies(K: int, N: int, rng: np.random.Generator,
                     max_draws: int = MAX_FREQ_DRAWS) -> np.ndarray:
    """Uniform frequencies with pairwise wrap-around separation above 2*pi/N."""
    sep = 2 * np.pi / N
    for _ in range(max_draws):
        f = rng.uniform(-np.pi, np.pi, size=K)
        if min_wrap_distance(f) > sep:
            return f
    raise ConfigError(
        f"could not draw K={K} frequencies separated by 2pi/N (N={N}) "
        f"in {max_draws} attempts")


def draw_weights(K: int, L: int, rng: np.random.Generator) -> np.ndarray:
    mag = rng.normal(1.0, 0.2, size=(K, L))
    phase = rng.uniform(-np.pi, np.pi, size=(K, L))
    return mag * np.exp(1j * phase)


def generate_truth(cfg: TruthConfig, rng: np.random.Generator | None = None):
    """Draw a ground truth and its noisy analog measurements.

    Returns ``(truth, z_rows, y_analog)`` where ``z_rows`` is the noiseless
    (M, L) matrix on the observed rows and ``y_analog = z_rows + noise``.
    The noise is rescaled so that ``20*log10(||Z||_F / ||noise||_F)`` equals
    ``cfg.snr_db`` for the realized draw; ``truth.noise_var`` is the
    per-entry complex variance implied by that scaling.
    """
    if cfg.K < 1:
        raise ConfigError("K must be >= 1")
    if cfg.M > cfg.N or cfg.M < 1:
        raise ConfigError("need 1 <= M <= N")
    if cfg.L < 1:
        raise ConfigError("L must be >= 1")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    if cfg.fixed_frequencies is not None:
        freqs = np.asarray(cfg.fixed_frequencies, dtype=float)
        if freqs.size != cfg.K:
            raise ConfigError("fixed_frequencies must have K entries")
    else:
        freqs = draw_frequencies(cfg.K, cfg.N, rng)

    if cfg.row_policy == "prefix" or cfg.M == cfg.N:
        rows = RowSet.prefix(cfg.M, cfg.N)
    elif cfg.row_policy == "random":
        rows = RowSet.random(cfg.M, cfg.N, rng)
    else:
        raise ConfigError(f"unknown row_policy {cfg.row_policy!r}")

    W = draw_weights(cfg.K, cfg.L, rng)
    Z = steering_matrix(freqs, rows.indices) @ W
    E = (rng.standard_normal(Z.shape) + 1j * rng.standard_normal(Z.shape)) / np.sqrt(2)
    scale = np.linalg.norm(Z) / np.linalg.norm(E) * 10 ** (-cfg.snr_db / 20)
    noise = scale * E
    truth = LineSpectralTruth(freqs, W, rows, float(scale ** 2))
    return truth, Z, Z + noise


def doa_to_freq(angle_deg):
    """Spatial frequency of a half-wavelength ULA: ``pi * sin(angle)``."""
    a = np.asarray(angle_deg, dtype=float)
    if np.any(np.abs(a) >= 90):
        raise ValueError("DOA must satisfy |angle| < 90 degrees")
    return np.pi * np.sin(np.deg2rad(a))


def freq_to_doa(theta):
    t = np.asarray(theta, dtype=float)
    if np.any(np.abs(t) > np.pi):
        raise ValueError("spatial frequency must satisfy |theta| <= pi")
    return np.rad2deg(np.arcsin(t / np.pi))
