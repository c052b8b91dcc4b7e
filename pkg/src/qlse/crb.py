"""Fisher information and Cramér-Rao bounds for quantized and analog samples.

Parameters are stacked as ``[theta (K), vec(g) (K*L), vec(phi) (K*L)]`` with
column-major ``vec``, so the magnitude of weight ``(k, l)`` sits at
``K + k + K*l`` and its phase at ``K + K*L + k + K*l``. ``sigma`` is the
standard deviation of the complex noise (variance ``sigma**2`` split evenly
between real and imaginary parts).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import ConfigError
from .quantizer import QuantizerSpec, gaussian_cell_terms

COND_WARN = 1e12


class SingularFIMError(np.linalg.LinAlgError):
    def __init__(self, cond: float):
        super().__init__(f"Fisher information is singular (condition estimate {cond:.3g})")
        self.cond = cond


class IllConditionedFIMWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FisherParams:
    theta: np.ndarray  # (K,)
    g: np.ndarray  # (K, L) magnitudes
    phi: np.ndarray  # (K, L) phases

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.theta, dtype=float))
        g = np.asarray(self.g, dtype=float).reshape(th.size, -1)
        phi = np.asarray(self.phi, dtype=float).reshape(g.shape)
        if np.any(g < 0):
            raise ConfigError("magnitudes must be nonnegative")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "phi", phi)

    @classmethod
    def from_weights(cls, theta, W) -> "FisherParams":
        W = np.asarray(W, dtype=complex)
        return cls(theta, np.abs(W), np.angle(W))

    @property
    def K(self) -> int:
        return int(self.theta.size)

    @property
    def L(self) -> int:
        return int(self.g.shape[1])

    @property
    def dim(self) -> int:
        return (2 * self.L + 1) * self.K

    def weights(self) -> np.ndarray:
        return self.g * np.exp(1j * self.phi)


def z_entry(params: FisherParams, m_index: int, l: int) -> complex:
    """Noiseless sample ``sum_k g_kl exp(j (m theta_k + phi_kl))``."""
    ph = m_index * params.theta + params.phi[:, l]
    return complex(np.sum(params.g[:, l] * np.exp(1j * ph)))


def _phase(params, rows):
    # (M, K, L) array of m*theta_k + phi_kl
    m = np.asarray(rows, dtype=float)
    return m[:, None, None] * params.theta[None, :, None] + params.phi[None, :, :]


def _derivative_stack(params: FisherParams, rows):
    """Gradients of Re and Im of every sample, each (M, L, P)."""
    K, L = params.K, params.L
    m = np.asarray(rows, dtype=float)
    ph = _phase(params, rows)
    c, s = np.cos(ph), np.sin(ph)
    g = params.g[None]
    M = m.size
    dre = np.zeros((M, L, params.dim))
    dim_ = np.zeros((M, L, params.dim))
    # theta block: (M, K, L) -> (M, L, K)
    dre[:, :, :K] = np.transpose(-m[:, None, None] * s * g, (0, 2, 1))
    dim_[:, :, :K] = np.transpose(m[:, None, None] * c * g, (0, 2, 1))
    for l in range(L):
        gb = K + K * l
        pb = K + K * L + K * l
        dre[:, l, gb:gb + K] = c[:, :, l]
        dim_[:, l, gb:gb + K] = s[:, :, l]
        dre[:, l, pb:pb + K] = -(s * g)[:, :, l]
        dim_[:, l, pb:pb + K] = (c * g)[:, :, l]
    return dre, dim_


def partials(params: FisherParams, m_index: int, l: int):
    """Gradients of ``Re Z_ml`` and ``Im Z_ml`` with respect to the stacked parameters."""
    dre, dim_ = _derivative_stack(params, [m_index])
    return dre[0, l].copy(), dim_[0, l].copy()


def _cell_information(x, half_sd, spec: QuantizerSpec):
    """``sum_d (phi(u_{d+1}) - phi(u_d))^2 / (Phi(u_{d+1}) - Phi(u_d))`` for means ``x``."""
    x = np.asarray(x, dtype=float)
    e = spec.edges
    lo = (e[:-1] - x[..., None]) / half_sd
    hi = (e[1:] - x[..., None]) / half_sd
    _, _, fisher = gaussian_cell_terms(lo, hi)
    return fisher.sum(axis=-1)


def lambda_chi(z, sigma: float, spec: QuantizerSpec):
    """Information coefficients of the real and imaginary parts of a quantized sample.

    Both lie in ``(0, 2/sigma**2]``; the bound is attained without quantization.
    Works elementwise on arrays of ``z``.
    """
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    z = np.asarray(z, dtype=complex)
    base = 2.0 / sigma ** 2
    if spec.is_analog:
        full = np.full(z.shape, base)
        return full, full.copy()
    half_sd = sigma / np.sqrt(2.0)
    lam = base * _cell_information(z.real, half_sd, spec)
    chi = base * _cell_information(z.imag, half_sd, spec)
    if lam.ndim == 0:
        return float(lam), float(chi)
    return lam, chi


def _weighted_fim(dre, dim_, lam, chi):
    P = dre.shape[-1]
    a = dre.reshape(-1, P)
    b = dim_.reshape(-1, P)
    I = (a * lam.reshape(-1, 1)).T @ a + (b * chi.reshape(-1, 1)).T @ b
    return 0.5 * (I + I.T)


def fim_quantized(params: FisherParams, rows, sigma: float, spec: QuantizerSpec) -> np.ndarray:
    """FIM of the stacked parameters given quantized samples on ``rows``."""
    rows = np.asarray(rows)
    Z = np.exp(1j * _phase(params, rows))
    Z = np.einsum("mkl,kl->ml", Z, params.g)
    lam, chi = lambda_chi(Z, sigma, spec)
    dre, dim_ = _derivative_stack(params, rows)
    return _weighted_fim(dre, dim_, np.asarray(lam), np.asarray(chi))


def fim_unquantized(params: FisherParams, rows, sigma: float) -> np.ndarray:
    """FIM with analog samples: every sample carries ``2/sigma**2`` per real part."""
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    rows = np.asarray(rows)
    dre, dim_ = _derivative_stack(params, rows)
    w = np.full(dre.shape[:2], 2.0 / sigma ** 2)
    return _weighted_fim(dre, dim_, w, w)


def crb_frequencies(fim, K: int) -> np.ndarray:
    """Frequency block ``[I^{-1}]_{1:K,1:K}`` of the inverse FIM.

    Raises :class:`SingularFIMError` if the FIM is numerically singular.
    Above a condition number of ``COND_WARN`` the inverse is taken through a
    symmetric eigendecomposition pseudo-inverse and an
    :class:`IllConditionedFIMWarning` is issued.
    """
    F = np.asarray(fim, dtype=float)
    if F.ndim != 2 or F.shape[0] != F.shape[1] or not 1 <= K <= F.shape[0]:
        raise ConfigError("fim must be square with at least K rows")
    F = 0.5 * (F + F.T)
    ev, U = np.linalg.eigh(F)
    top = ev.max()
    if top <= 0:
        raise SingularFIMError(np.inf)
    tiny = top * F.shape[0] * np.finfo(float).eps
    cond = top / ev.min() if ev.min() > 0 else np.inf
    if ev.min() <= tiny:
        raise SingularFIMError(cond)
    if cond > COND_WARN:
        warnings.warn(f"ill-conditioned FIM (condition {cond:.3g}); using pseudo-inverse",
                      IllConditionedFIMWarning, stacklevel=2)
        inv = (U[:K] / ev) @ U[:K].T
        return 0.5 * (inv + inv.T)
    inv = np.linalg.inv(F)[:K, :K]
    return 0.5 * (inv + inv.T)


def crb_for_truth(theta, W, rows, noise_var: float, spec: QuantizerSpec | None = None):
    """Frequency CRB block at a ground truth; ``spec=None`` or analog gives the analog bound."""
    params = FisherParams.from_weights(theta, W)
    sigma = float(np.sqrt(noise_var))
    if spec is None or spec.is_analog:
        F = fim_unquantized(params, rows, sigma)
    else:
        F = fim_quantized(params, rows, sigma, spec)
    return crb_frequencies(F, params.K)
