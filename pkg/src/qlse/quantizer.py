"""Scalar quantizers and the componentwise MMSE denoiser for quantized data.

The denoiser computes moments of a Gaussian prior multiplied by the
probability that the noisy value falls in the observed cell, which is a
Gaussian truncated to that cell after convolving the prior with the noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, ndtr

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
# beyond this the one-sided Mills-ratio series replaces direct evaluation
_TAIL_SWITCH = 100.0


@dataclass(frozen=True)
class QuantizerSpec:
    """Cell boundaries of a scalar quantizer.

    ``thresholds`` are the interior knots; cell ``d`` is
    ``[edges[d], edges[d+1])`` with ``edges = [-inf, *thresholds, inf]``.
    ``mode="analog"`` means no quantization (identity observation).
    """

    thresholds: tuple = ()
    bits: int = 0
    mode: str = "quantized"

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        object.__setattr__(self, "thresholds", t)
        if self.mode == "analog":
            return
        if self.mode != "quantized":
            raise ValueError(f"unknown quantizer mode {self.mode!r}")
        if self.bits < 1:
            raise ValueError("bit depth must be >= 1")
        if len(t) != 2 ** self.bits - 1:
            raise ValueError(f"{self.bits}-bit quantizer needs {2 ** self.bits - 1} thresholds")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("thresholds must be strictly increasing")

    @classmethod
    def analog(cls) -> "QuantizerSpec":
        return cls(mode="analog")

    @property
    def is_analog(self) -> bool:
        return self.mode == "analog"

    @property
    def n_cells(self) -> int:
        return len(self.thresholds) + 1

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate(([-np.inf], self.thresholds, [np.inf]))

    def representatives(self) -> np.ndarray:
        """One point inside each cell (midpoints; outer cells offset by one step)."""
        t = np.asarray(self.thresholds)
        if t.size == 1:
            return np.array([t[0] - 1.0, t[0] + 1.0])
        step = np.min(np.diff(t))
        mids = 0.5 * (t[:-1] + t[1:])
        return np.concatenate(([t[0] - step / 2], mids, [t[-1] + step / 2]))


@dataclass(frozen=True)
class QuantizedData:
    re_idx: np.ndarray
    im_idx: np.ndarray
    spec: QuantizerSpec

    def __post_init__(self):
        if self.re_idx.shape != self.im_idx.shape:
            raise ValueError("real and imaginary index arrays differ in shape")
        D = self.spec.n_cells
        for a in (self.re_idx, self.im_idx):
            if a.size and (a.min() < 0 or a.max() >= D):
                raise ValueError(f"cell index out of range for a {self.spec.bits}-bit quantizer")

    @property
    def shape(self):
        return self.re_idx.shape


def build_uniform(bits: int, half_range: float = 1.0) -> QuantizerSpec:
    """Uniform mid-rise quantizer with ``2**bits`` equal cells on [-half_range, half_range].

    The two outer cells extend to infinity; one bit gives a sign quantizer.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    if bits == 1:
        return QuantizerSpec((0.0,), 1)
    if half_range <= 0:
        raise ValueError("half_range must be positive")
    D = 2 ** bits
    knots = half_range * (2 * np.arange(1, D) - D) / D
    return QuantizerSpec(tuple(knots), bits)


def quantize(a, spec: QuantizerSpec):
    """Cell index of ``a``; values on a threshold go to the upper cell."""
    idx = np.searchsorted(np.asarray(spec.thresholds), a, side="right")
    return int(idx) if np.ndim(idx) == 0 else idx


def quantize_matrix(X, spec: QuantizerSpec) -> QuantizedData:
    X = np.asarray(X)
    return QuantizedData(quantize(X.real, spec), quantize(X.imag, spec), spec)


def cell_bounds(idx, spec: QuantizerSpec):
    e = spec.edges
    idx = np.asarray(idx)
    return e[idx], e[idx + 1]


def _straddle_terms(a, b):
    phi_a = np.where(np.isinf(a), 0.0, np.exp(-0.5 * np.where(np.isinf(a), 0.0, a) ** 2) * _INV_SQRT_2PI)
    phi_b = np.where(np.isinf(b), 0.0, np.exp(-0.5 * np.where(np.isinf(b), 0.0, b) ** 2) * _INV_SQRT_2PI)
    aphi_a = np.where(np.isinf(a), 0.0, np.where(np.isinf(a), 0.0, a) * phi_a)
    bphi_b = np.where(np.isinf(b), 0.0, np.where(np.isinf(b), 0.0, b) * phi_b)
    Zc = ndtr(b) - ndtr(a)
    r = (phi_a - phi_b) / Zc
    q = (aphi_a - bphi_b) / Zc
    fisher = (phi_a - phi_b) * r
    return r, 1.0 + q - r * r, fisher


def _upper_terms(a, b):
    # 0 <= a < b <= inf; everything scaled by exp(-a^2/2) to avoid underflow
    ea = erfcx(a / _SQRT2)
    b_fin = np.where(np.isinf(b), a + 1.0, b)
    d = np.where(np.isinf(b), 0.0, np.exp(-0.5 * (b_fin - a) * (b_fin + a)))
    eb = np.where(np.isinf(b), 0.0, erfcx(b_fin / _SQRT2))
    Zs = 0.5 * (ea - eb * d)
    pa = _INV_SQRT_2PI
    pb = d * _INV_SQRT_2PI
    r = (pa - pb) / Zs
    q = (a * pa - np.where(np.isinf(b), 0.0, b_fin * pb)) / Zs
    tvar = 1.0 + q - r * r
    # one-sided far tail: Mills-ratio series 1/a^2 - 6/a^4 + 50/a^6 - ...
    tail = (a > _TAIL_SWITCH) & (d == 0.0)
    if np.any(tail):
        ia2 = 1.0 / np.where(tail, a, 1.0) ** 2
        tvar = np.where(tail, ia2 - 6.0 * ia2 ** 2 + 50.0 * ia2 ** 3, tvar)
    fisher = np.exp(-0.5 * a * a) * (pa - pb) ** 2 / Zs
    return r, tvar, fisher


def gaussian_cell_terms(a, b):
    """Moment ratios of a standard normal restricted to ``[a, b)``.

    Returns ``(r, tvar, fisher)`` with ``Zc = Phi(b) - Phi(a)``,
    ``r = (phi(a) - phi(b)) / Zc`` (the truncated mean),
    ``tvar`` the truncated variance and
    ``fisher = (phi(a) - phi(b))**2 / Zc``. Infinite endpoints are exact limits.
    """
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    a = a.copy()
    b = b.copy()
    flip = (a + b) < 0
    a[flip], b[flip] = -b[flip], -a[flip]
    # both endpoints infinite -> whole line
    whole = np.isinf(a) & np.isinf(b)
    r = np.zeros(a.shape)
    tvar = np.ones(a.shape)
    fisher = np.zeros(a.shape)
    up = (a >= 0) & ~whole
    mid = ~up & ~whole
    if np.any(up):
        r[up], tvar[up], fisher[up] = _upper_terms(a[up], b[up])
    if np.any(mid):
        r[mid], tvar[mid], fisher[mid] = _straddle_terms(a[mid], b[mid])
    r[flip] = -r[flip]
    return r, np.clip(tvar, 0.0, 1.0), fisher


def mmse_denoise_real(d, m0, v0, noise_var_half, spec: QuantizerSpec):
    """Posterior mean/variance of ``x ~ N(m0, v0)`` given ``x + e`` fell in cell ``d``.

    ``e ~ N(0, noise_var_half)``. Broadcasts over array arguments.
    """
    m0 = np.asarray(m0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    n = np.asarray(noise_var_half, dtype=float)
    lo, hi = cell_bounds(d, spec)
    s2 = v0 + n
    s = np.sqrt(s2)
    r, tvar, _ = gaussian_cell_terms((lo - m0) / s, (hi - m0) / s)
    mean = m0 + v0 / s * r
    # Var[x | cell] = Var[x | y] + (v0/s2)^2 Var[y | cell]
    var = v0 * (n + v0 * tvar) / s2
    return mean, var


def gaussian_combine(y, noise_var, m0, v0):
    """Posterior of ``x ~ N(m0, v0)`` observed as ``y = x + e``, ``e ~ N(0, noise_var)``."""
    prec = 1.0 / v0 + 1.0 / noise_var
    var = 1.0 / prec
    return var * (m0 / v0 + y / noise_var), var


def mmse_denoise_complex(Y, mean, var, sigma2):
    """Componentwise posterior moments of circular-complex ``z`` with prior ``CN(mean, var)``.

    ``Y`` is either a :class:`QuantizedData` or a complex array of analog
    observations ``y = z + n`` with ``n ~ CN(0, sigma2)``. Real and imaginary
    parts are treated independently with half the variance each; the
    returned variance is the complex (summed) variance.
    """
    mean = np.asarray(mean, dtype=complex)
    var = np.asarray(var, dtype=float)
    if isinstance(Y, QuantizedData) and not Y.spec.is_analog:
        half = var / 2
        mr, vr = mmse_denoise_real(Y.re_idx, mean.real, half, sigma2 / 2, Y.spec)
        mi, vi = mmse_denoise_real(Y.im_idx, mean.imag, half, sigma2 / 2, Y.spec)
        return mr + 1j * mi, vr + vi
    y = np.asarray(Y, dtype=complex)
    return gaussian_combine(y, sigma2, mean, var)
