"""Circular densities of the form ``exp(Re sum_n c_n e^{j n theta})`` and von Mises fits."""
from __future__ import annotations

import numpy as np
import scipy.fft as sfft
from scipy.special import ive

FINE_POINTS = 201
WINDOW_SIGMAS = 12.0
# modes more than this far below the maximum (log scale) are ignored
MODE_DEPTH = 60.0
MAX_MODES = 8


def grid_size_for(N: int) -> int:
    """Power of two at least ``32 * N``."""
    return int(2 ** int(np.ceil(np.log2(32 * N))))


def bessel_ratio(n, kappa):
    """``I_n(kappa) / I_0(kappa)`` evaluated with exponentially scaled Bessels."""
    kappa = np.asarray(kappa, dtype=float)
    return ive(n, kappa) / ive(0, kappa)


def vonmises_moments(mu: float, kappa: float, n_max: int) -> np.ndarray:
    """``E[e^{j n theta}]`` for n = 0..n_max-1 under VM(mu, kappa)."""
    n = np.arange(n_max)
    return bessel_ratio(n, kappa) * np.exp(1j * n * mu)


def _a1(kappa):
    return ive(1, kappa) / ive(0, kappa)


def invert_a1(R: float, tol: float = 1e-10) -> float:
    """Concentration ``kappa`` with ``I_1(kappa)/I_0(kappa) = R``.

    Bracketed Newton iteration on the monotone map; ``R <= 0`` gives 0.
    """
    R = float(R)
    if R <= 1e-14:
        return 0.0
    if R >= 1.0:
        return np.inf
    if R > 1 - 1e-5:
        # A(k) = 1 - 1/(2k) - 1/(8k^2) - ..., solved for 1/k
        e = 1.0 - R
        return float(1.0 / (4.0 * e / (1.0 + np.sqrt(1.0 + 2.0 * e))))
    # Best & Fisher style initial guess, then a bracket around it
    if R < 0.53:
        k = 2 * R + R ** 3 + 5 * R ** 5 / 6
    elif R < 0.85:
        k = -0.4 + 1.39 * R + 0.43 / (1 - R)
    else:
        k = 1 / (R ** 3 - 4 * R ** 2 + 3 * R)
    if _a1(k) < R:
        lo, hi = k, 2.0 * k
        while _a1(hi) < R:
            lo, hi = hi, 2.0 * hi
    else:
        lo, hi = 0.5 * k, k
        while _a1(lo) > R:
            lo, hi = 0.5 * lo, lo
    for _ in range(100):
        a = _a1(k)
        f = a - R
        if f > 0:
            hi = k
        else:
            lo = k
        da = 1.0 - a / k - a * a
        step = f / da if da > 0 else np.inf
        k_new = k - step
        if not lo < k_new < hi:
            k_new = 0.5 * (lo + hi)
        if abs(k_new - k) <= tol * max(1.0, k):
            return float(k_new)
        k = k_new
    return float(k)


def _trig_point(idx, idx2, coef, theta):
    t = np.exp(1j * theta * idx) * coef
    tr, ti = t.real, t.imag
    return tr.sum(), -(ti @ idx), -(tr @ idx2)


def _refine_mode(fidx, idx2, coef, theta, h):
    """Newton ascent from a grid maximum; returns (theta, f, -f'')."""
    for _ in range(20):
        _, d1, d2 = _trig_point(fidx, idx2, coef, theta)
        if d2 >= 0:
            break
        step = float(np.clip(-d1 / d2, -h, h))
        theta += step
        if abs(step) < 1e-15:
            break
    f, _, d2 = _trig_point(fidx, idx2, coef, theta)
    return theta, float(f), -float(d2)


def _grid_moments(p, n_max):
    """``sum_g p_g e^{j n theta_g}`` on the uniform grid for real ``p``."""
    return sfft.rfft(p)[:n_max].conj()


def _window_moments(idx, coef, lo, hi, npts, n_max, fmax):
    """Trapezoid sums of ``e^{j n t} exp(f(t) - fmax)`` over ``[lo, hi]``."""
    dt = (hi - lo) / (npts - 1)
    wts = np.full(npts, dt)
    wts[[0, -1]] *= 0.5
    n_pow = max(n_max, int(idx.max()) + 1)
    zk = np.exp(1j * (lo + dt * np.arange(npts)))
    # powers of e^{j t} by running products
    pw = np.empty((n_pow, npts), dtype=complex)
    pw[0] = 1.0
    np.cumprod(np.broadcast_to(zk, (n_pow - 1, npts)), axis=0, out=pw[1:])
    ff = (coef @ pw[idx]).real
    return pw[:n_max] @ (np.exp(ff - fmax) * wts)


def trig_density_moments(idx, coef, n_max: int, grid_size: int):
    """Moments ``E[e^{j n theta}]``, n = 0..n_max-1, of ``q ∝ exp(Re sum c_n e^{j n theta})``.

    ``idx`` are nonnegative integer lags below ``grid_size`` with complex
    coefficients ``coef``. The density is integrated with the periodic
    trapezoid rule on ``grid_size`` points. Modes too narrow for that grid
    are located by Newton's method and integrated on fine windows of
    ``WINDOW_SIGMAS`` standard deviations, which replace the coarse points
    they cover.
    """
    idx = np.asarray(idx, dtype=np.int64)
    coef = np.asarray(coef, dtype=complex)
    G = int(grid_size)
    out = np.zeros(n_max, dtype=complex)
    out[0] = 1.0
    if not np.any(coef):
        return out
    slot = idx % G
    buf = np.bincount(slot, coef.real, G) + 1j * np.bincount(slot, coef.imag, G)
    if slot.max() < G // 2:
        # Re sum c_n e^{jn theta} as a real inverse transform
        spec = buf[: G // 2 + 1] * (G / 2)
        spec[0] *= 2
        f = sfft.irfft(spec, n=G)
    else:
        f = (sfft.ifft(buf) * G).real
    h = 2 * np.pi / G
    fidx = idx.astype(float)
    idx2 = fidx * fidx

    # grid-local maxima that could matter after normalization
    top = f.max()
    peaks = np.flatnonzero((f >= np.roll(f, 1)) & (f >= np.roll(f, -1)) & (f > top - MODE_DEPTH))
    # only modes that look narrow on the grid need refinement
    d2 = (np.roll(f, 1) + np.roll(f, -1) - 2 * f)[peaks]
    peaks = peaks[-d2 > 1.0 / 64]
    peaks = peaks[np.argsort(f[peaks])[::-1][:MAX_MODES]]
    modes = [_refine_mode(fidx, idx2, coef, g * h, h) for g in peaks]
    fmax = max([top] + [m[1] for m in modes])
    sharp = [(t, 1.0 / np.sqrt(c)) for t, _, c in modes if c > 0 and 1.0 / np.sqrt(c) < 2 * h]
    if not sharp:
        m = _grid_moments(np.exp(f - fmax), n_max)
        return _normalized(m)

    # windows [t - 12 sig, t + 12 sig], overlapping ones merged
    wins = sorted([t - WINDOW_SIGMAS * sg, t + WINDOW_SIGMAS * sg, sg] for t, sg in sharp)
    merged = [wins[0]]
    for lo, hi, sg in wins[1:]:
        last = merged[-1]
        if lo <= last[1]:
            last[1], last[2] = max(last[1], hi), min(last[2], sg)
        else:
            merged.append([lo, hi, sg])
    grid = np.arange(G) * h
    keep = np.ones(G, dtype=bool)
    m = np.zeros(n_max, dtype=complex)
    step = 2 * WINDOW_SIGMAS / (FINE_POINTS - 1)
    for lo, hi, sg in merged:
        npts = max(FINE_POINTS, int(np.ceil((hi - lo) / (step * sg))) + 1)
        m += _window_moments(idx, coef, lo, hi, npts, n_max, fmax)
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        keep &= np.abs((grid - mid + np.pi) % (2 * np.pi) - np.pi) >= half
    p = np.where(keep, np.exp(f - fmax), 0.0)
    if p.sum() * h > 1e-18 * m[0].real:
        m += _grid_moments(p, n_max) * h
    return _normalized(m)


def _normalized(m):
    out = m / m[0].real
    out[0] = 1.0
    return out


def fit_vonmises(moments):
    """Mean direction and concentration matching the first circular moment."""
    m1 = moments[1]
    R = min(abs(m1), 1.0)
    return float(np.angle(m1)), invert_a1(R)
