"""Reconstruction and frequency error metrics in dB."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import linear_sum_assignment

from .model import wrap_angle

DB_FLOOR = -300.0
EXHAUSTIVE_MAX_K = 6


def _db(ratio, scale):
    if ratio <= 0:
        return DB_FLOOR
    return float(max(scale * np.log10(ratio), DB_FLOOR))


def nmse_db(Z_hat, Z_true) -> float:
    """``20 log10(||Z_hat - Z|| / ||Z||)``, clamped below at -300 dB."""
    Z_hat = np.asarray(Z_hat)
    Z_true = np.asarray(Z_true)
    if Z_hat.shape != Z_true.shape:
        raise ValueError(f"shape mismatch {Z_hat.shape} vs {Z_true.shape}")
    den = np.linalg.norm(Z_true)
    if den == 0:
        raise ValueError("reference signal has zero norm")
    return _db(np.linalg.norm(Z_hat - Z_true) / den, 20.0)


def debias_scale(Z_hat, Z_true, per_row: bool = False):
    """Least-squares complex scale(s) ``c`` minimizing ``||Z - c * Z_hat||``.

    One global scalar by default; with ``per_row`` one scalar per row.
    Rows (or the whole matrix) with zero energy get ``c = 0``.
    """
    Z_hat = np.asarray(Z_hat, dtype=complex)
    Z_true = np.asarray(Z_true, dtype=complex)
    if per_row:
        num = np.sum(Z_hat.conj() * Z_true, axis=1)
        den = np.sum(np.abs(Z_hat) ** 2, axis=1)
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    den = np.vdot(Z_hat, Z_hat).real
    return np.vdot(Z_hat, Z_true) / den if den > 0 else 0.0


def dnmse_db(Z_hat, Z_true, scale: float = 20.0, per_row: bool = False) -> float:
    """Debiased NMSE: the NMSE of ``c * Z_hat`` with the best complex scale ``c``.

    ``scale`` multiplies ``log10`` of the norm ratio; 20 matches :func:`nmse_db`
    (so debiasing can only lower the value), 10 is the alternative printed
    convention. ``per_row`` fits one scale per row instead of one overall.
    """
    Z_hat = np.asarray(Z_hat, dtype=complex)
    Z_true = np.asarray(Z_true, dtype=complex)
    if Z_hat.shape != Z_true.shape:
        raise ValueError(f"shape mismatch {Z_hat.shape} vs {Z_true.shape}")
    den = np.linalg.norm(Z_true)
    if den == 0:
        raise ValueError("reference signal has zero norm")
    c = debias_scale(Z_hat, Z_true, per_row)
    fit = (c[:, None] * Z_hat) if per_row else c * Z_hat
    return _db(np.linalg.norm(Z_true - fit) / den, scale)


def match_frequencies(theta_hat, theta_true):
    """Pairing of estimates to truth minimizing total squared wrap-around error.

    Returns ``(i_hat, i_true)`` index arrays of length ``min(len(theta_hat), len(theta_true))``.
    Small problems are solved by enumeration, larger ones by linear assignment.
    """
    a = np.asarray(theta_hat, dtype=float)
    b = np.asarray(theta_true, dtype=float)
    cost = wrap_angle(a[:, None] - b[None, :]) ** 2
    if a.size == b.size and a.size <= EXHAUSTIVE_MAX_K:
        best, best_p = np.inf, None
        cols = np.arange(b.size)
        for p in itertools.permutations(range(a.size)):
            c = cost[list(p), cols].sum()
            if c < best:
                best, best_p = c, p
        return np.asarray(best_p, dtype=int), cols
    r, c = linear_sum_assignment(cost)
    return r, c


def freq_mse_db(theta_hat, theta_true) -> float:
    """``20 log10`` of the 2-norm of matched wrap-around frequency errors."""
    a = np.asarray(theta_hat, dtype=float)
    b = np.asarray(theta_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"need equally many estimates and true frequencies, got {a.size} and {b.size}")
    if a.size == 0:
        return DB_FLOOR
    i, j = match_frequencies(a, b)
    err = wrap_angle(a[i] - b[j])
    return _db(float(np.linalg.norm(err)), 20.0)


def order_probability(K_hats, K: int) -> float:
    K_hats = np.asarray(K_hats)
    return float(np.mean(K_hats == K)) if K_hats.size else float("nan")
