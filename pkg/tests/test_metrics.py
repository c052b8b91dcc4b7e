import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from qlse.metrics import dnmse_db, freq_mse_db, match_frequencies, nmse_db, order_probability


def test_nmse_examples(rng):
    Z = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    assert nmse_db(Z, Z) == -300.0
    assert nmse_db(np.zeros_like(Z), Z) == 0.0
    assert nmse_db(1.1 * Z, Z) == pytest.approx(-20.0, abs=1e-10)
    with pytest.raises(ValueError):
        nmse_db(Z, np.zeros_like(Z))
    with pytest.raises(ValueError):
        nmse_db(Z[:2], Z)


def test_dnmse_examples(rng):
    Z = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    assert dnmse_db((0.3 - 2j) * Z, Z) == -300.0
    X = rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))
    Xp = X - (np.vdot(Z, X) / np.vdot(Z, Z)) * Z  # orthogonal to Z
    assert dnmse_db(Xp, Z) == pytest.approx(0.0, abs=1e-12)
    assert dnmse_db(np.zeros_like(Z), Z) == 0.0
    assert dnmse_db(0.5 * Z + 0.1 * X, Z, scale=10.0) == pytest.approx(dnmse_db(0.5 * Z + 0.1 * X, Z) / 2)


def test_dnmse_matches_numerical_minimum(rng):
    Z = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
    Zh = 0.7j * Z + 0.3 * (rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2)))
    f = lambda c: np.linalg.norm(Z - (c[0] + 1j * c[1]) * Zh) ** 2
    best = minimize(f, [0.0, 0.0], method="BFGS", options={"gtol": 1e-12})
    ref = 20 * np.log10(np.sqrt(best.fun) / np.linalg.norm(Z))
    assert abs(dnmse_db(Zh, Z) - ref) < 1e-8


def test_dnmse_per_row(rng):
    Z = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    D = np.diag(rng.standard_normal(5) + 1j * rng.standard_normal(5))
    assert dnmse_db(D @ Z, Z, per_row=True) == -300.0
    assert dnmse_db(D @ Z, Z) > -300.0


@given(st.integers(0, 10_000))
def test_debiasing_never_hurts_and_column_permutation(seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4))
    Zh = Z + rng.uniform(0.01, 2) * (rng.standard_normal((6, 4)) + 1j * rng.standard_normal((6, 4)))
    assert dnmse_db(Zh, Z) <= nmse_db(Zh, Z) + 1e-9
    p = rng.permutation(4)
    assert nmse_db(Zh[:, p], Z[:, p]) == pytest.approx(nmse_db(Zh, Z), abs=1e-12)
    assert dnmse_db(Zh[:, p], Z[:, p]) == pytest.approx(dnmse_db(Zh, Z), abs=1e-12)


def test_freq_mse_examples():
    th = np.array([0.1, 2.0, -1.0])
    assert freq_mse_db(th, th) == -300.0
    assert freq_mse_db([0.5 + 1e-3], [0.5]) == pytest.approx(-60.0, abs=1e-8)
    # wrap-around difference across +-pi
    assert freq_mse_db([np.pi - 1e-3], [-np.pi + 1e-3]) == pytest.approx(20 * np.log10(2e-3), abs=1e-8)
    with pytest.raises(ValueError):
        freq_mse_db([0.1], [0.1, 0.2])


@given(st.integers(1, 5), st.integers(0, 10_000))
def test_freq_mse_assignment_matches_brute_force(K, seed):
    rng = np.random.default_rng(seed)
    th = rng.uniform(-np.pi, np.pi, K)
    est = th + 0.05 * rng.standard_normal(K)
    perm = rng.permutation(K)
    brute = min(np.linalg.norm(np.angle(np.exp(1j * (est[list(p)] - th)))) for p in itertools.permutations(range(K)))
    assert freq_mse_db(est[perm], th) == pytest.approx(20 * np.log10(brute), abs=1e-9)
    assert freq_mse_db(est[perm], th) == pytest.approx(freq_mse_db(est, th), abs=1e-12)


def test_large_k_assignment(rng):
    th = np.linspace(-3, 3, 9)
    est = th[::-1] + 1e-3
    i, j = match_frequencies(est, th)
    assert np.allclose(np.sort(np.abs(est[i] - th[j])), 1e-3)


def test_order_probability():
    assert order_probability([3, 3, 2, 4], 3) == 0.5
