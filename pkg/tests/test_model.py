import numpy as np
import pytest
from hypothesis import given, strategies as st

from qlse.model import (ConfigError, RowSet, TruthConfig, doa_to_freq, draw_frequencies, freq_to_doa,
                        generate_truth, min_wrap_distance, steering, steering_matrix)


def test_steering_examples():
    assert np.array_equal(steering(0.0, [3, 5, 9]), np.ones(3))
    np.testing.assert_allclose(steering(np.pi, [0, 1, 2]), [1, -1, 1], atol=1e-15)
    a = steering(0.3, [0, 2])
    np.testing.assert_allclose(np.abs(a), 1.0)
    np.testing.assert_allclose(a[1], np.cos(0.6) + 1j * np.sin(0.6))


def test_steering_rejects_nonfinite():
    with pytest.raises(ValueError):
        steering(np.nan, [0, 1])


@given(st.floats(-10, 10), st.lists(st.integers(0, 200), min_size=1, max_size=20, unique=True))
def test_steering_periodic(theta, rows):
    rows = sorted(rows)
    np.testing.assert_allclose(steering(theta + 2 * np.pi, rows), steering(theta, rows), atol=1e-10)


def test_rowset_validation(rng):
    with pytest.raises(ConfigError):
        RowSet(np.array([2, 1]), 5)
    with pytest.raises(ConfigError):
        RowSet(np.array([0, 5]), 5)
    with pytest.raises(ConfigError):
        RowSet(np.array([], dtype=int), 5)
    r = RowSet.random(10, 30, rng)
    assert r.M == 10 and np.all(np.diff(r.indices) > 0)


def test_generate_truth_snr_and_shapes():
    truth, Z, Y = generate_truth(TruthConfig(N=100, M=80, K=3, L=4, snr_db=10.0, seed=3))
    assert Z.shape == Y.shape == (80, 4)
    ratio = 20 * np.log10(np.linalg.norm(Z) / np.linalg.norm(Y - Z))
    assert abs(ratio - 10.0) < 1e-10
    assert min_wrap_distance(truth.frequencies) > 2 * np.pi / 100
    # noise_var is the per-entry variance of the rescaled draw, close to the realized power
    assert abs(truth.noise_var * Z.size / np.linalg.norm(Y - Z) ** 2 - 1) < 0.15
    # steering products vs. the matrix assembly
    Zp = sum(np.outer(steering(f, truth.rows), truth.weights[k]) for k, f in enumerate(truth.frequencies))
    np.testing.assert_allclose(Zp, Z, rtol=1e-12, atol=1e-12)


def test_generate_truth_single_tone():
    truth, Z, Y = generate_truth(TruthConfig(N=16, M=16, K=1, L=1, snr_db=0.0, seed=0))
    assert Z.shape == (16, 1) and truth.K == 1
    np.testing.assert_allclose(Z[:, 0], steering(truth.frequencies[0], truth.rows) * truth.weights[0, 0])


def test_generate_truth_deterministic():
    cfg = TruthConfig(N=50, M=40, K=3, L=2, snr_db=5.0, seed=11)
    a, b = generate_truth(cfg), generate_truth(cfg)
    for x, y in zip(a[1:], b[1:]):
        assert np.array_equal(x, y)
    assert np.array_equal(a[0].frequencies, b[0].frequencies)


def test_weight_statistics():
    rng = np.random.default_rng(0)
    truth, _, _ = generate_truth(TruthConfig(N=200, M=100, K=3, L=3000, snr_db=10.0), rng)
    mag = np.abs(truth.weights)
    assert abs(mag.mean() - 1.0) < 0.01 and abs(mag.std() - 0.2) < 0.01


def test_infeasible_separation():
    with pytest.raises(ConfigError):
        draw_frequencies(20, 10, np.random.default_rng(0), max_draws=50)


def test_prefix_when_full():
    truth, _, _ = generate_truth(TruthConfig(N=20, M=20, K=2, L=1, snr_db=0.0, seed=1))
    assert np.array_equal(truth.rows.indices, np.arange(20))


def test_doa_mapping():
    assert doa_to_freq(0.0) == 0.0
    np.testing.assert_allclose(doa_to_freq(30.0), np.pi / 2)
    ang = np.array([-2.0, 5.0, 12.0])
    np.testing.assert_allclose(doa_to_freq(ang), np.pi * np.sin(np.deg2rad(ang)))
    np.testing.assert_allclose(freq_to_doa(doa_to_freq(ang)), ang, atol=1e-12)
    with pytest.raises(ValueError):
        freq_to_doa(4.0)
    with pytest.raises(ValueError):
        doa_to_freq(90.0)


def test_steering_matrix_columns():
    th = np.array([0.1, -2.0])
    A = steering_matrix(th, [0, 3, 7])
    for k in range(2):
        np.testing.assert_allclose(A[:, k], steering(th[k], [0, 3, 7]))
