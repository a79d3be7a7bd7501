"""Stream determinism, independence smoke tests and categorical sampling."""
import numpy as np
import pytest

from mlmc.rng import (
    ProbabilityVector,
    RngStream,
    categorical_sample,
    categorical_sample_many,
    gaussian_vector,
)


def test_same_identity_same_sequence():
    a = gaussian_vector(RngStream(seed=1), 3)
    b = gaussian_vector(RngStream(seed=1), 3)
    np.testing.assert_array_equal(a, b)


def test_distinct_stream_ids_differ():
    a = gaussian_vector(RngStream(seed=1, stream_id=0), 4)
    b = gaussian_vector(RngStream(seed=1, stream_id=1), 4)
    assert not np.allclose(a, b)


def test_gaussian_moments():
    # law-of-large-numbers bounds at n = 1e6: |mean| < 4/sqrt(n), var within 1%
    n = 10 ** 6
    draws = RngStream(seed=42).generator.standard_normal(n)
    assert abs(draws.mean()) < 4.0 / np.sqrt(n)
    assert abs(draws.var() - 1.0) < 0.01


def test_gaussian_dim2_uncorrelated():
    n = 10 ** 6
    draws = RngStream(seed=7).generator.standard_normal((n, 2))
    rho = np.corrcoef(draws.T)[0, 1]
    assert abs(rho) < 0.01


def test_gaussian_vector_rejects_bad_dim():
    with pytest.raises(ValueError):
        gaussian_vector(RngStream(1), 0)


def test_pairwise_stream_correlation_smoke():
    # distinct lanes should look independent
    n = 200_000
    base = RngStream(seed=3)
    draws = [base.split(i).generator.standard_normal(n) for i in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            rho = np.corrcoef(draws[i], draws[j])[0, 1]
            assert abs(rho) < 0.01, (i, j, rho)


def test_split_is_pure_function_of_ids():
    a = RngStream(9).split(5, 11)
    parent = RngStream(9)
    parent.generator.standard_normal(100)  # consuming draws must not matter
    b = parent.split(5, 11)
    assert (a.seed, a.stream_id) == (b.seed, b.stream_id)
    np.testing.assert_array_equal(
        a.generator.standard_normal(8), b.generator.standard_normal(8)
    )


def test_categorical_degenerate():
    p = ProbabilityVector(np.array([1.0, 0.0, 0.0]))
    stream = RngStream(0)
    assert all(categorical_sample(p, stream) == 0 for _ in range(50))


def test_categorical_frequencies():
    n = 10 ** 5
    draws = categorical_sample_many(np.array([0.5, 0.5]), n, RngStream(12))
    freq = np.mean(draws == 0)
    assert 0.49 <= freq <= 0.51


def test_categorical_rejects_negative():
    with pytest.raises(ValueError):
        categorical_sample(np.array([0.5, -0.1, 0.6]), RngStream(0))


def test_categorical_rejects_unnormalized():
    with pytest.raises(ValueError):
        categorical_sample(np.array([0.5, 0.2]), RngStream(0))


def test_probability_vector_normalizes():
    p = ProbabilityVector(np.array([2.0, 2.0]))
    assert abs(p.weights.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(p.weights, [0.5, 0.5])


def test_probability_vector_from_log_weights():
    p = ProbabilityVector.from_log_weights(np.array([-np.inf, 0.0, 0.0]))
    np.testing.assert_allclose(p.weights, [0.0, 0.5, 0.5])
    with pytest.raises(ValueError):
        ProbabilityVector.from_log_weights(np.array([-np.inf, -np.inf]))
