import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import scalar_setup
from jpcomp import system
from jpcomp.errors import ConfigurationError, DomainError
from oracles import mmse_and_sinr, random_instance


def test_mse_perfect_match_is_zero():
    H, M, U = scalar_setup()
    assert system.compute_mse(H, M, U, [0.0])[0, 0] == pytest.approx(0.0)


def test_mse_hand_evaluation():
    H, M, U = scalar_setup(u=0.5)
    assert system.compute_mse(H, M, U, [1.0])[0, 0] == pytest.approx(0.5)


def test_mse_zero_beam_zero_receiver():
    H, M, U = scalar_setup(m=0.0, u=0.0)
    assert system.compute_mse(H, M, U, [1.0], stream=(0, 0)) == pytest.approx(1.0)


def test_sinr_unit_case():
    H, M, U = scalar_setup()
    assert system.compute_sinr(H, M, U, [1.0])[0, 0] == pytest.approx(1.0)


def test_sinr_two_users_all_ones():
    H = np.ones((1, 2, 1, 1), dtype=complex)
    M = np.ones((1, 2, 1, 1), dtype=complex)
    U = np.ones((2, 1, 1), dtype=complex)
    np.testing.assert_allclose(system.compute_sinr(H, M, U, [1.0, 1.0]), 0.5)


def test_sinr_zero_signal_convention():
    H, M, U = scalar_setup(m=0.0)
    assert system.compute_sinr(H, M, U, [1.0])[0, 0] == 0.0


def test_mmse_receiver_scalar():
    H, M, _ = scalar_setup()
    assert system.mmse_receiver(H, M, [1.0])[0, 0, 0] == pytest.approx(0.5)


def test_mmse_receiver_zero_beam():
    H, M, _ = scalar_setup(m=0.0)
    assert system.mmse_receiver(H, M, [1.0])[0, 0, 0] == 0


def test_mmse_receiver_noiseless_uses_ridge():
    H, M, _ = scalar_setup()
    diag = {}
    U = system.mmse_receiver(H, M, [0.0], diagnostics=diag)
    assert U[0, 0, 0] == pytest.approx(1.0)
    assert system.compute_mse(H, M, U, [0.0])[0, 0] == pytest.approx(0.0, abs=1e-10)


def test_mse_sinr_check_scalar():
    assert system.mse_sinr_check(0.5, 1.0)


def test_mse_sinr_check_rejects_non_mmse():
    H, M, U = scalar_setup(u=0.1)
    eps = system.compute_mse(H, M, U, [1.0])
    gamma = system.compute_sinr(H, M, U, [1.0])
    assert not system.mse_sinr_check(eps, gamma)


def test_receiver_matches_explicit_oracle(rng):
    H, M, s2 = random_instance(rng, L=2)
    U = system.mmse_receiver(H, M, s2)
    eps = system.compute_mse(H, M, U, s2)
    gamma = system.compute_sinr(H, M, U, s2)
    for k in range(H.shape[1]):
        for l in range(2):
            u, mse, sinr = mmse_and_sinr(H, M, s2, k, l)
            np.testing.assert_allclose(U[k, l], u, rtol=1e-10)
            assert eps[k, l] == pytest.approx(mse, rel=1e-10)
            assert gamma[k, l] == pytest.approx(sinr, rel=1e-10)


@pytest.mark.parametrize("eps,mu,expected", [(1.0, 1.0, 1.4427), (0.5, 2.0, 5.7708),
                                             (0.3, 0.0, 0.0)])
def test_update_weights(eps, mu, expected):
    w = system.update_weights(np.array([[eps]]), np.array([mu]))
    assert w[0, 0] == pytest.approx(expected, abs=1e-4)


def test_update_weights_rejects_nonpositive_mse():
    with pytest.raises(DomainError):
        system.update_weights(np.array([[0.0]]), np.array([1.0]))


def test_rate_scalar_unit_sinr():
    H, M, _ = scalar_setup()
    U = np.ones((1, 1, 1), dtype=complex)
    assert system.weighted_sum_rate(H, M, [1.0], [1.0], U=U) == pytest.approx(1.0)


def test_rate_zero_beams():
    H, M, _ = scalar_setup(m=0.0)
    assert system.weighted_sum_rate(H, M, [1.0], [1.0]) == 0.0


def test_rate_two_orthogonal_links():
    H = np.zeros((2, 2, 1, 1), dtype=complex)
    H[0, 0] = H[1, 1] = np.sqrt(3)
    M = np.zeros((2, 2, 1, 1), dtype=complex)
    M[0, 0] = M[1, 1] = 1
    U = np.ones((2, 1, 1), dtype=complex)
    assert system.weighted_sum_rate(H, M, [1, 1], [1, 1], U=U) == pytest.approx(4.0)


def test_per_bs_power(rng):
    M = np.zeros((2, 2, 1, 3), dtype=complex)
    assert np.all(system.per_bs_power(M) == 0)
    M[0, 0, 0, 0] = 1
    M[0, 1, 0, 2] = 1j
    assert system.per_bs_power(M, 0) == pytest.approx(2.0)
    X = rng.standard_normal((3, 4, 2, 5)) + 1j * rng.standard_normal((3, 4, 2, 5))
    ref = [sum(abs(z) ** 2 for z in X[b].ravel()) for b in range(3)]
    np.testing.assert_allclose(system.per_bs_power(X), ref)


def test_matched_filter_init_fills_budget(rng):
    sc = system.random_scenario(rng, 3, 6, 4, 2, 2)
    M = system.matched_filter_init(sc.channels, sc.cluster, sc.power)
    np.testing.assert_allclose(system.per_bs_power(M), sc.power)


def test_cluster_validation():
    with pytest.raises(ConfigurationError):
        system.ClusterMap(np.zeros((2, 2), dtype=bool), np.ones(2))
    with pytest.raises(ConfigurationError):
        system.ClusterMap(np.ones((2, 2), dtype=bool), np.zeros(2))
    cluster = system.ClusterMap.per_cell(2, 2)
    assert cluster.serving_sets == [{0}, {0}, {1}, {1}]


def test_too_many_streams_rejected(rng):
    H = np.ones((1, 1, 1, 1))
    with pytest.raises(ConfigurationError):
        system.Scenario(H, system.ClusterMap.full(1, 1, 2), 1.0, 1.0)


# -- properties ---------------------------------------------------------------

dims = st.tuples(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4),
                 st.integers(1, 3), st.integers(0, 2**32 - 1))


@settings(max_examples=60, deadline=None)
@given(dims)
def test_mse_sinr_inversion_property(params):
    B, K, nt, nr, seed = params
    rng = np.random.default_rng(seed)
    L = int(rng.integers(1, nr + 1))
    H, M, s2 = random_instance(rng, B, K, nt, nr, L, snr_db=rng.uniform(-5, 25))
    U = system.mmse_receiver(H, M, s2)
    assert system.mse_sinr_check(system.compute_mse(H, M, U, s2),
                                 system.compute_sinr(H, M, U, s2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mmse_receiver_is_minimizer(seed):
    rng = np.random.default_rng(seed)
    H, M, s2 = random_instance(rng, 2, 3, 3, 2, 2)
    U = system.mmse_receiver(H, M, s2)
    base = system.compute_mse(H, M, U, s2)
    d = rng.standard_normal(U.shape) + 1j * rng.standard_normal(U.shape)
    d *= 1e-3 / np.linalg.norm(d, axis=-1, keepdims=True)
    assert np.all(system.compute_mse(H, M, U + d, s2) >= base - 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mse_midpoint_convex_in_beams(seed):
    rng = np.random.default_rng(seed)
    H, M1, s2 = random_instance(rng, 2, 3, 3, 2, 1)
    _, M2, _ = random_instance(rng, 2, 3, 3, 2, 1)
    U = system.mmse_receiver(H, M1, s2)
    f = lambda M: system.compute_mse(H, M, U, s2)
    assert np.all(f((M1 + M2) / 2) <= (f(M1) + f(M2)) / 2 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rate_with_mmse_receivers_dominates(seed):
    rng = np.random.default_rng(seed)
    H, M, s2 = random_instance(rng, 2, 3, 3, 2, 2)
    U = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
    mu = np.ones(3)
    assert (system.weighted_sum_rate(H, M, s2, mu)
            >= system.weighted_sum_rate(H, M, s2, mu, U=U) - 1e-9)
