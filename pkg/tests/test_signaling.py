import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jpcomp import signaling, sse, system
from jpcomp.errors import ConfigurationError


def test_schedule_frame_length():
    s = signaling.build_schedule(0.02, 3)
    assert s.frame_len_symbols == pytest.approx(300)
    assert s.effective_rate(10.0) == pytest.approx(9.8)
    assert signaling.build_schedule(0.02, 10).frame_len_symbols == pytest.approx(1000)


def test_schedule_without_overhead():
    s = signaling.build_schedule(0.0, 5)
    assert s.data_fraction == 1.0 and s.frame_len_symbols == math.inf


@pytest.mark.parametrize("gamma,bit", [(1.0, 3), (-0.1, 3), (0.1, 0)])
def test_schedule_rejects_bad_values(gamma, bit):
    with pytest.raises(ConfigurationError):
        signaling.build_schedule(gamma, bit)


def test_passthrough_is_exact(rng):
    v = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    codes, rec, st2 = signaling.quantize_differential(signaling.QuantizerState(math.inf), v)
    assert codes is None and np.array_equal(rec, v) and rec is not v


def test_one_bit_midrise_levels():
    state = signaling.QuantizerState(q_bits=1, range=1.0)
    _, rec, _ = signaling.quantize_differential(state, 0.3 + 0.4j)
    assert rec == pytest.approx(0.5 + 0.5j)


def test_midrise_levels_and_saturation():
    levels, codes, sat = signaling.midrise(np.array([-2.0, -0.1, 0.1, 0.99]), 2, 1.0)
    np.testing.assert_allclose(levels, [-0.75, -0.25, 0.25, 0.75])
    assert sat.tolist() == [True, False, False, False]


def test_differential_refinement_converges():
    state = signaling.QuantizerState(q_bits=3, range=1.0)
    value = 0.37 - 0.81j
    for _ in range(20):
        _, rec, state = signaling.quantize_differential(state, value)
    assert abs(rec - value) < 1e-3


def test_smoothing_moves_part_way():
    state = signaling.QuantizerState(math.inf, smoothing_beta=0.25)
    _, rec, _ = signaling.quantize_differential(state, 4.0)
    assert rec == pytest.approx(1.0)


def test_saturation_is_counted_and_range_grows():
    state = signaling.QuantizerState(q_bits=4, range=1.0)
    _, _, s2 = signaling.quantize_differential(state, 10.0)
    assert s2.saturation_events == 1 and s2.range == pytest.approx(2.0)


@pytest.mark.parametrize("kw", [{"q_bits": 0}, {"q_bits": 2.5}, {"smoothing_beta": 0.0},
                                {"range": -1.0}])
def test_quantizer_state_validation(kw):
    with pytest.raises(ConfigurationError):
        signaling.QuantizerState(**kw)


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 12), st.integers(0, 2**32 - 1))
def test_tracking_error_bounded_by_step(bits, seed):
    rng = np.random.default_rng(seed)
    state = signaling.QuantizerState(q_bits=bits, range=1.0)
    path = np.cumsum(0.05 * (rng.standard_normal(60) + 1j * rng.standard_normal(60)))
    errs = []
    for v in path:
        _, rec, state = signaling.quantize_differential(state, v)
        errs.append(abs(rec - v))
    assert max(errs[-20:]) <= 0.2


def test_accounting_table_values():
    cluster = system.ClusterMap.full(7, 49, 2)
    assert signaling.account_exchange("backhaul_offload", cluster, 8, 2)["per_stream"] == 98
    assert signaling.account_exchange("feedback_channel", cluster, 8, 2)["per_stream"] == 98
    assert signaling.account_exchange("global_csi", cluster, 8, 2)["per_stream"] == 784
    single = system.ClusterMap.full(1, 1)
    assert signaling.account_exchange("backhaul_offload", single, 1, 1)["total"] == 1
    with pytest.raises(ConfigurationError):
        signaling.account_exchange("pigeon", single, 1, 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 12), st.integers(1, 3), st.integers(1, 8),
       st.integers(3, 4))
def test_accounting_is_scheme_monotone(B, K, L, nt, nr):
    cluster = system.ClusterMap.full(B, K, L)
    off = signaling.account_exchange("backhaul_offload", cluster, nt, nr)
    fb = signaling.account_exchange("feedback_channel", cluster, nt, nr)
    glob = signaling.account_exchange("global_csi", cluster, nt, nr)
    assert off == {**fb, "scheme": "backhaul_offload"}
    assert isinstance(off["total"], int)
    if K * L <= K * nr * nt:
        assert off["per_stream"] <= glob["per_stream"]


def test_exchange_round_identity_and_ring():
    topo = {0: [1, 2], 1: [0, 2], 2: [0, 1]}
    msgs = {0: 1.0 + 1j, 1: np.array([2.0, 3.0]), 2: -1j}
    ledger = signaling.BackhaulLedger()
    out = signaling.exchange_round(msgs, {}, topo, ledger)
    assert set(out[0]) == {1, 2} and set(out[1]) == {0, 2}
    np.testing.assert_array_equal(out[2][1], msgs[1])
    per_round = ledger.total
    for _ in range(4):
        signaling.exchange_round(msgs, {}, topo, ledger, frame=1)
    assert ledger.total == 5 * per_round == 5 * 8
    assert ledger.frame_totals[1] == 4 * per_round


def test_exchange_round_quantizes_links():
    quant = {(0, 1): signaling.QuantizerState(q_bits=1, range=1.0)}
    out = signaling.exchange_round({0: 0.3 + 0.4j}, quant, {0: [1]})
    assert out[1][0] == pytest.approx(0.5 + 0.5j)
    assert quant[(0, 1)].last_reconstruction == pytest.approx(0.5 + 0.5j)


def test_infinite_precision_exchange_is_bit_identical(rng):
    sc = system.random_scenario(rng, 3, 6, 4, 2, 1, 10)
    a = sse.BestResponse(sc)
    b = sse.BestResponse(sc, exchange=signaling.QuantizedExchange(math.inf))
    for _ in range(30):
        a.step()
        b.step()
    assert np.array_equal(a.beams, b.beams)


def test_quantized_exchange_reset_and_counts(rng):
    ex = signaling.QuantizedExchange(2, initial_range=1e-3)
    x = rng.standard_normal((3, 4)) + 0j
    ex(x)
    assert ex.saturation_events > 0
    ex.reset()
    assert ex.saturation_events == 0
