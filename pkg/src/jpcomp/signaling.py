"""Frame schedule, differential feedback quantization and exchange accounting."""

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

SCHEMES = ("backhaul_offload", "feedback_channel", "global_csi")


@dataclass(frozen=True)
class FrameSchedule:
    """TDD frame with ``bit`` bi-directional training iterations.

    ``gamma`` is the fraction of the frame spent on training; each
    iteration uses one uplink and one downlink symbol.
    """

    gamma: float
    bit: int

    @property
    def frame_len_symbols(self):
        return math.inf if self.gamma == 0 else 2 * self.bit / self.gamma

    @property
    def data_fraction(self):
        return 1.0 - self.gamma

    def effective_rate(self, rate):
        return self.data_fraction * rate


def build_schedule(gamma, bit):
    """Validate and build a :class:`FrameSchedule`.

    ``gamma = 0`` turns overhead modelling off.
    """
    if not 0 <= gamma < 1:
        raise ConfigurationError(f"overhead fraction must lie in [0, 1), got {gamma}")
    if bit < 1:
        raise ConfigurationError("at least one training iteration per frame is needed")
    return FrameSchedule(float(gamma), int(bit))


def midrise(x, bits, limit):
    """Uniform mid-rise quantizer with ``2**bits`` levels on ``[-limit, limit]``.

    Returns ``(levels, codes, saturated)``; inputs outside the range map to
    the outermost level.
    """
    n = 2 ** bits
    step = 2 * limit / n
    codes = np.clip(np.floor(x / step), -n // 2, n // 2 - 1)
    saturated = np.abs(x) > limit
    return (codes + 0.5) * step, codes.astype(np.int64), saturated


@dataclass
class QuantizerState:
    """Per-link state of the differential quantizer.

    ``q_bits`` is per I and per Q branch; ``math.inf`` passes values through.
    ``range`` adapts after every symbol: it doubles on saturation and
    otherwise follows twice the largest reconstructed step, shrinking by at
    most a factor of two per symbol. Both link ends can run the rule since
    it only depends on transmitted codes.
    """

    q_bits: float = 8
    smoothing_beta: float = 1.0
    range: np.ndarray = 1.0
    last_reconstruction: np.ndarray = 0.0
    min_range: float = 1e-12
    saturation_events: int = 0

    def __post_init__(self):
        if not (self.q_bits == math.inf or (self.q_bits >= 1 and float(self.q_bits).is_integer())):
            raise ConfigurationError("q_bits must be a positive integer or inf")
        if not 0 < self.smoothing_beta <= 1:
            raise ConfigurationError("smoothing_beta must lie in (0, 1]")
        if np.any(np.asarray(self.range) <= 0):
            raise ConfigurationError("quantizer range must be positive")


def quantize_differential(state, value):
    """Encode ``value - last`` and return the smoothed reconstruction.

    Parameters
    ----------
    state : QuantizerState
    value : complex or ndarray

    Returns
    -------
    codes : tuple of ndarray or None
        I and Q level indices (``None`` for pass-through).
    reconstruction : complex or ndarray
        ``last + beta * Q(value - last)``.
    state : QuantizerState
        New state; the input state is not modified.
    """
    value = np.asarray(value, dtype=complex)
    last = np.broadcast_to(np.asarray(state.last_reconstruction, dtype=complex),
                           value.shape)
    beta = state.smoothing_beta
    if state.q_bits == math.inf:
        rec = value.copy() if beta == 1 else last + beta * (value - last)
        new = QuantizerState(state.q_bits, beta, state.range, rec,
                             state.min_range, state.saturation_events)
        return None, rec, new
    bits = int(state.q_bits)
    diff = value - last
    limit = np.broadcast_to(np.asarray(state.range, dtype=float), value.shape)
    qi, ci, si = midrise(diff.real, bits, limit)
    qq, cq, sq = midrise(diff.imag, bits, limit)
    sat = si | sq
    rec = last + beta * (qi + 1j * qq)
    peak = np.maximum(np.abs(qi), np.abs(qq))
    new_range = np.where(sat, 2 * limit,
                         np.maximum.reduce([2 * peak, limit / 2,
                                            np.full_like(limit, state.min_range)]))
    new = QuantizerState(state.q_bits, beta, new_range, rec, state.min_range,
                         state.saturation_events + int(np.count_nonzero(sat)))
    return (ci, cq), rec, new


def account_exchange(scheme, cluster, nt, nr, active_streams=None):
    """Complex scalars exchanged per signaling iteration.

    Returns a dict with ``per_stream`` (per active data stream), the number
    of active streams and their product ``total``.
    """
    if scheme not in SCHEMES:
        raise ConfigurationError(f"unknown signaling scheme {scheme!r}")
    streams = int(np.sum(cluster.streams))
    active = streams if active_streams is None else int(active_streams)
    if scheme == "global_csi":
        per_stream = cluster.num_users * nr * nt
    else:
        per_stream = streams
    return {"scheme": scheme, "per_stream": per_stream,
            "active_streams": active, "total": per_stream * active}


@dataclass
class BackhaulLedger:
    """Counts of complex scalars exchanged, per scheme and per frame."""

    per_iteration: list = field(default_factory=list)
    frame_totals: dict = field(default_factory=lambda: defaultdict(int))
    scheme_totals: dict = field(default_factory=lambda: defaultdict(int))

    def record(self, scheme, count, frame=0):
        self.per_iteration.append((frame, scheme, int(count)))
        self.frame_totals[frame] += int(count)
        self.scheme_totals[scheme] += int(count)

    @property
    def total(self):
        return sum(self.scheme_totals.values())


def exchange_round(messages, quantizers, topology, ledger=None,
                   scheme="backhaul_offload", frame=0):
    """Deliver one round of messages with barrier semantics.

    Parameters
    ----------
    messages : dict
        ``sender -> value`` (scalar or array) computed this round.
    quantizers : dict
        ``(sender, receiver) -> QuantizerState``; updated in place for the
        links used. Missing links pass values through unchanged.
    topology : dict
        ``sender -> iterable of receivers``.

    Returns
    -------
    dict
        ``receiver -> {sender: reconstruction}``. All reconstructions are
        computed from this round's messages before anything is delivered.
    """
    delivered = defaultdict(dict)
    for sender, value in messages.items():
        for receiver in topology.get(sender, ()):
            link = (sender, receiver)
            if link in quantizers:
                _, rec, quantizers[link] = quantize_differential(quantizers[link], value)
            else:
                rec = np.array(value, copy=True)
            delivered[receiver][sender] = rec
            if ledger is not None:
                ledger.record(scheme, np.size(value), frame)
    return dict(delivered)


class QuantizedExchange:
    """Exchange hook for the decentralized solvers.

    Every BS broadcasts its contribution tensor to all peers through its own
    differential quantizer. The peers run identical decoders, so one state
    per sender describes every outgoing link.

    Parameters
    ----------
    q_bits : int or math.inf
    smoothing_beta : float
    initial_range : float
    """

    def __init__(self, q_bits=8, smoothing_beta=1.0, initial_range=1.0):
        self.q_bits = q_bits
        self.smoothing_beta = smoothing_beta
        self.initial_range = initial_range
        self.states = None

    @property
    def saturation_events(self):
        return 0 if self.states is None else sum(s.saturation_events for s in self.states)

    def reset(self):
        self.states = None

    def __call__(self, tensors):
        if self.states is None:
            self.states = [QuantizerState(self.q_bits, self.smoothing_beta,
                                          np.full(t.shape, self.initial_range),
                                          np.zeros(t.shape, dtype=complex))
                           for t in tensors]
        out = np.empty_like(tensors)
        for b, t in enumerate(tensors):
            _, out[b], self.states[b] = quantize_differential(self.states[b], t)
        return out
