"""User admission: stream dropping, periodic resets and delayed indexing.

Overloaded initialization starts every stream; the transceiver iteration
drives incompatible streams to zero power. Resets re-run the overloaded
initialization every ``reset_interval`` frames so that the selection can
follow the channel, and delayed indexing keeps the pre-reset beams for data
transmission while the fresh ones are trained.

A dropped stream is removed by zeroing its beams. Zero beams give a zero
receiver, so the stream no longer contributes pilots, interference or rate,
and every solver keeps it at zero until the next reset.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import system
from .errors import ConfigurationError


@dataclass(frozen=True)
class AdmissionPolicy:
    """Reset and signaling-length schedule.

    Parameters
    ----------
    reset_interval : int or math.inf
        Frames between beamformer reinitializations.
    drop_threshold : float
        Fraction of the per-stream share of the power budget below which a
        stream counts as dropped.
    bit_after_reset, bit_normal : int
        Signaling iterations in the first frame after a reset and in the
        other frames.
    delayed_indexing : bool
        Keep transmitting with the pre-reset beams during the reset frame.
    """

    reset_interval: float = math.inf
    drop_threshold: float = 1e-3
    bit_after_reset: int = 10
    bit_normal: int = 3
    delayed_indexing: bool = False

    def __post_init__(self):
        if not self.reset_interval >= 1:
            raise ConfigurationError("reset_interval must be at least 1")
        if self.reset_interval != math.inf and not float(self.reset_interval).is_integer():
            raise ConfigurationError("reset_interval must be an integer or inf")
        if not 0 < self.drop_threshold < 1:
            raise ConfigurationError("drop_threshold must lie in (0, 1)")
        if self.bit_after_reset < 1 or self.bit_normal < 1:
            raise ConfigurationError("signaling iteration counts must be at least 1")


@dataclass
class BeamformerPair:
    """Beams being trained and beams carrying data in the current frame.

    ``stored`` holds the training beams saved just before the last reset.
    """

    training: np.ndarray
    active: np.ndarray
    stored: np.ndarray = None


def stream_power_share(cluster, power):
    """Per-stream reference power ``P_b / (|C_b| max L)`` averaged over serving BSs."""
    served = np.maximum(cluster.serving.sum(axis=1), 1)
    share = np.asarray(power, dtype=float) / (served * cluster.max_streams)
    weights = cluster.serving.astype(float)
    return (weights * share[:, None]).sum(axis=0) / weights.sum(axis=0)


def detect_dropped(beams, cluster, power, policy):
    """Active flags per stream, shape (K, L).

    A stream is active when its total power over the serving BSs reaches
    ``drop_threshold`` times its reference share. Unused slots are inactive.
    """
    p = np.sum(np.abs(beams) ** 2, axis=(0, 3))
    ref = stream_power_share(cluster, power)
    return cluster.stream_mask & (p >= policy.drop_threshold * ref[:, None])


def apply_drops(beams, active):
    """Zero the beams of inactive streams."""
    return np.where(active[None, :, :, None], beams, 0)


def is_reset_frame(frame_index, policy):
    """Frame 0 is the initialization; resets follow every ``reset_interval`` frames."""
    if policy.reset_interval == math.inf or frame_index <= 0:
        return False
    return frame_index % int(policy.reset_interval) == 0


def maybe_reset(frame_index, policy, init_rule):
    """Return ``(reset, beams)``; ``beams`` comes from ``init_rule()`` on a reset."""
    if is_reset_frame(frame_index, policy):
        return True, init_rule()
    return False, None


def frames_since_reset(frame_index, policy):
    if policy.reset_interval == math.inf:
        return frame_index
    return frame_index % int(policy.reset_interval)


def bit_for_frame(frame_index, policy):
    """Signaling iterations of a frame."""
    if frames_since_reset(frame_index, policy) == 0:
        return policy.bit_after_reset
    return policy.bit_normal


def select_active(pair, frame_index, policy):
    """Beams used for data in ``frame_index``.

    With delayed indexing the stored pre-reset beams stay active during the
    reset frame; from the next frame on the trained beams take over.
    """
    if (policy.delayed_indexing and pair.stored is not None
            and is_reset_frame(frame_index, policy)):
        return pair.stored
    return pair.training


def reset_weights(cluster, priority):
    """Weights of a fresh start, ``mu / (ln 2)`` on every used stream."""
    return system.update_weights(np.ones(cluster.stream_mask.shape), priority,
                                 cluster.stream_mask)
