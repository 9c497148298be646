"""Wrap-around hexagonal layout, path loss and Jakes time-correlated fading."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError

#: Number of sinusoids per channel entry in the sum-of-sinusoids model.
NUM_OSCILLATORS = 16
PATH_LOSS_EXPONENT = 3.0


@dataclass(frozen=True)
class Layout:
    """BS and UE positions in meters.

    ``wrap_images[b]`` lists the mirror copies of BS ``b`` (its own position
    first) used for wrap-around distances.
    """

    bs_positions: np.ndarray
    ue_positions: np.ndarray
    inter_site_distance: float
    wrap_images: np.ndarray
    home_bs: np.ndarray

    @property
    def num_bs(self):
        return len(self.bs_positions)

    @property
    def num_users(self):
        return len(self.ue_positions)

    @property
    def edge_radius(self):
        return self.inter_site_distance / 2

    def distances(self):
        """Wrap-around BS-UE distances, shape (B, K)."""
        diff = self.wrap_images[:, :, None, :] - self.ue_positions[None, None]
        return np.linalg.norm(diff, axis=-1).min(axis=1)


def _hex_sites(d):
    angles = np.arange(6) * np.pi / 3
    ring = d * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return np.vstack([np.zeros((1, 2)), ring])


def _wrap_shifts(d):
    # The 7-cell cluster tiles the plane under translations of length
    # sqrt(7) d; the six nearest ones are rotations of (2.5 d, sqrt(3)/2 d).
    base = np.array([2.5 * d, np.sqrt(3) / 2 * d])
    shifts = [np.zeros(2)]
    for n in range(6):
        c, s = np.cos(n * np.pi / 3), np.sin(n * np.pi / 3)
        shifts.append(np.array([[c, -s], [s, c]]) @ base)
    return np.array(shifts)


def build_wraparound_layout(num_bs, inter_site_distance, users_per_cell):
    """Hexagonal layout with users evenly spread on each cell edge.

    Parameters
    ----------
    num_bs : {1, 7}
    inter_site_distance : float
        Distance between neighbouring BSs in meters.
    users_per_cell : int
        UEs per cell, placed at radius ``inter_site_distance / 2`` with
        angles ``2 pi j / users_per_cell``.

    Returns
    -------
    Layout
        UE ``c * users_per_cell + j`` belongs to cell ``c``.
    """
    if num_bs not in (1, 7):
        raise ConfigurationError(f"wrap-around layout supports 1 or 7 BSs, got {num_bs}")
    if users_per_cell < 1:
        raise ConfigurationError("users_per_cell must be at least 1")
    if inter_site_distance <= 0:
        raise ConfigurationError("inter_site_distance must be positive")
    d = float(inter_site_distance)
    sites = _hex_sites(d)[:num_bs]
    if num_bs == 7:
        images = sites[:, None, :] + _wrap_shifts(d)[None]
    else:
        images = sites[:, None, :]
    theta = 2 * np.pi * np.arange(users_per_cell) / users_per_cell
    ring = d / 2 * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    ues = (sites[:, None, :] + ring[None]).reshape(-1, 2)
    home = np.repeat(np.arange(num_bs), users_per_cell)
    return Layout(sites, ues, d, images, home)


def wrap_distance(layout, p, q):
    """Wrap-around distance between two points of the layout plane."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if layout.num_bs == 1:
        return float(np.linalg.norm(p - q))
    shifts = _wrap_shifts(layout.inter_site_distance)
    return float(np.min(np.linalg.norm(p + shifts - q, axis=1)))


def path_gain(distance, exponent=PATH_LOSS_EXPONENT):
    """Distance-based gain ``distance ** -exponent``."""
    distance = np.asarray(distance, dtype=float)
    if np.any(distance <= 0):
        raise DomainError("distance must be positive")
    gain = distance ** -float(exponent)
    return float(gain) if gain.ndim == 0 else gain


def noise_power(snr_linear, power, edge_gain):
    """Noise power that gives ``snr_linear`` at the cell edge."""
    if snr_linear <= 0:
        raise DomainError("SNR must be positive")
    return edge_gain * power / snr_linear


@dataclass
class FadingProcess:
    """Sum-of-sinusoids Rayleigh fading with a Jakes Doppler spectrum.

    Each entry is ``(1/sqrt(N)) sum_n exp(j (2 pi f t cos a_n + phi_n))``
    with arrival angles ``a_n = pi (n + xi) / N`` (one random offset ``xi``
    per entry) and uniform phases ``phi_n``. Averaged over entries the
    correlation at lag ``t`` equals ``J0(2 pi f t)`` exactly and each entry
    has unit power.

    Parameters
    ----------
    normalized_doppler : float
        ``t_S * f_D`` per frame.
    shape : tuple
        ``(B, K, NR, NT)``.
    gains : ndarray, shape (B, K), optional
        Large-scale gains; entries of ``H[b, k]`` are scaled by
        ``sqrt(gains[b, k])``.
    """

    normalized_doppler: float
    shape: tuple
    gains: np.ndarray = None
    seed: int = None
    num_oscillators: int = NUM_OSCILLATORS
    time_index: int = 0
    oscillator_phases: np.ndarray = field(init=False, repr=False)
    cosines: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.normalized_doppler < 0:
            raise DomainError("normalized Doppler must be non-negative")
        rng = np.random.default_rng(self.seed)
        n = self.num_oscillators
        entries = int(np.prod(self.shape))
        xi = rng.random((entries, 1))
        angles = np.pi * (np.arange(n) + xi) / n
        self.cosines = np.cos(angles)
        self.oscillator_phases = rng.uniform(0, 2 * np.pi, (entries, n))
        if self.gains is None:
            self.gains = np.ones(self.shape[:2])

    def sample(self, t):
        """Channel tensor at frame ``t`` without advancing the process."""
        arg = 2 * np.pi * self.normalized_doppler * t * self.cosines
        h = np.exp(1j * (arg + self.oscillator_phases)).sum(axis=1)
        h = h.reshape(self.shape) / np.sqrt(self.num_oscillators)
        return h * np.sqrt(self.gains)[:, :, None, None]

    def unit_samples(self, frames):
        """Unscaled entries for ``frames`` consecutive frames, (frames, entries)."""
        t = self.time_index + np.arange(frames)
        arg = (2 * np.pi * self.normalized_doppler * t[:, None, None]
               * self.cosines[None])
        h = np.exp(1j * (arg + self.oscillator_phases[None])).sum(axis=2)
        return h / np.sqrt(self.num_oscillators)


def evolve_channel(process, frames):
    """Block-fading sequence of ``frames`` channel tensors.

    Returns an array of shape ``(frames, B, K, NR, NT)`` and advances
    ``process.time_index``.
    """
    if frames < 1:
        raise ValueError("frames must be at least 1")
    h = process.unit_samples(frames).reshape((frames,) + tuple(process.shape))
    process.time_index += frames
    return h * np.sqrt(process.gains)[None, :, :, None, None]


def layout_gains(layout, exponent=PATH_LOSS_EXPONENT):
    """Path gains ``g[b, k]`` with wrap-around distances."""
    return path_gain(layout.distances(), exponent)
