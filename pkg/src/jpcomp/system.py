"""
Signal model shared by every solver.

Array conventions used throughout the package:

* channels ``H`` has shape ``(B, K, NR, NT)``; ``H[b, k]`` is the channel
  from BS ``b`` to UE ``k``.
* transmit beamformers ``M`` have shape ``(B, K, L, NT)``; ``M[b, k, l]`` is
  the part of stream ``(k, l)`` sent from BS ``b``. Entries for BSs outside
  the serving set and for unused stream slots are kept at zero.
* receive beamformers ``U`` have shape ``(K, L, NR)``.

Data symbols and noise samples only enter through their second moments and
are never instantiated.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DomainError

log = logging.getLogger(__name__)

LN2 = np.log(2.0)


@dataclass(frozen=True)
class ClusterMap:
    """Joint-processing clusters and per-user stream counts.

    Parameters
    ----------
    serving : ndarray of bool, shape (B, K)
        ``serving[b, k]`` is True iff BS ``b`` belongs to the serving set of
        UE ``k``.
    streams : ndarray of int, shape (K,)
        Number of spatial streams allocated to each UE.
    """

    serving: np.ndarray
    streams: np.ndarray

    def __post_init__(self):
        serving = np.asarray(self.serving, dtype=bool)
        streams = np.asarray(self.streams, dtype=int)
        if serving.ndim != 2 or streams.shape != (serving.shape[1],):
            raise ConfigurationError("serving must be (B, K) and streams (K,)")
        if np.any(streams < 1):
            raise ConfigurationError("every UE needs at least one stream")
        if np.any(~serving.any(axis=0)):
            raise ConfigurationError("every UE needs at least one serving BS")
        object.__setattr__(self, "serving", serving)
        object.__setattr__(self, "streams", streams)

    @classmethod
    def full(cls, num_bs, num_users, streams_per_user=1):
        """Every BS serves every UE coherently."""
        return cls(np.ones((num_bs, num_users), dtype=bool),
                   np.full(num_users, streams_per_user))

    @classmethod
    def per_cell(cls, num_bs, users_per_cell, streams_per_user=1):
        """UE ``k`` is served only by its home BS ``k // users_per_cell``."""
        K = num_bs * users_per_cell
        serving = np.zeros((num_bs, K), dtype=bool)
        serving[np.arange(K) // users_per_cell, np.arange(K)] = True
        return cls(serving, np.full(K, streams_per_user))

    @property
    def num_bs(self):
        return self.serving.shape[0]

    @property
    def num_users(self):
        return self.serving.shape[1]

    @property
    def max_streams(self):
        return int(self.streams.max())

    @property
    def total_streams(self):
        return int(self.streams.sum())

    @property
    def stream_mask(self):
        """Boolean (K, L) mask of stream slots in use."""
        return np.arange(self.max_streams)[None, :] < self.streams[:, None]

    @property
    def transmit_mask(self):
        """Boolean (B, K, L) mask of beamformers that may be non-zero."""
        return self.serving[:, :, None] & self.stream_mask[None, :, :]

    @property
    def serving_sets(self):
        return [set(np.flatnonzero(col)) for col in self.serving.T]

    @property
    def served_sets(self):
        return [set(np.flatnonzero(row)) for row in self.serving]

    def check_dimensions(self, nt, nr):
        limit = np.minimum(self.serving.sum(axis=0) * nt, nr)
        if np.any(self.streams > limit):
            raise ConfigurationError(
                "streams per UE must not exceed min(|B_k| NT, NR)")


@dataclass
class Scenario:
    """One channel realization together with powers, noise and priorities."""

    channels: np.ndarray
    cluster: ClusterMap
    power: np.ndarray
    noise: np.ndarray
    priority: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=complex)
        B, K, nr, nt = self.channels.shape
        if (B, K) != self.cluster.serving.shape:
            raise ConfigurationError("channel and cluster shapes disagree")
        self.cluster.check_dimensions(nt, nr)
        self.power = np.broadcast_to(
            np.asarray(self.power, dtype=float), (B,)).copy()
        self.noise = np.broadcast_to(
            np.asarray(self.noise, dtype=float), (K,)).copy()
        if self.priority is None:
            self.priority = np.ones(K)
        self.priority = np.broadcast_to(
            np.asarray(self.priority, dtype=float), (K,)).copy()

    @property
    def nt(self):
        return self.channels.shape[3]

    @property
    def nr(self):
        return self.channels.shape[2]

    @property
    def shape(self):
        """(B, K, L, NT, NR)"""
        B, K, nr, nt = self.channels.shape
        return B, K, self.cluster.max_streams, nt, nr

    def with_channels(self, channels):
        return replace(self, channels=channels)

    def zero_beams(self):
        B, K, L, nt, _ = self.shape
        return np.zeros((B, K, L, nt), dtype=complex)


def random_scenario(rng, num_bs=3, num_users=6, nt=4, nr=2, streams=1,
                    snr_db=10.0, power=1.0, cluster=None):
    """I.i.d. unit-variance Rayleigh instance with full cooperation.

    Noise is set so that ``power / noise`` equals the requested SNR.
    """
    H = (rng.standard_normal((num_bs, num_users, nr, nt))
         + 1j * rng.standard_normal((num_bs, num_users, nr, nt))) / np.sqrt(2)
    if cluster is None:
        cluster = ClusterMap.full(num_bs, num_users, streams)
    noise = power / 10 ** (snr_db / 10)
    return Scenario(H, cluster, power, noise)


def received_signals(H, M):
    """Coherently combined effective channels.

    Returns ``G`` with shape (K, K, L, NR) where ``G[k, i, j]`` is
    ``sum_b H[b, k] @ M[b, i, j]``, the signature of stream ``(i, j)`` at UE
    ``k``.
    """
    return np.einsum("bkrt,bijt->kijr", H, M)


def receive_covariance(H, M, sigma2):
    """Receive covariance ``K_k`` of every UE, shape (K, NR, NR)."""
    G = received_signals(H, M)
    nr = H.shape[2]
    cov = np.einsum("kijr,kijs->krs", G, G.conj())
    return cov + np.asarray(sigma2)[:, None, None] * np.eye(nr)


def _regularized_solve(cov, rhs, diagnostics=None, user=None):
    try:
        if np.linalg.cond(cov) < 1e12:
            return np.linalg.solve(cov, rhs)
    except np.linalg.LinAlgError:
        pass
    nr = cov.shape[0]
    trace = np.trace(cov).real
    ridge = 1e-12 * (trace / nr if trace > 0 else 1.0)
    log.debug("singular receive covariance for UE %s, ridge %.3g", user, ridge)
    if diagnostics is not None:
        diagnostics.setdefault("ridge_users", []).append(user)
    return np.linalg.solve(cov + ridge * np.eye(nr), rhs)


def mmse_receiver(H, M, sigma2, user=None, diagnostics=None):
    """MMSE receive beamformers ``u = K_k^{-1} sum_b H[b,k] m[b,k,l]``.

    Parameters
    ----------
    H, M : ndarray
        Channels (B, K, NR, NT) and transmit beamformers (B, K, L, NT).
    sigma2 : array_like, shape (K,)
        Receiver noise powers.
    user : int, optional
        If given, only the (L, NR) receivers of this UE are returned.
    diagnostics : dict, optional
        Receives a ``"ridge_users"`` list when a singular covariance had to
        be regularized.

    Returns
    -------
    ndarray
        Receivers of shape (K, L, NR), or (L, NR) when ``user`` is given.
    """
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (H.shape[1],))
    G = received_signals(H, M)
    cov = receive_covariance(H, M, sigma2)
    users = range(H.shape[1]) if user is None else [user]
    out = []
    for k in users:
        own = G[k, k]  # (L, NR)
        out.append(_regularized_solve(cov[k], own.T, diagnostics, k).T)
    return out[0] if user is not None else np.stack(out)


def stream_gains(H, M, U):
    """``V[k, l, i, j] = u_{k,l}^H sum_b H[b,k] m[b,i,j]``."""
    return np.einsum("klr,kijr->klij", U.conj(), received_signals(H, M))


def _pick(values, stream):
    return values if stream is None else values[stream]


def compute_mse(H, M, U, sigma2, stream=None):
    """Per-stream MSE with unit-power symbols.

    ``eps = |u^H g_own - 1|^2 + sum_{other streams} |u^H g|^2 + ||u||^2 s2``.
    Returns the (K, L) array, or a scalar if ``stream=(k, l)`` is given.
    """
    K, L = U.shape[:2]
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (K,))
    V = stream_gains(H, M, U)
    total = np.sum(np.abs(V) ** 2, axis=(2, 3))
    own = V[np.arange(K)[:, None], np.arange(L)[None, :],
            np.arange(K)[:, None], np.arange(L)[None, :]]
    eps = (total - np.abs(own) ** 2 + np.abs(own - 1) ** 2
           + np.sum(np.abs(U) ** 2, axis=2) * sigma2[:, None])
    return _pick(eps, stream)


def compute_sinr(H, M, U, sigma2, stream=None):
    """Per-stream SINR; a zero numerator gives zero SINR."""
    K, L = U.shape[:2]
    sigma2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (K,))
    V = stream_gains(H, M, U)
    power = np.abs(V) ** 2
    signal = power[np.arange(K)[:, None], np.arange(L)[None, :],
                   np.arange(K)[:, None], np.arange(L)[None, :]]
    denom = (power.sum(axis=(2, 3)) - signal
             + np.sum(np.abs(U) ** 2, axis=2) * sigma2[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(signal > 0, signal / denom, 0.0)
    return _pick(gamma, stream)


def mse_sinr_check(eps, gamma, rtol=1e-9):
    """True iff ``1/eps == 1 + gamma`` to relative tolerance ``rtol``."""
    eps = np.asarray(eps, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    return bool(np.all(np.abs(1 / eps - (1 + gamma)) <= rtol * (1 + gamma)))


def update_weights(eps, mu, mask=None):
    """MSE weights ``w = mu / (ln2 * eps)``.

    ``mu`` is per UE and broadcast over streams. Slots outside ``mask`` get
    zero weight.
    """
    eps = np.asarray(eps, dtype=float)
    if np.any(eps <= 0):
        raise DomainError("MSE must be positive to form weights")
    mu = np.asarray(mu, dtype=float)
    if mu.ndim == 1 and eps.ndim == 2:
        mu = mu[:, None]
    w = mu / (LN2 * eps)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    return w


def weighted_sum_rate(H, M, sigma2, mu, U=None, cluster=None):
    """``sum_k sum_l mu_k log2(1 + SINR_kl)`` in bits per channel use.

    With ``U=None`` the rate-optimal MMSE receivers are used.
    """
    if U is None:
        U = mmse_receiver(H, M, sigma2)
    gamma = compute_sinr(H, M, U, sigma2)
    if cluster is not None:
        gamma = np.where(cluster.stream_mask, gamma, 0.0)
    return float(np.sum(np.asarray(mu)[:, None] * np.log2(1 + gamma)))


def per_bs_power(M, b=None):
    """Transmit power of BS ``b`` (or all BSs as a (B,) array)."""
    p = np.sum(np.abs(M) ** 2, axis=(1, 2, 3))
    return p if b is None else float(p[b])


def matched_filter_init(H, cluster, power):
    """Feasible start: ``m = H^H e_l`` normalized, equal power per stream.

    Each BS splits its budget equally over the streams it serves.
    """
    B, K, nr, nt = H.shape
    L = cluster.max_streams
    M = np.zeros((B, K, L, nt), dtype=complex)
    for l in range(min(L, nr)):
        M[:, :, l, :] = H[:, :, l, :].conj()
    M = np.where(cluster.transmit_mask[..., None], M, 0)
    norms = np.linalg.norm(M, axis=3, keepdims=True)
    M = np.divide(M, norms, out=np.zeros_like(M), where=norms > 0)
    counts = cluster.transmit_mask.sum(axis=(1, 2))
    scale = np.sqrt(np.asarray(power, dtype=float) / np.maximum(counts, 1))
    return M * scale[:, None, None, None]
