"""Direct estimation of transceivers from composite pilot observations.

Instead of stream-specific effective channels, BSs observe the composite
uplink training matrix ``R_b`` (N_T x S) and UEs the composite downlink
matrix ``T_k`` (N_R x S). The decentralized solvers here mirror the ones in
:mod:`jpcomp.sse` with every effective-channel term replaced by its pilot
correlation. With orthogonal noiseless pilots every quantity equals ``S``
times its stream-specific counterpart, so the iterates coincide.

Stream-indexed S-vectors are stored as columns, ``c[:, k, l] = R^H m_kl``.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import system
from .errors import ConfigurationError
from .sse import (DecentralizedSolver, SgState, br_regulated_update,
                  feasible_projection, sg_step)
from .wmmse import BisectionSpec, dual_from_eig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PilotBook:
    """Uplink (``ul``) and downlink (``dl``) sequences, shape (K, L, S).

    Every sequence of an existing stream has squared norm ``S``; slots of
    missing streams are zero.
    """

    ul: np.ndarray
    dl: np.ndarray
    orthogonal: bool

    @property
    def length(self):
        return self.ul.shape[-1]


def _sequences(S, count, orthogonal, rng):
    if orthogonal:
        n = np.arange(S)
        return np.exp(-2j * np.pi * np.outer(np.arange(count), n) / S)
    qpsk = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2)
    return qpsk[rng.integers(0, 4, size=(count, S))]


def make_pilot_book(S, cluster, orthogonal=True, seed=None):
    """Pilot sequences for every stream of ``cluster``.

    Orthogonal books use distinct rows of the S-point DFT (pairwise inner
    products zero); otherwise unit-modulus QPSK symbols are drawn at random.
    Uplink and downlink books come from independent seeds.
    """
    if S < 1:
        raise ConfigurationError("pilot length must be at least 1")
    mask = cluster.stream_mask
    count = int(mask.sum())
    if orthogonal and S < count:
        raise ConfigurationError(
            f"{count} orthogonal pilots need length >= {count}, got {S}")
    seeds = np.random.SeedSequence(seed).spawn(2)
    books = []
    for s in seeds:
        seq = _sequences(S, count, orthogonal, np.random.default_rng(s))
        full = np.zeros(mask.shape + (S,), dtype=complex)
        full[mask] = seq
        books.append(full)
    return PilotBook(books[0], books[1], bool(orthogonal))


def _noise(rng, shape, power):
    if power == 0:
        return np.zeros(shape, dtype=complex)
    return np.sqrt(power / 2) * (rng.standard_normal(shape)
                                 + 1j * rng.standard_normal(shape))


def ul_training(H, U, W, book, noise_power=0.0, rng=None):
    """Composite uplink observations ``R_b = sum a_kl sqrt(w_kl) b_kl^H + N_b``."""
    a = np.einsum("bkrt,klr->bklt", H.conj(), U)
    R = np.einsum("bklt,kl,kls->bts", a, np.sqrt(W), book.ul.conj())
    return R + _noise(np.random.default_rng(rng), R.shape, noise_power)


def dl_training(H, M, book, noise_power=0.0, rng=None):
    """Composite downlink observations ``T_k = sum_il (sum_b H_bk m_bil) g_il + N_k``."""
    G = system.received_signals(H, M)
    T = np.einsum("kilr,ils->krs", G, book.dl)
    return T + _noise(np.random.default_rng(rng), T.shape, noise_power)


def de_mmse_receiver(T_k, book, k, noise_deficit=0.0, diagnostics=None):
    """Receivers of user ``k`` estimated from its downlink training matrix.

    ``u_kl = (T T^H + S * noise_deficit * I)^{-1} T g_kl^H``. The deficit is
    the part of the receiver noise power that the pilot noise does not
    already put into ``T T^H``; with noiseless pilots and
    ``noise_deficit = sigma_k^2`` the result is the exact MMSE receiver.

    Returns an (L, NR) array.
    """
    S = T_k.shape[1]
    cov = T_k @ T_k.conj().T + S * noise_deficit * np.eye(T_k.shape[0])
    rhs = T_k @ book.dl[k].conj().T
    return system._regularized_solve(cov, rhs, diagnostics, k).T


def de_estimated_mse(T, U, book):
    """MSE estimate ``1 - Re(u^H T g^H) / S`` per stream, shape (K, L)."""
    S = book.length
    proj = np.einsum("klr,krs,kls->kl", U.conj(), T, book.dl.conj())
    return 1 - proj.real / S


def de_br_solve(R_b, book, W, cbar, mask_b, power, spec=BisectionSpec()):
    """Best response of one BS from its uplink training matrix.

    ``m_kl = (R R^H + nu I)^{-1} R (sqrt(w_kl) b_kl - cbar_kl)`` where
    ``cbar[:, k, l] = sum_{j != b} R_j^H m_jkl`` comes from the last
    exchange. Returns ``(nu, beams_b)`` with ``beams_b`` of shape (K, L, NT).
    """
    target = np.sqrt(W)[:, :, None] * book.ul - np.moveaxis(cbar, 0, -1)
    return _solve_columns(R_b @ R_b.conj().T, np.einsum("ts,kls->klt", R_b, target),
                          mask_b, power, spec)


def _solve_columns(base, rhs, mask_b, power, spec):
    K, L, nt = rhs.shape
    out = np.zeros((K * L, nt), dtype=complex)
    idx = np.flatnonzero(mask_b.ravel())
    if idx.size == 0:
        return 0.0, out.reshape(K, L, nt)
    lam, V = np.linalg.eigh(base)
    nu, m = dual_from_eig(np.clip(lam, 0.0, None), V,
                          rhs.reshape(K * L, nt)[idx].T, power, spec)
    out[idx] = m.T
    return nu, out.reshape(K, L, nt)


def pilot_contributions(R, M):
    """``c[b, :, k, l] = R_b^H m_bkl``, shape (B, S, K, L)."""
    return np.einsum("bts,bklt->bskl", R.conj(), M)


def de_objective(R, book, W, M):
    """Direct-estimation objective, one term per active stream.

    Each term is ``1 - 2 Re(sqrt(w) b^H c) + |c|^2`` with
    ``c = sum_b R_b^H m_bkl``, i.e. the squared error
    ``|c - sqrt(w) b|^2`` with its constant replaced by one so that it
    lines up with the weighted-MSE objective.
    """
    c = pilot_contributions(R, M).sum(axis=0)
    lin = np.einsum("kl,skl,kls->kl", np.sqrt(W), c, book.ul.conj()).real
    quad = np.sum(np.abs(c) ** 2, axis=0)
    active = np.any(book.ul != 0, axis=-1)
    return float(np.sum(np.where(active, 1 - 2 * lin + quad, 0.0)))


def de_sg_gradient(R, book, W, M, b=None, kl=None, symbol_level=False):
    """Gradient of :func:`de_objective` with respect to the beams.

    ``L_bkl = 2 R_b (sum_j R_j^H m_jkl - sqrt(w_kl) b_kl)``, twice the
    derivative with respect to ``conj(m)``. ``symbol_level`` accumulates the
    same sum one training symbol at a time.
    """
    c = pilot_contributions(R, M).sum(axis=0)
    resid = c - np.moveaxis(np.sqrt(W)[:, :, None] * book.ul, -1, 0)
    if symbol_level:
        G = np.zeros(M.shape, dtype=complex)
        for i in range(R.shape[-1]):
            G += 2 * np.einsum("bt,kl->bklt", R[:, :, i], resid[i])
    else:
        G = 2 * np.einsum("bts,skl->bklt", R, resid)
    if b is not None:
        G = G[b] if kl is None else G[b, kl[0], kl[1]]
    return G


def de_sg_step(state, gradients, M, power):
    """Gradient step on direct-estimation gradients (same rule as :func:`sg_step`)."""
    return sg_step(state, gradients, M, power)


@dataclass
class DeAdmmState:
    rho: float
    beta_dual: float
    s_bar: np.ndarray
    lambda_bar: np.ndarray

    def __post_init__(self):
        if self.rho <= 0 or self.beta_dual <= 0:
            raise ValueError("rho and beta_dual must be positive")


def de_admm_iterate(state, R, book, W, M, power, cluster, exchange=None,
                    spec=BisectionSpec()):
    """One DE-ADMM cycle: local solves, consensus update and dual step.

    BS ``b`` keeps its current pilot contribution and takes its share of the
    consensus gap, ``q_b = c_b + (s_bar - lambda - sum_j c_j) / |B_k|``, then
    solves ``(rho R R^H + nu I) m = R (sqrt(w) b + rho q_b)``. Afterwards
    ``s_bar = rho' / (1 + rho') (sum_b c_b + lambda)`` with
    ``rho' = rho / |B_k|`` and ``lambda += beta (sum_b c_b - s_bar)``.

    Returns ``(M', state')``.
    """
    counts = np.maximum(cluster.serving.sum(axis=0), 1).astype(float)
    c = pilot_contributions(R, M)
    delivered = c if exchange is None else exchange(c)
    seen = delivered.sum(axis=0)[None] - delivered + c
    gap = state.s_bar[None] - state.lambda_bar[None] - seen
    q = c + gap / counts[None, None, :, None]
    target = np.sqrt(W)[:, :, None] * book.ul
    new = np.empty_like(M)
    mask = cluster.transmit_mask
    for b in range(M.shape[0]):
        rhs = np.einsum("ts,kls->klt", R[b],
                        target + state.rho * np.moveaxis(q[b], 0, -1))
        _, new[b] = _solve_columns(state.rho * R[b] @ R[b].conj().T, rhs,
                                   mask[b], power[b], spec)
    r = pilot_contributions(R, new).sum(axis=0)
    rho_c = state.rho / counts[None, :, None]
    s_bar = rho_c / (1 + rho_c) * (r + state.lambda_bar)
    lam = state.lambda_bar + state.beta_dual * (r - s_bar)
    return new, DeAdmmState(state.rho, state.beta_dual, s_bar, lam)


def ls_wmmse_equivalence_check(H, M, U, W, sigma2, book, rtol=1e-8,
                               pilot_noise=0.0, rng=None):
    """Compare the DE objective with the weighted-MSE objective.

    With orthogonal noiseless pilots,
    ``(DE - n) / S + sum w (1 + sigma^2 |u|^2) == sum w eps`` where ``n`` is
    the number of streams. Returns True when this holds to ``rtol``.
    """
    R = ul_training(H, U, W, book, pilot_noise, rng)
    S = book.length
    mask = np.any(book.ul != 0, axis=-1)
    n = int(mask.sum())
    de = de_objective(R, book, W, M)
    noise = sigma2[:, None] * np.sum(np.abs(U) ** 2, axis=-1)
    lhs = (de - n) / S + np.sum(np.where(mask, W * (1 + noise), 0))
    eps = system.compute_mse(H, M, U, sigma2)
    rhs = float(np.sum(np.where(mask, W * eps, 0)))
    return bool(abs(lhs - rhs) <= rtol * max(abs(rhs), 1e-300))


class DirectEstimationSolver(DecentralizedSolver):
    """Decentralized solver that sees channels only through pilots.

    Parameters
    ----------
    book : PilotBook
    pilot_noise : float
        Noise variance per pilot observation entry.
    noise_seed : int, optional
        Seed of the pilot noise stream.
    """

    def __init__(self, scenario, book, pilot_noise=0.0, noise_seed=None, **kw):
        self.book = book
        self.pilot_noise = pilot_noise
        self.rng = np.random.default_rng(noise_seed)
        self.training = None
        super().__init__(scenario, **kw)

    def update_receivers(self):
        self.training = dl_training(self.channels, self.beams, self.book,
                                    self.pilot_noise, self.rng)
        deficit = np.maximum(self.scenario.noise - self.pilot_noise, 0.0)
        U = np.zeros((self.cluster.num_users, self.cluster.max_streams,
                      self.scenario.nr), dtype=complex)
        for k in range(self.cluster.num_users):
            U[k] = de_mmse_receiver(self.training[k], self.book, k, deficit[k])
        self.receivers = U

    def refresh_weights(self):
        eps = de_estimated_mse(self.training, self.receivers, self.book)
        mask = self.cluster.stream_mask
        # estimates can leave (0, 1] under pilot noise
        eps = np.clip(np.where(mask, eps, 1.0), 1e-12, None)
        self.weights = system.update_weights(eps, self.scenario.priority, mask)

    def uplink(self):
        return ul_training(self.channels, self.receivers, self.weights,
                           self.book, self.pilot_noise, self.rng)

    def seen_pilot_contributions(self, R):
        c = pilot_contributions(R, self.beams)
        delivered = self.exchange(c)
        return c, delivered.sum(axis=0)[None] - delivered + c


class DirectBestResponse(DirectEstimationSolver):
    name = "de_br"

    def __init__(self, scenario, book, alpha=0.5, **kw):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        super().__init__(scenario, book, **kw)

    def bs_update(self):
        R = self.uplink()
        c, seen = self.seen_pilot_contributions(R)
        solved = np.empty_like(self.beams)
        mask = self.cluster.transmit_mask
        for b in range(R.shape[0]):
            _, solved[b] = de_br_solve(R[b], self.book, self.weights,
                                       seen[b] - c[b], mask[b],
                                       self.scenario.power[b], self.spec)
        self.beams = br_regulated_update(self.beams, solved, self.alpha)


class DirectAdmm(DirectEstimationSolver):
    """DE-ADMM; the dual step defaults to ``1 / rho``."""

    name = "de_admm"

    def __init__(self, scenario, book, rho=3.0, beta_dual=None, **kw):
        super().__init__(scenario, book, **kw)
        self.rho = rho
        self.beta_dual = 1.0 / rho if beta_dual is None else beta_dual
        self.clear_consensus()

    def clear_consensus(self):
        shape = (self.book.length, self.cluster.num_users, self.cluster.max_streams)
        self.state = DeAdmmState(self.rho, self.beta_dual,
                                 np.zeros(shape, dtype=complex),
                                 np.zeros(shape, dtype=complex))
        self.residual = np.inf

    def reset(self, beams):
        super().reset(beams)
        self.clear_consensus()

    def bs_update(self):
        R = self.uplink()
        self.beams, self.state = de_admm_iterate(
            self.state, R, self.book, self.weights, self.beams,
            self.scenario.power, self.cluster, self.exchange, self.spec)
        r = pilot_contributions(R, self.beams).sum(axis=0)
        self.residual = float(np.max(np.abs(r - self.state.s_bar)))

    def diagnostics(self):
        return {"consensus_residual": self.residual}


class DirectGradient(DirectEstimationSolver):
    """DE-SG: gradient steps on the pilot objective, scaled by ``1 / S``."""

    name = "de_sg"

    def __init__(self, scenario, book, alpha=1e-2, beta_dual=1e-2, omega=0.5,
                 normalize=True, power_control="both", norm_power=1.0, **kw):
        if power_control not in ("dual", "projection", "both"):
            raise ValueError(f"unknown power control {power_control!r}")
        self.state = SgState(alpha, beta_dual, omega, normalize, norm_power)
        self.power_control = power_control
        self.gradient_norm = np.nan
        super().__init__(scenario, book, **kw)

    def reset(self, beams):
        super().reset(beams)
        s = self.state
        self.state = SgState(s.alpha, s.beta_dual, s.omega, s.normalize,
                             s.norm_power)

    def bs_update(self):
        R = self.uplink()
        c, seen = self.seen_pilot_contributions(R)
        resid = seen - np.moveaxis(np.sqrt(self.weights)[:, :, None]
                                   * self.book.ul, -1, 0)[None]
        G = 2 * np.einsum("bts,bskl->bklt", R, resid) / self.book.length
        G = G * self.cluster.transmit_mask[..., None]
        self.gradient_norm = float(np.sqrt(np.sum(np.abs(G) ** 2)))
        state = self.state
        if self.power_control == "projection":
            state = SgState(state.alpha, 0.0, state.omega, state.normalize,
                            state.norm_power, np.zeros(G.shape[0]),
                            state.momentum)
        M, self.state = de_sg_step(state, G, self.beams, self.scenario.power)
        if self.power_control != "dual":
            M = feasible_projection(M, self.scenario.power)
        self.beams = M

    def diagnostics(self):
        return {"gradient_norm": self.gradient_norm}


DE_SOLVERS = {"de_br": DirectBestResponse, "de_admm": DirectAdmm,
              "de_sg": DirectGradient}
