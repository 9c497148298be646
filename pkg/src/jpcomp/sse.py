"""Decentralized transmit beamforming with stream-specific estimation.

Each BS knows its own effective channels ``H_{b,k}^H u_{k,l}`` and learns
the other BSs' contributions to every received stream through one exchange
round per iteration. Three local update rules share this structure:
best response (:class:`BestResponse`), ADMM (:class:`Admm`) and a gradient
method with dual power control (:class:`StochasticGradient`).

Tensor conventions follow :mod:`jpcomp.system`. Contribution tensors are
indexed ``[b, k, l, i, j]``: the part of stream ``(i, j)`` that BS ``b``
delivers to receive stream ``(k, l)``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import system
from .wmmse import (BisectionSpec, contributions, dual_from_eig, solve_block,
                    transmit_directions)

log = logging.getLogger(__name__)


def _served(cluster):
    """Serving mask per transmitted stream, shape (B, K, L) -> (B, 1, 1, K, L)."""
    return cluster.transmit_mask[:, None, None]


def combined_fixed_terms(H, U, M):
    """Combined received signals ``sum_r u_kl^H H_{r,k} m_{r,i,j}``, (K, L, K, L)."""
    return contributions(transmit_directions(H, U), M).sum(axis=0)


def br_fixed_terms(H, U, M_prev, b, kl=None, ij=None, combined=None):
    """Cooperating-BS terms that BS ``b`` holds fixed in its best response.

    ``c[k, l, i, j] = sum_{r != b} u_kl^H H_{r,k} m_{r,i,j}``. Beams of BSs
    outside the serving set of user ``i`` are zero, so the sum runs over
    the serving set minus ``b``.

    Parameters
    ----------
    combined : ndarray, optional
        Combined signals from :func:`combined_fixed_terms`; when given, the
        result is formed by subtracting BS ``b``'s own part.
    kl, ij : tuple, optional
        Select one receiving and one transmitted stream.
    """
    a_b = np.einsum("krt,klr->klt", H[b].conj(), U)
    own = np.einsum("klt,ijt->klij", a_b.conj(), M_prev[b])
    if combined is None:
        combined = combined_fixed_terms(H, U, M_prev)
    c = combined - own
    if kl is not None:
        c = c[kl[0], kl[1]]
        if ij is not None:
            c = c[ij[0], ij[1]]
    return c


def br_local_solve(H, U, W, fixed, cluster, b, power, spec=BisectionSpec()):
    """Best-response beams of BS ``b`` for fixed cooperating terms.

    Returns ``(nu_b, beams_b)`` where ``beams_b`` has shape (K, L, NT).
    """
    a_b = np.einsum("krt,klr->klt", H[b].conj(), U)
    return solve_block(a_b, W, fixed, cluster.transmit_mask[b], power, spec)


def br_regulated_update(previous, solved, alpha):
    """Move ``alpha`` of the way from ``previous`` towards ``solved``."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    return (1 - alpha) * previous + alpha * solved


def admm_s_update(received_sum, lambda_bar, rho):
    """Consensus update ``rho / (1 + rho) * (received + lambda)``.

    ``rho`` may be an array broadcasting against the consensus variables.
    """
    if np.any(np.asarray(rho) <= 0):
        raise ValueError("rho must be positive")
    return rho / (1 + rho) * (received_sum + lambda_bar)


def admm_dual_update(lambda_bar, received_sum, s_bar):
    """Scaled dual ascent ``lambda + received - s_bar``."""
    return lambda_bar + received_sum - s_bar


def admm_targets(weighted, s_bar, lambda_bar, b, counts):
    """Penalty targets of BS ``b`` in the shared-consensus form.

    ``weighted[g]`` holds ``sqrt(w_kl) u_kl^H H_{g,k} m_{g,i,j}`` and
    ``counts[i]`` the serving-set size of user ``i``. BS ``b`` keeps its
    current contribution and takes its share of the consensus gap:
    ``x_b + (s_bar - lambda_bar - r) / |B_i|`` with ``r = sum_g x_g``.
    """
    gap = s_bar - lambda_bar - weighted.sum(axis=0)
    return weighted[b] + gap / counts[None, None, :, None]


def admm_local_solve(H, U, W, q, cluster, b, power, rho, spec=BisectionSpec()):
    """Minimize own MSE terms plus the ADMM penalty at BS ``b``.

    Solves ``(rho sum w a a^H + nu I) m_ij = w_ij a_ij + f_ij`` with
    ``f_ij = rho sum_kl sqrt(w_kl) a_kl q[k, l, i, j]`` and ``nu`` found by
    the power-dual search. Returns ``(nu_b, beams_b)``.
    """
    a_b = np.einsum("krt,klr->klt", H[b].conj(), U)
    K, L, nt = a_b.shape
    base = rho * np.einsum("kl,klt,kls->ts", W, a_b, a_b.conj())
    f = rho * np.einsum("kl,klt,klij->ijt", np.sqrt(W), a_b, q)
    rhs = W[:, :, None] * a_b + f
    idx = np.flatnonzero(cluster.transmit_mask[b].ravel())
    out = np.zeros((K * L, nt), dtype=complex)
    if idx.size == 0:
        return 0.0, out.reshape(K, L, nt)
    lam, V = np.linalg.eigh(base)
    nu, m = dual_from_eig(np.clip(lam, 0.0, None), V,
                          rhs.reshape(K * L, nt)[idx].T, power, spec)
    out[idx] = m.T
    return nu, out.reshape(K, L, nt)


def consensus_split(weighted, lambda_per_bs, s_bar, lambda_bar, cluster):
    """Per-BS auxiliaries ``s_b`` that eliminate the individual consensus terms.

    ``s_b = a_b + (s_bar - lambda_bar - r) / |B_i|`` with
    ``a_b = lambda_b + weighted_b`` and ``r = sum_b weighted_b``. Entries of
    BSs outside the serving set of the transmitted stream are zero.

    Returns
    -------
    s : ndarray, shape (B, K, L, K, L)
    a : ndarray, shape (B, K, L, K, L)
    """
    served = _served(cluster)
    count = np.maximum(cluster.serving.sum(axis=0), 1)[None, None, None, :, None]
    r = weighted.sum(axis=0)
    a = np.where(served, lambda_per_bs + weighted, 0)
    s = np.where(served, a + (s_bar - lambda_bar - r) / count, 0)
    return s, a


def consensus_split_check(per_bs_s, s_bar, a_terms, cluster, tol=1e-12):
    """Check the consensus and dual identities of the eliminated form.

    Returns True when ``sum_b s_b == s_bar`` and the reconstructed per-BS
    duals ``a_b - s_b`` agree across the serving set, both to ``tol``
    (relative to the largest magnitude involved, floored at one).
    """
    served = np.broadcast_to(_served(cluster), per_bs_s.shape)
    scale = max(1.0, np.max(np.abs(per_bs_s)), np.max(np.abs(s_bar)))
    if np.max(np.abs(per_bs_s.sum(axis=0) - s_bar)) > tol * scale:
        return False
    duals = a_terms - per_bs_s
    ref = np.where(served, duals, 0).sum(axis=0) / np.maximum(served.sum(axis=0), 1)
    spread = np.where(served, np.abs(duals - ref), 0)
    return bool(np.max(spread) <= tol * scale)


def sg_gradient(H, U, W, M, cluster=None, b=None, kl=None):
    """Gradient of the weighted-MSE surrogate with respect to the beams.

    ``G[b, k, l] = 2 sum_iz w_iz a_{b,iz} (sum_g a_{g,iz}^H m_{g,k,l})
    - 2 w_kl a_{b,kl}`` with ``a_{b,kl} = H_{b,k}^H u_kl``; this is twice the
    derivative with respect to ``conj(m)``, so a real perturbation ``d``
    changes the objective by ``Re(G^H d)`` to first order.

    Returns the full (B, K, L, NT) tensor, masked to served streams when
    ``cluster`` is given, or one vector when ``b`` and ``kl`` are set.
    """
    a = transmit_directions(H, U)
    received = contributions(a, M).sum(axis=0)
    G = 2 * np.einsum("iz,bizt,izkl->bklt", W, a, received) \
        - 2 * W[None, :, :, None] * a
    if cluster is not None:
        G = G * cluster.transmit_mask[..., None]
    if b is not None:
        G = G[b] if kl is None else G[b, kl[0], kl[1]]
    return G


def sg_objective(H, U, W, M):
    """Weighted-MSE surrogate without constants, the function behind :func:`sg_gradient`."""
    a = transmit_directions(H, U)
    g = contributions(a, M).sum(axis=0)
    quad = np.einsum("kl,klij->", W, np.abs(g) ** 2)
    lin = 2 * np.sum(W * np.einsum("klkl->kl", g).real)
    return float(quad - lin)


@dataclass
class SgState:
    """Gradient method settings and memory.

    ``normalize`` scales each stream's step by its stacked gradient norm
    raised to ``norm_power``.
    """

    alpha: float = 1e-2
    beta_dual: float = 1e-2
    omega: float = 0.5
    normalize: bool = True
    norm_power: float = 1.0
    nu: np.ndarray = None
    momentum: np.ndarray = None

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be non-negative")


def sg_step(state, G, M, power):
    """One momentum gradient step with the dual power penalty.

    Returns ``(M', state')``; ``state'`` carries the updated momentum and the
    per-BS duals ``nu_b <- max(0, nu_b + beta (power_b - P_b))``.
    """
    B = M.shape[0]
    nu = np.zeros(B) if state.nu is None else state.nu
    mom = np.zeros_like(M) if state.momentum is None else state.momentum
    mom = G + state.omega * mom
    step = np.full(M.shape[1:3], state.alpha)
    if state.normalize:
        gnorm = np.sqrt(np.sum(np.abs(G) ** 2, axis=(0, 3)))
        step = np.divide(state.alpha, gnorm ** state.norm_power,
                         out=np.zeros_like(gnorm), where=gnorm > 0)
    M = M - step[None, :, :, None] * (mom + nu[:, None, None, None] * M)
    nu = np.maximum(0.0, nu + state.beta_dual * (system.per_bs_power(M)
                                                 - np.asarray(power)))
    new = SgState(state.alpha, state.beta_dual, state.omega, state.normalize,
                  state.norm_power, nu, mom)
    return M, new


def feasible_projection(M, power):
    """Scale each BS whose power exceeds its budget back onto the budget."""
    p = system.per_bs_power(M)
    budget = np.broadcast_to(np.asarray(power, dtype=float), p.shape)
    scale = np.ones_like(p)
    over = p > budget
    scale[over] = np.sqrt(budget[over] / p[over])
    return M * scale[:, None, None, None]


def identity_exchange(tensors):
    """Loss-free delivery of per-BS contribution tensors."""
    return tensors


class DecentralizedSolver:
    """Shared loop of the decentralized solvers.

    One call to :meth:`step` is a BS update followed by a UE update: every
    UE refreshes its MMSE receiver, and the MSE weights are refreshed only
    when ``refresh_weights`` is set (frame-based runs refresh them once per
    frame through :meth:`refresh_weights`).

    Parameters
    ----------
    scenario : Scenario
    beams : ndarray, optional
        Feasible initial beams; matched filters by default.
    exchange : callable, optional
        Maps the per-BS contribution tensors to what the other BSs receive
        (e.g. after quantization). Each BS always uses its own part exactly.
    """

    name = "base"

    def __init__(self, scenario, beams=None, exchange=None,
                 refresh_weights=True, spec=BisectionSpec()):
        self.scenario = scenario
        self.exchange = exchange or identity_exchange
        self.auto_weights = refresh_weights
        self.spec = spec
        if beams is None:
            beams = system.matched_filter_init(scenario.channels,
                                               scenario.cluster, scenario.power)
        self.beams = np.array(beams, dtype=complex)
        self.receivers = None
        self.weights = None
        self.iteration = 0
        self.stream_active = None
        self.update_receivers()
        self.refresh_weights()

    # -- shared pieces -------------------------------------------------
    @property
    def channels(self):
        return self.scenario.channels

    @property
    def cluster(self):
        return self.scenario.cluster

    def set_channels(self, H):
        """Install a new channel realization (keeps beams and solver memory)."""
        self.scenario = self.scenario.with_channels(H)

    def update_receivers(self):
        self.receivers = system.mmse_receiver(self.channels, self.beams,
                                              self.scenario.noise)

    def refresh_weights(self):
        eps = system.compute_mse(self.channels, self.beams, self.receivers,
                                 self.scenario.noise)
        mask = self.cluster.stream_mask
        self.weights = system.update_weights(np.where(mask, eps, 1.0),
                                             self.scenario.priority, mask)

    def reset(self, beams):
        """Restart from ``beams`` (solver memory cleared, all streams allowed)."""
        self.beams = np.array(beams, dtype=complex)
        self.stream_active = None
        self.update_receivers()
        self.refresh_weights()

    def suppress(self, active):
        """Keep the streams outside ``active`` (K, L) at zero from now on."""
        self.stream_active = np.asarray(active, dtype=bool)
        self.beams = np.where(self.stream_active[None, :, :, None], self.beams, 0)
        self.update_receivers()

    def seen_contributions(self, own_weighting=None):
        """Per-BS view of the summed received terms.

        Returns ``(E, seen)`` where ``E[b]`` is BS ``b``'s exact contribution
        and ``seen[b]`` the total as known by BS ``b``: its own part plus
        the delivered parts of the others.
        """
        a = transmit_directions(self.channels, self.receivers)
        E = contributions(a, self.beams)
        delivered = self.exchange(E)
        total = delivered.sum(axis=0)
        seen = total[None] - delivered + E
        return a, E, seen

    def sum_rate(self):
        return system.weighted_sum_rate(self.channels, self.beams,
                                        self.scenario.noise,
                                        self.scenario.priority,
                                        cluster=self.cluster)

    def step(self):
        self.bs_update()
        if self.stream_active is not None:
            self.beams = np.where(self.stream_active[None, :, :, None],
                                  self.beams, 0)
        self.update_receivers()
        if self.auto_weights:
            self.refresh_weights()
        self.iteration += 1

    def bs_update(self):
        raise NotImplementedError

    def diagnostics(self):
        return {}


class BestResponse(DecentralizedSolver):
    """Jacobi best response with the regulated step ``alpha``."""

    name = "br"

    def __init__(self, scenario, alpha=0.5, **kw):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self.nu = None
        super().__init__(scenario, **kw)

    def bs_update(self):
        a, E, seen = self.seen_contributions()
        W = self.weights
        B = self.channels.shape[0]
        solved = np.empty_like(self.beams)
        self.nu = np.zeros(B)
        mask = self.cluster.transmit_mask
        for b in range(B):
            fixed = seen[b] - E[b]
            self.nu[b], solved[b] = solve_block(a[b], W, fixed, mask[b],
                                                self.scenario.power[b], self.spec)
        self.beams = br_regulated_update(self.beams, solved, self.alpha)


class Admm(DecentralizedSolver):
    """Consensus ADMM on the summed received signals.

    ``s_bar`` and ``lambda_bar`` have shape (K, L, K, L) and start at zero.
    ``rho`` is the penalty of the per-BS closed form; the consensus update
    of a stream served by ``|B_i|`` BSs uses ``rho / |B_i|``, which is the
    cluster-size factor that the shared form absorbs. After each BS update
    the residual ``max |r - s_bar|`` is recorded in ``residual``.
    """

    name = "admm"

    def __init__(self, scenario, rho=3.0, track_split=False, **kw):
        if rho <= 0:
            raise ValueError("rho must be positive")
        self.rho = rho
        self.track_split = track_split
        self.split_ok = []
        super().__init__(scenario, **kw)
        self.clear_consensus()

    @property
    def counts(self):
        return np.maximum(self.cluster.serving.sum(axis=0), 1).astype(float)

    @property
    def consensus_rho(self):
        """Per-stream penalty of the consensus update, shape (K, 1)."""
        return self.rho / self.counts[:, None]

    def clear_consensus(self):
        K, L = self.cluster.num_users, self.cluster.max_streams
        self.s_bar = np.zeros((K, L, K, L), dtype=complex)
        self.lambda_bar = np.zeros_like(self.s_bar)
        self.residual = np.inf

    def reset(self, beams):
        super().reset(beams)
        self.clear_consensus()

    def targets(self, E, seen):
        """Targets ``q_b`` per BS, each from that BS's own view of the sums."""
        sw = np.sqrt(self.weights)[:, :, None, None]
        gap = self.s_bar - self.lambda_bar - sw[None] * seen
        return sw[None] * E + gap / self.counts[None, None, None, :, None]

    def consensus_update(self, weighted):
        r = weighted.sum(axis=0)
        old_lambda = self.lambda_bar
        self.s_bar = admm_s_update(r, self.lambda_bar, self.consensus_rho)
        self.lambda_bar = admm_dual_update(self.lambda_bar, r, self.s_bar)
        self.residual = float(np.max(np.abs(r - self.s_bar)))
        if self.track_split:
            self.split_ok.append(self.check_split(weighted, old_lambda))

    def bs_update(self):
        a, E, seen = self.seen_contributions()
        q = self.targets(E, seen)
        for b in range(self.channels.shape[0]):
            _, self.beams[b] = admm_local_solve(
                self.channels, self.receivers, self.weights, q[b], self.cluster,
                b, self.scenario.power[b], self.rho, self.spec)
        sw = np.sqrt(self.weights)[None, :, :, None, None]
        self.consensus_update(sw * contributions(a, self.beams))

    def check_split(self, weighted, old_lambda):
        """Rebuild the per-BS auxiliaries and check their identities."""
        served = _served(self.cluster)
        count = self.counts[None, None, None, :, None]
        lam_b = np.where(served, old_lambda[None] / count, 0)
        s, a = consensus_split(weighted, lam_b, self.s_bar, old_lambda,
                                self.cluster)
        return consensus_split_check(s, self.s_bar, a, self.cluster)

    def diagnostics(self):
        return {"consensus_residual": self.residual}


class StochasticGradient(DecentralizedSolver):
    """Momentum gradient steps with dual and/or projection power control.

    ``power_control`` is one of ``"dual"``, ``"projection"`` or ``"both"``.
    """

    name = "sg"

    def __init__(self, scenario, alpha=1e-2, beta_dual=1e-2, omega=0.5,
                 normalize=True, power_control="both", norm_power=1.0, **kw):
        if power_control not in ("dual", "projection", "both"):
            raise ValueError(f"unknown power control {power_control!r}")
        self.state = SgState(alpha, beta_dual, omega, normalize, norm_power)
        self.power_control = power_control
        self.gradient_norm = np.nan
        super().__init__(scenario, **kw)

    def reset(self, beams):
        super().reset(beams)
        s = self.state
        self.state = SgState(s.alpha, s.beta_dual, s.omega, s.normalize,
                             s.norm_power)

    def gradient(self):
        a, E, seen = self.seen_contributions()
        W = self.weights
        # BS b forms its gradient from its own view of the received sums
        G = 2 * np.einsum("iz,bizt,bizkl->bklt", W, a, seen) \
            - 2 * W[None, :, :, None] * a
        return G * self.cluster.transmit_mask[..., None]

    def bs_update(self):
        G = self.gradient()
        self.gradient_norm = float(np.sqrt(np.sum(np.abs(G) ** 2)))
        state = self.state
        if self.power_control == "projection":
            state = SgState(state.alpha, 0.0, state.omega, state.normalize,
                            state.norm_power, np.zeros(G.shape[0]),
                            state.momentum)
        M, self.state = sg_step(state, G, self.beams, self.scenario.power)
        if self.power_control != "dual":
            M = feasible_projection(M, self.scenario.power)
        self.beams = M

    def diagnostics(self):
        return {"gradient_norm": self.gradient_norm}


SOLVERS = {"br": BestResponse, "admm": Admm, "sg": StochasticGradient}


@dataclass
class SseTrace:
    sum_rate: list = field(default_factory=list)
    per_bs_power: list = field(default_factory=list)
    consensus_residual: list = field(default_factory=list)
    gradient_norm: list = field(default_factory=list)
    backhaul_scalars: list = field(default_factory=list)


def run_sse(algorithm, scenario, iters, exchange_policy="backhaul_offload",
            beams=None, exchange=None, **params):
    """Run one decentralized solver on a static channel.

    Parameters
    ----------
    algorithm : {"br", "admm", "sg"}
    exchange_policy : {"backhaul_offload", "feedback_channel"}
        Only changes the signaling accounting; the iterates are identical.
    **params
        Solver settings (``alpha``, ``rho``, ``beta_dual`` ...).

    Returns
    -------
    (solver, SseTrace)
    """
    from .signaling import account_exchange

    key = algorithm.lower()
    if key not in SOLVERS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    solver = SOLVERS[key](scenario, beams=beams, exchange=exchange, **params)
    per_iter = account_exchange(exchange_policy, scenario.cluster,
                                scenario.nt, scenario.nr)
    trace = SseTrace()
    for _ in range(iters):
        solver.step()
        trace.sum_rate.append(solver.sum_rate())
        trace.per_bs_power.append(system.per_bs_power(solver.beams))
        diag = solver.diagnostics()
        trace.consensus_residual.append(diag.get("consensus_residual", np.nan))
        trace.gradient_norm.append(diag.get("gradient_norm", np.nan))
        trace.backhaul_scalars.append(per_iter["total"])
    return solver, trace
