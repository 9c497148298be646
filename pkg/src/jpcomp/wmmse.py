"""Centralized weighted-MMSE transceiver design under per-BS power budgets."""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import system
from .errors import ConvergenceError

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class BisectionSpec:
    """Search settings for the per-BS power dual ``nu_b``.

    ``dual_upper=None`` starts from the eigenvalue bracket
    ``[sqrt(|p|^2/P) - lambda_max, sqrt(|p|^2/P)]``, which always contains
    the root. An explicit upper end is doubled until the power drops below
    the budget.
    """

    dual_lower: float = 0.0
    dual_upper: float = None
    tolerance: float = 1e-10
    max_iters: int = 200

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.dual_upper is not None and self.dual_upper < self.dual_lower:
            raise ValueError("dual_upper must not be below dual_lower")


@dataclass
class SolveReport:
    objective_trace: list = field(default_factory=list)
    inner_sweeps: list = field(default_factory=list)
    dual_values: np.ndarray = None
    converged: bool = False


def bisect_power_dual(base, rhs, budget, spec=BisectionSpec()):
    """Solve ``m = (base + nu I)^{-1} p`` with the smallest feasible ``nu``.

    Parameters
    ----------
    base : ndarray, shape (N, N)
        Hermitian positive semidefinite part of the transmit covariance.
    rhs : ndarray, shape (N, S)
        One right-hand side per stream served by the BS.
    budget : float
        Power budget ``P_b``.

    Returns
    -------
    nu : float
        Zero when the unconstrained solution fits the budget, otherwise the
        dual value with ``|power - budget| <= tolerance * budget``.
    beams : ndarray, shape (N, S)

    Notes
    -----
    The power is evaluated in the eigenbasis of ``base``, so every trial
    ``nu`` costs O(N S). Trial points come from a Newton step on
    ``1/sqrt(power)`` (nearly linear in ``nu``) whenever it stays inside
    the current bracket, and from plain bisection otherwise.
    """
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.ndim == 1:
        return _squeeze(bisect_power_dual(base, rhs[:, None], budget, spec))
    lam, V = np.linalg.eigh(base)
    return dual_from_eig(np.clip(lam, 0.0, None), V, rhs, budget, spec)


def dual_from_eig(lam, V, rhs, budget, spec=BisectionSpec(), nu0=None):
    """:func:`bisect_power_dual` with a precomputed eigendecomposition.

    ``nu0`` is an optional warm start (for instance the dual of the previous
    sweep); it only changes the first trial point, not the answer.
    """
    nu, y = dual_in_eigbasis(lam, V.conj().T @ rhs, budget, spec, nu0)
    return nu, V @ y


def dual_in_eigbasis(lam, z, budget, spec=BisectionSpec(), nu0=None):
    """Core of the dual search with ``base = diag(lam)`` and rotated rhs ``z``.

    Returns ``(nu, z / (lam + nu))``. At ``nu = 0`` the rows of eigenvalues
    below ``1e-12 lam_max`` are zero.
    """
    z2 = np.einsum("ts,ts->t", z.real, z.real) + np.einsum("ts,ts->t", z.imag, z.imag)
    total = z2.sum()

    scale = lam[-1]
    null = lam <= 1e-12 * scale

    def beams(nu):
        if nu > 0:
            return z / (lam + nu)[:, None]
        # without a dual the null space must carry nothing, including the
        # rounding-level components of z that the feasibility test ignores
        inv = np.divide(1.0, lam, out=np.zeros_like(lam), where=~null)
        return inv[:, None] * z

    if total == 0.0:
        return 0.0, np.zeros_like(z)

    if scale > 0 and not null[0]:
        if np.dot(z2, lam ** -2.0) <= budget:
            return 0.0, z / lam[:, None]
    else:
        if not np.any(z2[null] > 1e-24 * total):
            if np.sum(z2[~null] / lam[~null] ** 2) <= budget:
                return 0.0, beams(0.0)

    def power(nu):
        return float(np.dot(z2, (lam + nu) ** -2.0))

    # power(nu) lies between total/(lam_max+nu)^2 and total/(lam_min+nu)^2,
    # which pins the root inside [sqrt(total/P) - lam_max, sqrt(total/P)].
    root = np.sqrt(total / budget)
    lo = max(spec.dual_lower, root - scale, 0.0)
    hi = spec.dual_upper
    if hi is None or hi <= lo:
        hi = max(root, lo)
    while power(hi) > budget:
        lo, hi = hi, 2 * hi
    target = 1 / np.sqrt(budget)
    span = 4 * _EPS
    if nu0 is not None and lo < nu0 < hi:  # NaN falls through
        nu = nu0
    else:
        nu = lo if lo > 0 else hi
    for _ in range(spec.max_iters):
        d = lam + nu
        p = float(np.dot(z2, d ** -2.0))
        if abs(p - budget) <= spec.tolerance * budget:
            return nu, beams(nu)
        if p > budget:
            lo = nu
        else:
            hi = nu
        if hi - lo <= span * hi:
            return hi, beams(hi)
        dp = 2 * float(np.dot(z2, d ** -3.0))
        step = nu - (p ** -0.5 - target) * 2 * p ** 1.5 / dp
        nu = step if lo < step < hi else 0.5 * (lo + hi)
    raise ConvergenceError("power-dual search did not converge",
                           best=(hi, beams(hi)))


def _squeeze(result):
    nu, m = result
    return nu, m[:, 0]


def transmit_directions(H, U):
    """``a[b, k, l] = H[b, k]^H u[k, l]``, shape (B, K, L, NT)."""
    return np.einsum("bkrt,klr->bklt", H.conj(), U)


def contributions(a, M):
    """Per-BS received terms ``E[b, k, l, i, j] = a[b,k,l]^H m[b,i,j]``."""
    return np.einsum("bklt,bijt->bklij", a.conj(), M)


def block_covariance(a_b, w):
    """``sum_{k,l} w_kl a_kl a_kl^H`` for one BS (without the dual term)."""
    return np.einsum("kl,klt,kls->ts", w, a_b, a_b.conj())


def block_rhs(a_b, w, fixed):
    """Right-hand sides of the per-BS closed form.

    ``fixed[k, l, i, j]`` is the signal of stream ``(i, j)`` received over
    stream ``(k, l)`` through all *other* serving BSs.
    """
    own = w[:, :, None] * a_b
    return own - np.einsum("kl,klt,klij->ijt", w, a_b, fixed)


def solve_block(a_b, w, fixed, mask_b, budget, spec=BisectionSpec(),
                eig=None, nu0=None):
    """Minimize the weighted MSE over the beams of one BS, others fixed.

    ``eig`` may carry the eigendecomposition of :func:`block_covariance`,
    which does not change while receivers and weights are held fixed.
    Returns ``(nu_b, beams_b)`` with ``beams_b`` of shape (K, L, NT).
    """
    K, L, nt = a_b.shape
    if eig is None:
        lam, V = np.linalg.eigh(block_covariance(a_b, w))
        eig = np.clip(lam, 0.0, None), V
    rhs = block_rhs(a_b, w, fixed)
    idx = np.flatnonzero(mask_b.ravel())
    out = np.zeros((K * L, nt), dtype=complex)
    if idx.size == 0:
        return 0.0, out.reshape(K, L, nt)
    nu, m = dual_from_eig(*eig, rhs.reshape(K * L, nt)[idx].T, budget, spec,
                          nu0)
    out[idx] = m.T
    return nu, out.reshape(K, L, nt)


def joint_power_duals(A, Z, mask, budgets, spec=BisectionSpec()):
    """Per-BS power duals of the joint transmit problem by projected Newton.

    Minimizes ``sum_j x_j^H A x_j - 2 Re z_j^H x_j`` subject to one power
    ball per BS by maximizing the concave dual over ``nu >= 0``. For fixed
    ``nu`` the beams are ``(A + diag(nu))^{-1} z`` restricted to the BSs
    serving each column.

    Parameters
    ----------
    A : ndarray, shape (B, NT, B, NT)
    Z : ndarray, shape (B, NT, J)
    mask : ndarray of bool, shape (B, J)
        ``mask[b, j]`` when BS ``b`` may transmit column ``j``.
    budgets : array_like, shape (B,)

    Returns
    -------
    (nu, X, converged)
        ``X`` has the shape of ``Z``; when ``converged`` is False the caller
        should not rely on the result.
    """
    B, nt, J = Z.shape
    P = np.asarray(budgets, dtype=float)
    Af = A.reshape(B * nt, B * nt)
    Zf = Z.reshape(B * nt, J)
    patterns, inverse = np.unique(mask.T, axis=0, return_inverse=True)
    groups = []
    for g, pat in enumerate(patterns):
        if pat.any():
            rows = np.repeat(pat, nt)
            cols = np.flatnonzero(inverse.ravel() == g)
            bs = np.flatnonzero(pat)
            groups.append((np.ix_(rows, cols), np.ix_(bs, bs), bs,
                           Af[np.ix_(rows, rows)], Zf[np.ix_(rows, cols)]))

    def evaluate(nu):
        X = np.zeros((B * nt, J), dtype=complex)
        hess = np.zeros((B, B))
        for block, pair, bs, Ag, Zg in groups:
            # A is rank deficient and z lies in its range, so directions the
            # duals leave unpenalized carry no beam; a truncated inverse
            # keeps rounding from leaking into them
            lam, V = np.linalg.eigh(Ag + np.diag(np.repeat(nu[bs], nt)))
            keep = lam > 1e-12 * max(lam[-1], 1e-300)
            C = (V[:, keep] / lam[keep]) @ V[:, keep].conj().T
            Xg = C @ Zg
            X[block] = Xg
            Xb = Xg.reshape(len(bs), nt, -1)
            Cb = C.reshape(len(bs), nt, len(bs), nt)
            hess[pair] -= 2 * np.einsum("btj,btrs,rsj->br", Xb.conj(), Cb, Xb).real
        power = np.sum(np.abs(X.reshape(B, nt, J)) ** 2, axis=(1, 2))
        value = -np.vdot(Zf, X).real - nu @ P
        return X, hess, power, value

    # sqrt(|z_b|^2 / P_b) bounds the dual of a decoupled block from above.
    # The dual is not smooth where A + diag(nu) is singular (typically at
    # nu = 0), so steps shrink a dual by at most 10x per iteration and an
    # inactive budget is accepted once its dual is negligible.
    scale = np.sqrt(np.sum(np.abs(Z) ** 2, axis=(1, 2)) / P)
    nu = scale.copy()
    X, hess, power, value = evaluate(nu)
    # degenerate subproblems (ties among optimal beams) stall here; the
    # block sweeps of the caller handle them, so give up early
    for _ in range(min(spec.max_iters, 50)):
        grad = power - P
        settled = (np.abs(grad) <= spec.tolerance * P) | (
            (grad < 0) & (nu <= spec.tolerance * scale))
        if np.all(settled):
            return nu, X.reshape(B, nt, J), True
        try:
            step = -np.linalg.solve(hess, grad)
            # duals heading for zero shrink by 10x; the others take the
            # Newton step of the reduced system given that move
            bound = (grad < 0) & (nu + step < 0.1 * nu)
            if bound.any():
                free = ~bound
                step[bound] = -0.9 * nu[bound]
                if free.any():
                    step[free] = -np.linalg.solve(
                        hess[np.ix_(free, free)],
                        grad[free] + hess[np.ix_(free, bound)] @ step[bound])
        except np.linalg.LinAlgError:
            return nu, X.reshape(B, nt, J), False
        t = 1.0
        while True:
            trial = np.maximum(nu + t * step, 0.1 * nu)
            out = evaluate(trial)
            # Armijo ascent on the dual; the slack absorbs rounding at the optimum
            if out[3] >= value + 1e-4 * grad @ (trial - nu) - 1e-14 * abs(value):
                break
            t *= 0.5
            if t < 1e-8:
                return nu, X.reshape(B, nt, J), False
        nu = trial
        X, hess, power, value = out
    return nu, X.reshape(B, nt, J), False


def weighted_mse(H, M, U, W, sigma2):
    """Objective of the transmit subproblem, ``sum w_kl eps_kl``."""
    return float(np.sum(W * system.compute_mse(H, M, U, sigma2)))


def solve_transmit_subproblem(scenario, U, W, M0=None, max_sweeps=50,
                              tol=1e-8, spec=BisectionSpec()):
    """Transmit beams minimizing ``sum w eps`` for fixed receivers/weights.

    The joint problem is first solved through its per-BS power duals
    (:func:`joint_power_duals`). Gauss-Seidel sweeps over BSs then polish
    the result; each block is the exact per-BS minimizer with the other BSs
    fixed (see :func:`solve_block`). The sweeps start from whichever of the
    dual solution and ``M0`` (zeros by default) is better, so the objective
    never increases from ``M0``.

    Returns
    -------
    M : ndarray
        Feasible beams.
    info : dict
        ``nu`` (per-BS duals), ``sweeps``, ``objective``.

    Notes
    -----
    The objective is ``const + sum_ij m_ij^H A m_ij - 2 Re q_ij^H m_ij``
    with ``A[b, r] = sum_kl w_kl a_{b,kl} a_{r,kl}^H``. Every BS block is
    rotated into the eigenbasis of its diagonal block once, so a sweep is a
    handful of small matrix products plus the scalar dual search.
    """
    H = scenario.channels
    B, K, L, nt = H.shape[0], H.shape[1], W.shape[1], H.shape[3]
    mask = scenario.cluster.transmit_mask.reshape(B, K * L)
    M = scenario.zero_beams() if M0 is None else np.array(M0, dtype=complex)
    a = transmit_directions(H, U)
    wa = (W[:, :, None] * a).reshape(B, K * L, nt)
    A = np.einsum("bst,rsu->btru", wa, a.reshape(B, K * L, nt).conj())
    lams, Vs = np.linalg.eigh(np.stack([A[b, :, b, :] for b in range(B)]))
    lams = np.clip(lams, 0.0, None)
    VH = Vs.conj().transpose(0, 2, 1)
    # D[b, :, r, :] = V_b^H A[b, r] V_r and the rotated linear terms
    D = np.einsum("bts,bsru,ruv->btrv", VH, A, Vs).reshape(B, nt, B * nt)
    Dfull = D.reshape(B * nt, B * nt)
    Zq = np.einsum("bts,bjs->btj", VH, wa)
    Y = np.einsum("bts,bjs->btj", VH, M.reshape(B, K * L, nt))
    const = float(np.sum(W * (1 + scenario.noise[:, None]
                              * np.sum(np.abs(U) ** 2, axis=-1))))

    def objective():
        flat = Y.reshape(B * nt, K * L)
        quad = np.vdot(flat, Dfull @ flat).real
        return const + quad - 2 * np.vdot(Zq, Y).real

    nu = np.full(B, np.nan)
    obj = objective()
    duals, X, ok = joint_power_duals(A, wa.transpose(0, 2, 1), mask, scenario.power, spec)
    if ok:
        # trim rounding excess so the start is feasible
        excess = np.sum(np.abs(X) ** 2, axis=(1, 2)) / scenario.power
        X = X / np.sqrt(np.maximum(excess, 1.0))[:, None, None]
        Y_start = Y.copy()
        Y[:] = np.einsum("bts,bsj->btj", VH, X)
        candidate = objective()
        if candidate <= obj:
            obj = candidate
            nu = duals
        else:
            Y[:] = Y_start
    else:
        log.debug("joint dual search failed; falling back to block sweeps")
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for b in range(B):
            z = Zq[b] - D[b] @ Y.reshape(B * nt, K * L) + lams[b][:, None] * Y[b]
            cols = mask[b]
            y = np.zeros((nt, K * L), dtype=complex)
            if cols.any():
                nu[b], y[:, cols] = dual_in_eigbasis(
                    lams[b], z[:, cols], scenario.power[b], spec, nu[b])
            else:
                nu[b] = 0.0
            Y[b] = y
        new = objective()
        done = obj - new <= tol * abs(new)
        obj = new
        if done:
            break
    M = np.einsum("bts,bsj->bjt", Vs, Y).reshape(B, K, L, nt)
    return M, {"nu": nu, "sweeps": sweeps, "objective": obj}


def refresh_receivers(scenario, M):
    """MMSE receivers, their MSEs and the resulting weights."""
    H, s2 = scenario.channels, scenario.noise
    U = system.mmse_receiver(H, M, s2)
    eps = system.compute_mse(H, M, U, s2)
    mask = scenario.cluster.stream_mask
    eps = np.where(mask, eps, 1.0)
    W = system.update_weights(eps, scenario.priority, mask)
    return U, eps, W


def run_centralized(scenario, iters, M0=None, max_sweeps=50, tol=1e-8,
                    spec=BisectionSpec()):
    """Alternate MMSE receivers, weights and the transmit subproblem.

    Parameters
    ----------
    scenario : Scenario
    iters : int
        Number of full receiver/weight/transmitter iterations.
    M0 : ndarray, optional
        Feasible initial beams; matched filters by default.

    Returns
    -------
    (M, U, SolveReport)
        ``report.objective_trace[n]`` is the weighted sum rate after
        iteration ``n + 1``.
    """
    H = scenario.channels
    if M0 is None:
        M0 = system.matched_filter_init(H, scenario.cluster, scenario.power)
    M = np.array(M0, dtype=complex)
    report = SolveReport()
    for _ in range(iters):
        U, _, W = refresh_receivers(scenario, M)
        M, info = solve_transmit_subproblem(scenario, U, W, M, max_sweeps,
                                            tol, spec)
        report.inner_sweeps.append(info["sweeps"])
        report.dual_values = info["nu"]
        report.objective_trace.append(system.weighted_sum_rate(
            H, M, scenario.noise, scenario.priority,
            cluster=scenario.cluster))
    U = system.mmse_receiver(H, M, scenario.noise)
    tr = report.objective_trace
    report.converged = len(tr) > 1 and abs(tr[-1] - tr[-2]) <= 1e-6 * abs(tr[-1])
    return M, U, report
