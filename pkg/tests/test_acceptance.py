"""Acceptance criteria, one test per criterion.

Every criterion is a plain function returning ``(ok, detail)``. Under pytest
the outcome lines are collected and printed in the terminal summary; run
``python tests/test_acceptance.py`` to print them directly.
"""

import functools
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.special import j0

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from jpcomp import geometry, pilots, signaling, sse, system, wmmse  # noqa: E402
from jpcomp.config import SPEED_OF_LIGHT, ScenarioConfig  # noqa: E402
from jpcomp.experiment import run_scenario  # noqa: E402

SEEDS = range(20)


def desk(seed):
    """Static desk instance: B=3, K=6, NT=4, NR=2, one stream, 10 dB."""
    return system.random_scenario(np.random.default_rng(seed), 3, 6, 4, 2, 1, 10)


def mse_sinr_inversion():
    rng = np.random.default_rng(1)
    start, worst = time.perf_counter(), 0.0
    for _ in range(1000):
        B, K = rng.integers(1, 4), rng.integers(1, 7)
        nt, nr = rng.integers(1, 5), rng.integers(1, 3)
        L = rng.integers(1, nr + 1)
        H, M, s2 = oracles.random_instance(rng, B, K, nt, nr, L, rng.uniform(-10, 30))
        U = system.mmse_receiver(H, M, s2)
        eps = system.compute_mse(H, M, U, s2)
        gamma = system.compute_sinr(H, M, U, s2)
        worst = max(worst, float(np.max(np.abs(1 / eps - (1 + gamma)) / (1 + gamma))))
    elapsed = time.perf_counter() - start
    return worst <= 1e-9 and elapsed < 10, f"worst rel {worst:.2e}, {elapsed:.1f}s"


def centralized_monotonicity():
    start, worst = time.perf_counter(), 0.0
    for seed in range(50):
        sc = desk(1000 + seed)
        M0 = system.matched_filter_init(sc.channels, sc.cluster, sc.power)
        r0 = system.weighted_sum_rate(sc.channels, M0, sc.noise, sc.priority)
        _, _, report = wmmse.run_centralized(sc, 100, M0)
        rates = np.array([r0] + report.objective_trace)
        drops = (rates[:-1] - rates[1:]) / np.abs(rates[:-1])
        worst = max(worst, float(drops.max()))
    elapsed = time.perf_counter() - start
    return worst <= 1e-6 and elapsed < 60, f"largest rel decrease {worst:.2e}, {elapsed:.1f}s"


def kkt_bisection():
    rng = np.random.default_rng(2)
    worst_gap = worst_slack = 0.0
    for n in range(200):
        H, M, s2 = oracles.random_instance(rng)
        U = system.mmse_receiver(H, M, s2)
        W = rng.uniform(0.5, 3, (6, 1))
        a = wmmse.transmit_directions(H, U)
        E = wmmse.contributions(a, M)
        b = n % 3
        fixed = E.sum(0) - E[b]
        P = float(rng.choice([0.05, 1.0, 20.0]))
        nu, X = wmmse.solve_block(a[b], W, fixed, np.ones((6, 1), bool), P)
        A, Z = oracles.quadratic_block(a[b], W, fixed)
        f_ref = oracles.block_objective(A, Z, oracles.fista_block(A, Z, P))
        f = oracles.block_objective(A, Z, X)
        worst_gap = max(worst_gap, abs(f - f_ref) / abs(f_ref))
        worst_slack = max(worst_slack, nu * abs(P - np.sum(np.abs(X) ** 2)) / P)
    ok = worst_gap <= 1e-6 and worst_slack <= 1e-6
    return ok, f"objective gap {worst_gap:.2e}, slackness {worst_slack:.2e} x P"


@functools.lru_cache(maxsize=None)
def decentralized_runs():
    """Final rates of the three solvers and the centralized reference per seed."""
    start = time.perf_counter()
    out = {"centralized": [], "br": [], "admm": [], "sg": [], "split_ok": []}
    for seed in SEEDS:
        sc = desk(seed)
        _, _, ref = wmmse.run_centralized(sc, 200)
        out["centralized"].append(ref.objective_trace[-1])
        out["br"].append(sse.run_sse("br", sc, 200, alpha=0.5)[1].sum_rate[-1])
        admm, trace = sse.run_sse("admm", sc, 200, rho=3.0, track_split=True)
        out["admm"].append(trace.sum_rate[-1])
        out["split_ok"].extend(admm.split_ok)
        out["sg"].append(sse.run_sse("sg", sc, 200, normalize=True, omega=0.5)[1].sum_rate[-1])
    out["elapsed"] = time.perf_counter() - start
    return out


def decentralized_vs_centralized():
    runs = decentralized_runs()
    ref = np.mean(runs["centralized"])
    ratios = {name: np.mean(runs[name]) / ref for name in ("br", "admm", "sg")}
    ok = all(r >= 0.95 for r in ratios.values()) and runs["elapsed"] < 300
    text = ", ".join(f"{k} {v:.3f}" for k, v in ratios.items())
    return ok, f"{text} of centralized, {runs['elapsed']:.1f}s"


def admm_split_identity():
    flags = decentralized_runs()["split_ok"]
    return bool(flags) and all(flags), f"{sum(flags)}/{len(flags)} ADMM iterations"


def de_sse_equivalence():
    start, worst = time.perf_counter(), {}
    pairs = [("br", sse.BestResponse, pilots.DirectBestResponse, {}),
             # matching unit dual steps make the two ADMM recursions identical
             ("admm", sse.Admm, pilots.DirectAdmm, {"beta_dual": 1.0}),
             ("sg", sse.StochasticGradient, pilots.DirectGradient, {})]
    for seed in SEEDS:
        sc = desk(seed)
        book = pilots.make_pilot_book(sc.cluster.total_streams, sc.cluster, True, seed)
        for name, Sse, Direct, kw in pairs:
            a, d = Sse(sc), Direct(sc, book, **kw)
            for _ in range(50):
                a.step()
                d.step()
                worst[name] = max(worst.get(name, 0.0),
                                  float(np.max(np.abs(a.beams - d.beams))))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and elapsed < 120
    text = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    return ok, f"max beam deviation {text}, {elapsed:.1f}s"


def gradient_oracles():
    rng = np.random.default_rng(3)
    worst_sse = worst_de = 0.0
    for _ in range(100):
        sc = system.random_scenario(rng, 2, 3, 2, 2, 2, 10)
        H, M = sc.channels, 0.5 * oracles.random_instance(rng, 2, 3, 2, 2, 2)[1]
        U = rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))
        W = rng.uniform(0.2, 3, (3, 2))
        G = sse.sg_gradient(H, U, W, M)
        fd = oracles.complex_central_difference(lambda X: sse.sg_objective(H, U, W, X), M)
        worst_sse = max(worst_sse, np.linalg.norm(G - fd) / np.linalg.norm(fd))
        book = pilots.make_pilot_book(6, sc.cluster, bool(rng.integers(2)),
                                      seed=int(rng.integers(2**31)))
        R = pilots.ul_training(H, U, W, book, 0.05, rng)
        G = pilots.de_sg_gradient(R, book, W, M)
        fd = oracles.complex_central_difference(
            lambda X: pilots.de_objective(R, book, W, X), M)
        worst_de = max(worst_de, np.linalg.norm(G - fd) / np.linalg.norm(fd))
    ok = worst_sse <= 1e-5 and worst_de <= 1e-5
    return ok, f"sg_gradient {worst_sse:.1e}, de_sg_gradient {worst_de:.1e}"


def accounting_table():
    cluster = system.ClusterMap.full(7, 49, 2)
    per_stream = signaling.account_exchange("backhaul_offload", cluster, 8, 2)["per_stream"]
    cluster = system.ClusterMap.full(7, 49, 1)
    csi = signaling.account_exchange("global_csi", cluster, 8, 2)["per_stream"]
    return (per_stream, csi) == (98, 784), f"per-stream {per_stream}, global CSI {csi}"


def jakes_fidelity():
    start, worst = time.perf_counter(), 0.0
    for fd in (0.01, 0.025):
        proc = geometry.FadingProcess(fd, (2, 8, 2, 4), seed=4)
        x = proc.unit_samples(400).T  # 128 entries x 400 frames
        emp = oracles.empirical_autocorrelation(x, 10)
        worst = max(worst, float(np.max(np.abs(emp - j0(2 * np.pi * fd * np.arange(1, 11))))))
    elapsed = time.perf_counter() - start
    return worst <= 0.05 and elapsed < 30, f"max deviation {worst:.3f} over {x.size} samples, {elapsed:.1f}s"


def quantization_robustness():
    ratios, identical = [], True
    for seed in SEEDS:
        sc = desk(seed)
        plain = sse.BestResponse(sc)
        coarse = sse.BestResponse(sc, exchange=signaling.QuantizedExchange(8))
        exact = sse.BestResponse(sc, exchange=signaling.QuantizedExchange(math.inf))
        for _ in range(200):
            plain.step()
            coarse.step()
            exact.step()
        identical &= np.array_equal(plain.beams, exact.beams)
        ratios.append(coarse.sum_rate() / plain.sum_rate())
    ok = min(ratios) >= 0.98 and identical
    return ok, (f"8-bit/unquantized mean {np.mean(ratios):.4f} (min {min(ratios):.4f}), "
                f"q=inf identical: {identical}")


def admission_benefit():
    # 3 cells x 3 single-stream users = 9 streams > 3 x 2 transmit antennas
    velocity = 0.025 / (2e-3 * 2e9 / SPEED_OF_LIGHT) * 3.6
    rates = {}
    for delayed in (False, True):
        per_seed = []
        for seed in SEEDS:
            cfg = ScenarioConfig(geometry="iid", cells=3, users_per_cell=3, nt=2, nr=2,
                                 algorithm="br", frames=31, bit=3, reset_interval=10,
                                 delayed_indexing=delayed, velocity_kmh=velocity,
                                 seed=seed)
            per_seed.append(np.mean(run_scenario(cfg).summary["reset_frame_rates"]))
        rates[delayed] = float(np.mean(per_seed))
    return rates[True] > rates[False], f"after-reset rate {rates[False]:.2f} off, {rates[True]:.2f} on"


CRITERIA = {
    1: ("MSE-SINR inversion", mse_sinr_inversion),
    2: ("centralized monotonicity", centralized_monotonicity),
    3: ("KKT and bisection", kkt_bisection),
    4: ("decentralized vs centralized", decentralized_vs_centralized),
    5: ("ADMM consensus split identity", admm_split_identity),
    6: ("direct estimation equivalence", de_sse_equivalence),
    7: ("gradient oracles", gradient_oracles),
    8: ("exchange accounting", accounting_table),
    9: ("Jakes fidelity", jakes_fidelity),
    10: ("quantization robustness", quantization_robustness),
    11: ("admission benefit", admission_benefit),
}


def evaluate(number):
    name, fn = CRITERIA[number]
    ok, detail = fn()
    return ok, f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({name}): {detail}"


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_report):
    ok, line = evaluate(number)
    acceptance_report.append(line)
    print(line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(n) for n in sorted(CRITERIA)]
    for _, line in results:
        print(line, flush=True)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
