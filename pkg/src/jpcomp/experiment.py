"""Scenario orchestration: frames, admission, metrics rows and sweeps.

Frame ``t`` uses the channel realization ``H(t)``. A frame starts with the
weight refresh (or with a reset on reset frames), then runs its signaling
iterations, one algorithm iteration each, and ends with stream-drop
detection. Every iteration emits one :class:`MetricsRow` whose rate is that
of the beams active for data transmission at that point.
"""

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import admission, geometry, pilots, signaling, sse, system, wmmse
from .errors import ConfigurationError

log = logging.getLogger(__name__)

COLUMNS = ("frame", "inner_iteration", "algorithm", "seed", "sum_rate",
           "effective_rate", "per_bs_power", "consensus_residual",
           "gradient_norm", "active_streams", "backhaul_scalars",
           "quantizer_saturation_events")

SWEEPABLE = ("snr_db", "pilot_length", "q_bits", "smoothing_beta", "gamma",
             "bit", "alpha", "rho", "beta_dual", "omega", "velocity_kmh",
             "pilot_noise_power", "reset_interval", "bit_after_reset",
             "delayed_indexing", "algorithm", "cluster_mode", "nt",
             "users_per_cell", "streams_per_user", "pilot_orthogonal")


@dataclass
class MetricsRow:
    frame: int
    inner_iteration: int
    algorithm: str
    seed: int
    sum_rate: float
    effective_rate: float
    per_bs_power: list
    consensus_residual: float
    gradient_norm: float
    active_streams: int
    backhaul_scalars: int
    quantizer_saturation_events: int

    def as_csv(self):
        d = asdict(self)
        d["per_bs_power"] = ";".join(repr(float(p)) for p in self.per_bs_power)
        return [d[c] for c in COLUMNS]


@dataclass
class FrameEvent:
    """Admission bookkeeping of one frame."""

    frame: int
    reset: bool
    bit: int
    dropped: int
    active_is_stored: bool
    rate: float


@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def csv_text(self):
        buf = io.StringIO()
        write_csv(self.rows, buf)
        return buf.getvalue()


def write_csv(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow(row.as_csv())


class CentralizedSolver:
    """One receiver/weight/transmitter WMMSE iteration per :meth:`step`.

    Offers the interface the frame loop expects from the decentralized
    solvers.
    """

    name = "centralized"

    def __init__(self, scenario, beams=None, spec=wmmse.BisectionSpec()):
        self.scenario = scenario
        self.spec = spec
        if beams is None:
            beams = system.matched_filter_init(scenario.channels,
                                               scenario.cluster, scenario.power)
        self.beams = np.array(beams, dtype=complex)
        self.stream_active = None
        self.exchange = None

    def set_channels(self, H):
        self.scenario = self.scenario.with_channels(H)

    def update_receivers(self):
        pass

    def refresh_weights(self):
        pass

    def reset(self, beams):
        self.beams = np.array(beams, dtype=complex)
        self.stream_active = None

    def suppress(self, active):
        self.stream_active = np.asarray(active, dtype=bool)
        self.beams = np.where(self.stream_active[None, :, :, None], self.beams, 0)

    def step(self):
        U, _, W = wmmse.refresh_receivers(self.scenario, self.beams)
        if self.stream_active is not None:
            W = np.where(self.stream_active, W, 0.0)
        self.beams, _ = wmmse.solve_transmit_subproblem(
            self.scenario, U, W, self.beams, spec=self.spec)
        if self.stream_active is not None:
            self.beams = np.where(self.stream_active[None, :, :, None], self.beams, 0)

    def diagnostics(self):
        return {}


def rng_streams(seed):
    """Independent generators seeds for fading, pilots and pilot noise."""
    fading, book, noise = np.random.SeedSequence(seed).spawn(3)
    return (int(fading.generate_state(1)[0]), int(book.generate_state(1)[0]),
            int(noise.generate_state(1)[0]))


def build_channel(cfg, seed=None):
    """Cluster, fading process and noise power of a configuration.

    Large-scale gains are normalized by the cell-edge gain so that the
    noise power is simply ``power / SNR``; the SNR at the cell edge is
    unchanged by this scaling.
    """
    seed = cfg.seed if seed is None else seed
    B, K = cfg.num_bs, cfg.num_users
    if cfg.cluster_mode == "full_cooperation":
        cluster = system.ClusterMap.full(B, K, cfg.streams_per_user)
    else:
        cluster = system.ClusterMap.per_cell(B, cfg.users_per_cell,
                                             cfg.streams_per_user)
    if cfg.geometry == "wraparound":
        layout = geometry.build_wraparound_layout(B, cfg.inter_site_distance,
                                                  cfg.users_per_cell)
        gains = geometry.layout_gains(layout, cfg.path_loss_exponent)
        edge = geometry.path_gain(layout.edge_radius, cfg.path_loss_exponent)
        gains = gains / edge
    else:
        gains = np.ones((B, K))
    noise = geometry.noise_power(10 ** (cfg.snr_db / 10), cfg.power, 1.0)
    process = geometry.FadingProcess(cfg.normalized_doppler,
                                     (B, K, cfg.nr, cfg.nt), gains,
                                     seed=rng_streams(seed)[0])
    return cluster, process, noise


def make_solver(cfg, scenario, exchange=None, seed=None):
    """Instantiate the configured algorithm on ``scenario``."""
    seed = cfg.seed if seed is None else seed
    name = cfg.algorithm
    common = {"exchange": exchange, "refresh_weights": cfg.weight_refresh == "iteration"}
    if name == "centralized":
        return CentralizedSolver(scenario)
    if name in ("br", "de_br"):
        params = {"alpha": cfg.step_size}
    elif name in ("admm", "de_admm"):
        params = {"rho": cfg.rho}
        if name == "de_admm":
            params["beta_dual"] = cfg.dual_step
    else:
        params = {"alpha": cfg.step_size, "beta_dual": cfg.dual_step,
                  "omega": cfg.omega, "normalize": cfg.normalize_step}
    if name.startswith("de_"):
        _, book_seed, noise_seed = rng_streams(seed)
        book = pilots.make_pilot_book(cfg.training_length, scenario.cluster,
                                      cfg.pilot_orthogonal, book_seed)
        return pilots.DE_SOLVERS[name](scenario, book,
                                       pilot_noise=cfg.pilot_noise_power,
                                       noise_seed=noise_seed, **params, **common)
    return sse.SOLVERS[name](scenario, **params, **common)


def _active_count(beams, cluster, power, policy):
    return int(admission.detect_dropped(beams, cluster, power, policy).sum())


def run_frames(solver, process, frames, policy, schedule, scheme, on_row=None,
               algorithm="", seed=0, exchange=None):
    """Run the frame loop on an existing solver.

    Parameters
    ----------
    solver : DecentralizedSolver or CentralizedSolver
    process : FadingProcess
        ``process.sample(t)`` gives the channel of frame ``t``.
    frames : int
    policy : AdmissionPolicy
    schedule : FrameSchedule
    scheme : str
        Signaling scheme used for the backhaul column.
    on_row : callable, optional
        Receives every :class:`MetricsRow` as it is produced.

    Returns
    -------
    (rows, events)
    """
    sc = solver.scenario
    cluster, power = sc.cluster, sc.power
    pair = admission.BeamformerPair(solver.beams.copy(), solver.beams.copy())
    rows, events = [], []
    for t in range(frames):
        H = process.sample(t)
        solver.set_channels(H)
        sc = solver.scenario
        reset = admission.is_reset_frame(t, policy)
        if reset:
            pair.stored = solver.beams.copy()
            solver.reset(system.matched_filter_init(H, cluster, power))
            if hasattr(solver, "weights"):
                solver.weights = admission.reset_weights(cluster, sc.priority)
            if exchange is not None:
                exchange.reset()
        elif t > 0:
            solver.update_receivers()
            solver.refresh_weights()
        bit = admission.bit_for_frame(t, policy)
        for i in range(bit):
            solver.step()
            pair.training = solver.beams
            active = admission.select_active(pair, t, policy)
            rate = system.weighted_sum_rate(H, active, sc.noise, sc.priority,
                                            cluster=cluster)
            n_active = _active_count(active, cluster, power, policy)
            diag = solver.diagnostics()
            row = MetricsRow(
                t, i, algorithm, seed, rate, schedule.effective_rate(rate),
                list(system.per_bs_power(active)),
                diag.get("consensus_residual", math.nan),
                diag.get("gradient_norm", math.nan), n_active,
                signaling.account_exchange(scheme, cluster, sc.nt, sc.nr,
                                           n_active)["total"],
                0 if exchange is None else exchange.saturation_events)
            rows.append(row)
            if on_row is not None:
                on_row(row)
        flags = admission.detect_dropped(solver.beams, cluster, power, policy)
        if solver.stream_active is not None:
            flags &= solver.stream_active
        dropped = int(cluster.stream_mask.sum() - flags.sum())
        if dropped:
            solver.suppress(flags)
            pair.training = solver.beams
        active = admission.select_active(pair, t, policy)
        events.append(FrameEvent(t, reset, bit, dropped,
                                 active is pair.stored, rows[-1].sum_rate))
    return rows, events


def policy_from_config(cfg):
    return admission.AdmissionPolicy(cfg.reset_interval, cfg.drop_threshold,
                                     cfg.reset_bit, cfg.bit, cfg.delayed_indexing)


def run_scenario(cfg, out=None):
    """Simulate one configuration.

    Parameters
    ----------
    cfg : ScenarioConfig
    out : path or file object, optional
        CSV destination for the metrics rows.

    Returns
    -------
    RunResult
        ``summary`` holds the final and frame-averaged rates, per-frame
        admission events and, if a solver failed, ``error`` naming the frame.
    """
    cluster, process, noise = build_channel(cfg)
    scenario = system.Scenario(process.sample(0), cluster, cfg.power, noise)
    exchange = None
    if cfg.algorithm != "centralized" and (cfg.q_bits != math.inf or cfg.smoothing_beta != 1):
        exchange = signaling.QuantizedExchange(cfg.q_bits, cfg.smoothing_beta)
    scheme = "global_csi" if cfg.algorithm == "centralized" else "backhaul_offload"
    schedule = signaling.build_schedule(cfg.gamma, cfg.bit)
    policy = policy_from_config(cfg)
    result = RunResult()
    try:
        solver = make_solver(cfg, scenario, exchange)
        result.rows, result.events = run_frames(
            solver, process, cfg.frames, policy, schedule, scheme,
            algorithm=cfg.algorithm, seed=cfg.seed, exchange=exchange)
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        frame = len({r.frame for r in result.rows})
        result.summary["error"] = f"frame {frame}: {type(exc).__name__}: {exc}"
        log.error("run failed: %s", result.summary["error"])
    frame_rates = [e.rate for e in result.events]
    result.summary.update({
        "algorithm": cfg.algorithm, "seed": cfg.seed,
        "frames": len(result.events),
        "final_sum_rate": result.rows[-1].sum_rate if result.rows else math.nan,
        "mean_frame_rate": float(np.mean(frame_rates)) if frame_rates else math.nan,
        "mean_effective_rate": (schedule.effective_rate(float(np.mean(frame_rates)))
                                if frame_rates else math.nan),
        "reset_frame_rates": [e.rate for e in result.events if e.reset],
    })
    if out is not None:
        if hasattr(out, "write"):
            write_csv(result.rows, out)
        else:
            with open(out, "w", newline="") as fh:
                write_csv(result.rows, fh)
    return result


def run_sweep(base, axis, values, seeds=1, out_dir=None, workers=1):
    """Run ``base`` for every value of ``axis`` and ``seeds`` seeds each.

    Cell seeds are ``base.seed + n``. With ``out_dir`` one CSV per value is
    written (``<axis>_<value>.csv``, seeds concatenated). Failing cells are
    reported in the summary and the sweep continues.

    Returns
    -------
    list of dict
        One summary per value with the seed-averaged final sum rate.
    """
    if axis not in SWEEPABLE:
        raise ConfigurationError(
            f"cannot sweep {axis!r}; sweepable fields: {', '.join(SWEEPABLE)}")
    if seeds < 1:
        raise ConfigurationError("seeds must be at least 1")
    jobs, summary = [], []
    for value in values:
        for n in range(seeds):
            try:
                cfg = base.replace(**{axis: value, "seed": base.seed + n})
            except ConfigurationError as exc:
                jobs.append((value, n, None, str(exc)))
                continue
            jobs.append((value, n, cfg, None))
    runnable = [(cfg, None) for _, _, cfg, err in jobs if cfg is not None]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = iter(list(pool.map(_run_cell, runnable)))
    else:
        results = iter([_run_cell(job) for job in runnable])
    per_value = {}
    for value, n, cfg, err in jobs:
        entry = per_value.setdefault(value, {"rows": [], "finals": [], "errors": []})
        if cfg is None:
            entry["errors"].append(f"seed {base.seed + n}: {err}")
            continue
        res = next(results)
        entry["rows"].extend(res.rows)
        if "error" in res.summary:
            entry["errors"].append(f"seed {cfg.seed}: {res.summary['error']}")
        else:
            entry["finals"].append(res.summary["final_sum_rate"])
    for value, entry in per_value.items():
        path = None
        if out_dir is not None:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            path = Path(out_dir) / f"{axis}_{value}.csv"
            with open(path, "w", newline="") as fh:
                write_csv(entry["rows"], fh)
        finals = entry["finals"]
        summary.append({"axis": axis, "value": value, "seeds": len(finals),
                        "mean_final_sum_rate": float(np.mean(finals)) if finals else math.nan,
                        "errors": entry["errors"],
                        "output": None if path is None else str(path)})
    return summary


def _run_cell(job):
    cfg, out = job
    return run_scenario(cfg, out)
