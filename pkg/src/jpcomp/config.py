"""Scenario configuration: flat YAML mapping with validated defaults."""

import dataclasses
import math
from dataclasses import dataclass, fields

import yaml

from .errors import ConfigurationError

SPEED_OF_LIGHT = 299_792_458.0

ALGORITHMS = ("centralized", "br", "admm", "sg", "de_br", "de_admm", "de_sg")
CLUSTER_MODES = ("full_cooperation", "per_cell")
GEOMETRIES = ("wraparound", "iid")
WEIGHT_REFRESH = ("frame", "iteration")

# algorithm-dependent defaults for parameters left unset
_ALPHA = {"br": 0.5, "de_br": 0.5, "sg": 1e-2, "de_sg": 1e-2}
_BETA = {"sg": 1e-2, "de_sg": 1e-2}


@dataclass(frozen=True)
class ScenarioConfig:
    """All knobs of one simulated scenario.

    ``None`` means "derive": ``alpha`` and ``beta_dual`` fall back to the
    algorithm default, ``pilot_length`` to the number of streams,
    ``iters_per_frame`` and ``bit_after_reset`` to ``bit``.
    """

    cells: int = 7
    users_per_cell: int = 7
    nt: int = 4
    nr: int = 2
    streams_per_user: int = 1
    cluster_mode: str = "full_cooperation"
    geometry: str = "wraparound"
    inter_site_distance: float = 600.0
    path_loss_exponent: float = 3.0
    power: float = 1.0
    snr_db: float = 20.0
    algorithm: str = "br"
    alpha: float = None
    rho: float = 3.0
    beta_dual: float = None
    omega: float = 0.5
    normalize_step: bool = True
    q_bits: float = math.inf
    smoothing_beta: float = 1.0
    gamma: float = 0.0
    bit: int = 3
    weight_refresh: str = "frame"
    pilot_length: int = None
    pilot_orthogonal: bool = True
    pilot_noise_power: float = 0.0
    frames: int = 1
    iters_per_frame: int = None
    reset_interval: float = math.inf
    bit_after_reset: int = None
    delayed_indexing: bool = False
    drop_threshold: float = 1e-3
    velocity_kmh: float = 0.0
    signaling_rate_ms: float = 2.0
    carrier_ghz: float = 2.0
    seed: int = 0

    def __post_init__(self):
        validate(self)

    @property
    def num_bs(self):
        return self.cells

    @property
    def num_users(self):
        return self.cells * self.users_per_cell

    @property
    def total_streams(self):
        return self.num_users * self.streams_per_user

    @property
    def normalized_doppler(self):
        return derive_doppler(self.velocity_kmh, self.carrier_ghz,
                              self.signaling_rate_ms)

    @property
    def step_size(self):
        return _ALPHA.get(self.algorithm) if self.alpha is None else self.alpha

    @property
    def dual_step(self):
        if self.beta_dual is not None:
            return self.beta_dual
        return 1.0 / self.rho if self.algorithm == "de_admm" else _BETA.get(self.algorithm)

    @property
    def training_length(self):
        return self.total_streams if self.pilot_length is None else self.pilot_length

    @property
    def reset_bit(self):
        return self.bit if self.bit_after_reset is None else self.bit_after_reset

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _is_count(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 1


def validate(cfg):
    """Raise :class:`ConfigurationError` naming the offending field."""
    for name in ("cells", "users_per_cell", "nt", "nr", "streams_per_user",
                 "bit", "frames"):
        if not _is_count(getattr(cfg, name)):
            raise ConfigurationError(f"{name} must be an integer >= 1, got {getattr(cfg, name)!r}")
    for name in ("iters_per_frame", "bit_after_reset", "pilot_length"):
        v = getattr(cfg, name)
        if v is not None and not _is_count(v):
            raise ConfigurationError(f"{name} must be an integer >= 1, got {v!r}")
    choices = {"algorithm": ALGORITHMS, "cluster_mode": CLUSTER_MODES,
               "geometry": GEOMETRIES, "weight_refresh": WEIGHT_REFRESH}
    for name, valid in choices.items():
        if getattr(cfg, name) not in valid:
            raise ConfigurationError(
                f"{name} must be one of {', '.join(valid)}; got {getattr(cfg, name)!r}")
    if not math.isfinite(cfg.snr_db):
        raise ConfigurationError("snr_db must be finite")
    if cfg.geometry == "wraparound" and cfg.cells not in (1, 7):
        raise ConfigurationError("wraparound geometry supports cells = 1 or 7")
    if cfg.streams_per_user > cfg.nr:
        raise ConfigurationError("streams_per_user must not exceed nr")
    if cfg.iters_per_frame is not None and cfg.iters_per_frame != cfg.bit:
        raise ConfigurationError(
            "iters_per_frame must equal bit (one algorithm iteration per "
            "bi-directional iteration)")
    for name in ("power", "inter_site_distance", "rho", "path_loss_exponent",
                 "signaling_rate_ms", "carrier_ghz"):
        if not getattr(cfg, name) > 0:
            raise ConfigurationError(f"{name} must be positive")
    if cfg.velocity_kmh < 0 or cfg.pilot_noise_power < 0 or cfg.omega < 0:
        raise ConfigurationError("velocity_kmh, pilot_noise_power and omega must be non-negative")
    if not 0 <= cfg.gamma < 1:
        raise ConfigurationError("gamma must lie in [0, 1)")
    if not 0 < cfg.smoothing_beta <= 1:
        raise ConfigurationError("smoothing_beta must lie in (0, 1]")
    if not (cfg.q_bits == math.inf or (cfg.q_bits >= 1 and float(cfg.q_bits).is_integer())):
        raise ConfigurationError("q_bits must be a positive integer or inf")
    if not cfg.reset_interval >= 1:
        raise ConfigurationError("reset_interval must be >= 1 or inf")
    if not 0 < cfg.drop_threshold < 1:
        raise ConfigurationError("drop_threshold must lie in (0, 1)")
    if cfg.algorithm in ("br", "de_br") and cfg.alpha is not None and not 0 < cfg.alpha <= 1:
        raise ConfigurationError("best-response alpha must lie in (0, 1]")
    if cfg.alpha is not None and cfg.alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    if cfg.beta_dual is not None and cfg.beta_dual <= 0:
        raise ConfigurationError("beta_dual must be positive")
    if (cfg.algorithm.startswith("de_") and cfg.pilot_orthogonal
            and cfg.training_length < cfg.total_streams):
        raise ConfigurationError(
            f"orthogonal pilots need pilot_length >= {cfg.total_streams} streams, "
            f"got {cfg.training_length}")


_FIELDS = {f.name for f in fields(ScenarioConfig)}
_INFINITE = {"inf", "infinity", "none", "never"}


def _coerce(key, value):
    if key in ("q_bits", "reset_interval"):
        if value is None or (isinstance(value, str) and value.lower() in _INFINITE):
            return math.inf
    if key in ("cells", "users_per_cell", "nt", "nr", "streams_per_user", "bit",
               "frames", "iters_per_frame", "bit_after_reset", "pilot_length",
               "seed") and isinstance(value, float) and value.is_integer():
        return int(value)
    if key in ("snr_db", "gamma", "power", "velocity_kmh") and isinstance(value, int) \
            and not isinstance(value, bool):
        return float(value)
    return value


def config_from_mapping(data):
    """Build a config from a flat mapping; unknown keys are rejected."""
    data = dict(data or {})
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {', '.join(unknown)}")
    return ScenarioConfig(**{k: _coerce(k, v) for k, v in data.items()})


def load_config(path):
    """Read a flat YAML file; an empty file gives all defaults."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError("config must be a flat key-value mapping")
    if data and any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigurationError("config values must be scalars (no nesting)")
    return config_from_mapping(data)


def derive_doppler(velocity_kmh, carrier_ghz=2.0, signaling_rate_ms=2.0):
    """Normalized Doppler ``t_S f_D`` with ``f_D = v f_c / c``."""
    if velocity_kmh < 0:
        raise ConfigurationError("velocity must be non-negative")
    f_d = velocity_kmh / 3.6 * carrier_ghz * 1e9 / SPEED_OF_LIGHT
    return f_d * signaling_rate_ms * 1e-3
