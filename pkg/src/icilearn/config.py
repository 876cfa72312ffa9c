"""Experiment configuration: schema, loading, overrides and scenario assembly.

Config files use TOML syntax (sections of key/value pairs).  Every key is
declared in ``SCHEMA`` with its accepted types and default, so unknown keys
and badly typed overrides are rejected before anything runs.  See
``docs/config.md`` for the full reference.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .channel import (DISCRETE, RAYLEIGH, ChannelModel, dbm_to_watt, hex_colors,
                      hex_positions, macro_path_loss, place_users)
from .model import ConfigError, CostModel, PatternSet, QueueUnit, SystemConfig
from .queueing import BERNOULLI, POISSON_PACKETS, ArrivalModel

NUM = (int, float)
LISTNUM = (int, float, list)

# section -> key -> (accepted python types, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {
        "num_bs": ((int,), 2),
        "users_per_bs": ((int,), 2),
        "slot_len": (NUM, 1.0),
        "bandwidth": (NUM, 1.0),
        "noise_psd": (NUM, 1.0),
        "noise_dbm_hz": (NUM + (type(None),), None),
        "coding_gap": (NUM, 1.0),
        "max_power": (LISTNUM, 1.0),
        "max_power_dbm": (NUM + (list, type(None)), None),
        "buffer_size": ((int,), 3),
        "cost_kind": ((str,), "normalized_queue"),
        "cost_weights": (LISTNUM, 1.0),
        "queue_unit": ((str,), "bits"),
    },
    "topology": {
        "kind": ((str,), "uniform"),
        "path_loss": (LISTNUM, 1.0),
        "cross_loss": (NUM + (type(None),), None),
        "site_distance": (NUM, 866.0254037844386),
        "cell_radius": (NUM, 500.0),
        "min_distance": (NUM, 35.0),
        "intercept_db": (NUM, 34.5),
        "slope_db": (NUM, 35.0),
    },
    "channel": {
        "kind": ((str,), DISCRETE),
        "levels": ((list,), [[1.0, 1.0]]),
        "mean_gain": (NUM, 1.0),
        "cross_levels": ((list, type(None)), None),
    },
    "arrivals": {
        "kind": ((str,), BERNOULLI),
        "rate": (LISTNUM, 0.5),
        "size": ((int,), 1),
        "mean_packet_bits": (NUM, 1.0),
    },
    "patterns": {
        "catalog": ((str, list), "all"),
    },
    "partition": {
        "regions": ((int,), 4),
        "breakpoints": ((list, type(None)), None),
    },
    "learning": {
        "step_a": (NUM, 1.0),
        "step_b": (NUM, 2.0),
        "per_visit": ((bool,), False),
        "epsilon": (NUM, 0.05),
        "epsilon_decay": ((str,), "sqrt"),
        "explore_scale": (NUM, 1.0),
        "init_slope": (NUM, 0.01),
        "include_bandwidth": ((bool,), True),
    },
    "baselines": {
        "reuse_factor": ((int,), 3),
        "t_slow": ((int,), 100),
        "pf_window": ((int,), 1000),
        "slow_utility": ((str,), "pf"),
    },
    "run": {
        "seed": ((int,), 1),
        "horizon": ((int,), 100_000),
        "warmup_frac": (NUM, 0.1),
        "policy": ((str,), "proposed"),
        "batches": ((int,), 20),
        "checkpoints": ((list,), []),
    },
    "sweep": {
        "param": ((str,), "arrivals.rate"),
        "values": ((list,), []),
        "replicates": ((int,), 1),
        "policies": ((list,), ["proposed"]),
    },
}


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(d) for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}


def _check_type(section, key, value):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {section}.{key}")
    types = SCHEMA[section][key][0]
    # bool is an int subclass; only accept it where bool is declared
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(f"{section}.{key}: expected {_names(types)}, got bool")
    if not isinstance(value, types):
        raise ConfigError(f"{section}.{key}: expected {_names(types)}, got {type(value).__name__}")


def _names(types):
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for sec, body in update.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {sec!r} must be a section")
        for k, v in body.items():
            _check_type(sec, k, v)
            out[sec][k] = v
    return out


def parse_override(text: str) -> tuple[str, str, object]:
    """Parse ``section.key=value``; the value uses TOML literal syntax, bare words are strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2:
        raise ConfigError(f"override key {path!r} must be section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    sec, key = parts
    _check_type(sec, key, value)
    return sec, key, value


def apply_overrides(cfg: dict, overrides) -> dict:
    out = copy.deepcopy(cfg)
    for text in overrides or ():
        sec, key, value = parse_override(text)
        out[sec][key] = value
    return out


def load_config(path, overrides=()) -> dict:
    """Read a config file (or a bundled config name) on top of the defaults."""
    text = _read_text(path)
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return apply_overrides(merge(defaults(), raw), overrides)


def _read_text(path) -> str:
    p = Path(path)
    if p.exists():
        return p.read_text()
    bundled = resources.files("icilearn") / "configs" / p.name
    if bundled.is_file():
        return bundled.read_text()
    raise ConfigError(f"config file {path} not found")


def bundled_configs() -> list[str]:
    return sorted(f.name for f in (resources.files("icilearn") / "configs").iterdir()
                  if f.name.endswith(".cfg"))


def get_path(cfg: dict, dotted: str):
    sec, key = dotted.split(".")
    return cfg[sec][key]


def set_path(cfg: dict, dotted: str, value) -> dict:
    out = copy.deepcopy(cfg)
    sec, key = dotted.split(".")
    _check_type(sec, key, value)
    out[sec][key] = value
    return out


# --- scenario assembly ------------------------------------------------------

@dataclass(frozen=True)
class LearningOptions:
    step_a: float = 1.0
    step_b: float = 2.0
    per_visit: bool = False
    epsilon: float = 0.05
    epsilon_decay: str = "sqrt"
    explore_scale: float = 1.0
    init_slope: float = 0.01

    def __post_init__(self):
        if self.epsilon_decay not in ("sqrt", "none"):
            raise ConfigError("learning.epsilon_decay must be 'sqrt' or 'none'")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError("learning.epsilon must lie in [0, 1]")
        if not self.init_slope > 0:
            raise ConfigError("learning.init_slope must be positive (strictly increasing start)")
        if not self.explore_scale > 0:
            raise ConfigError("learning.explore_scale must be positive")

    def epsilon_at(self, t: int) -> float:
        if self.epsilon_decay == "none":
            return self.epsilon
        return self.epsilon / np.sqrt(1.0 + t / self.explore_scale)


@dataclass(frozen=True)
class BaselineOptions:
    reuse_factor: int = 3
    t_slow: int = 100
    pf_window: int = 1000
    slow_utility: str = "pf"

    def __post_init__(self):
        if self.reuse_factor < 1:
            raise ConfigError("baselines.reuse_factor must be >= 1")
        if self.t_slow < 1 or self.pf_window < 1:
            raise ConfigError("baselines.t_slow and pf_window must be >= 1")
        if self.slow_utility not in ("pf", "sum_rate"):
            raise ConfigError("baselines.slow_utility must be 'pf' or 'sum_rate'")


@dataclass(frozen=True)
class Scenario:
    """Everything a run needs besides the policy and the seed."""

    system: SystemConfig
    patterns: PatternSet
    channel: ChannelModel
    arrivals: ArrivalModel
    cost: CostModel
    breakpoints: tuple  # per user: sorted region start points (first is 0)
    learning: LearningOptions = field(default_factory=LearningOptions)
    baselines: BaselineOptions = field(default_factory=BaselineOptions)
    include_bandwidth: bool = True
    colors: np.ndarray = None
    bs_xy: np.ndarray = None
    user_xy: np.ndarray = None

    @property
    def shape(self):
        return self.system.shape


def _shape_param(value, shape, what):
    try:
        return np.broadcast_to(np.asarray(value, dtype=float), shape).copy()
    except ValueError as exc:
        raise ConfigError(f"{what}: cannot broadcast to shape {shape}") from exc


def uniform_breakpoints(buffer_size: int, regions: int) -> tuple:
    """Start points of ``regions`` contiguous blocks of (near) equal width over 0..N_Q."""
    n = buffer_size + 1
    regions = max(1, min(regions, n))
    edges = np.linspace(0, n, regions + 1)
    return tuple(sorted({int(np.ceil(e)) for e in edges[:-1]}))


def build_scenario(cfg: dict, placement_rng: np.random.Generator | None = None) -> Scenario:
    """Turn a validated config dict into model objects.

    ``placement_rng`` drives the random user drop of the hexagonal topology.
    """
    s, topo, ch, arr = cfg["system"], cfg["topology"], cfg["channel"], cfg["arrivals"]
    M, K = s["num_bs"], s["users_per_bs"]
    if M < 1 or K < 1:
        raise ConfigError("num_bs and users_per_bs must be >= 1")
    power = (dbm_to_watt(s["max_power_dbm"]) if s["max_power_dbm"] is not None
             else np.asarray(s["max_power"], dtype=float))
    noise = (float(dbm_to_watt(s["noise_dbm_hz"])) if s["noise_dbm_hz"] is not None
             else float(s["noise_psd"]))

    bs_xy = user_xy = None
    colors = None
    if topo["kind"] == "uniform":
        loss = _shape_param(topo["path_loss"], (M, M, K), "topology.path_loss")
        if topo["cross_loss"] is not None:
            own = np.zeros((M, M, K), dtype=bool)
            own[np.arange(M), np.arange(M), :] = True
            loss = np.where(own, loss, float(topo["cross_loss"]))
    elif topo["kind"] == "hex":
        if placement_rng is None:
            placement_rng = np.random.default_rng(0)
        bs_xy = hex_positions(M, topo["site_distance"])
        user_xy = place_users(placement_rng, bs_xy, K, topo["cell_radius"], topo["min_distance"])
        loss = macro_path_loss(bs_xy, user_xy, topo["intercept_db"], topo["slope_db"])
    else:
        raise ConfigError(f"unknown topology.kind {topo['kind']!r}")
    colors = hex_colors(M) if M > 1 else np.zeros(1, dtype=int)

    beta = _shape_param(s["cost_weights"], (M, K), "system.cost_weights")
    system = SystemConfig(num_bs=M, users_per_bs=K, slot_len=float(s["slot_len"]),
                          bandwidth=float(s["bandwidth"]), noise_psd=noise,
                          coding_gap=float(s["coding_gap"]), max_power=power, path_loss=loss,
                          buffer_size=s["buffer_size"], cost_weights=beta,
                          cost_kind=s["cost_kind"], queue_unit=s["queue_unit"])

    patterns = _build_patterns(cfg["patterns"]["catalog"], M, colors)

    levels = tuple(tuple(float(v) for v in lv) for lv in ch["levels"])
    overrides = {}
    if ch["kind"] == DISCRETE and ch["cross_levels"] is not None:
        cross = tuple(tuple(float(v) for v in lv) for lv in ch["cross_levels"])
        overrides = {(n, m, k): cross for n in range(M) for m in range(M) for k in range(K) if n != m}
    if ch["kind"] not in (DISCRETE, RAYLEIGH):
        raise ConfigError(f"unknown channel.kind {ch['kind']!r}")
    channel = ChannelModel(ch["kind"], (M, M, K), levels=levels,
                           mean_gain=float(ch["mean_gain"]), overrides=overrides)

    rate = _shape_param(arr["rate"], (M, K), "arrivals.rate")
    arrivals = ArrivalModel(arr["kind"], rate, size=arr["size"],
                            mean_packet_bits=float(arr["mean_packet_bits"]))
    packets = system.queue_unit is QueueUnit.PACKETS
    if packets != (arrivals.kind == POISSON_PACKETS):
        raise ConfigError("queue_unit 'packets' goes with arrivals.kind 'poisson_packets' (and only with it)")
    cost = CostModel.for_system(system, arrivals.mean)

    part = cfg["partition"]
    if part["breakpoints"] is not None:
        starts = tuple(int(b) for b in part["breakpoints"])
        if not starts or starts[0] != 0 or list(starts) != sorted(set(starts)) or starts[-1] > system.buffer_size:
            raise ConfigError("partition.breakpoints must be increasing region starts beginning at 0 and <= N_Q")
    else:
        if part["regions"] < 1:
            raise ConfigError("partition.regions must be >= 1")
        starts = uniform_breakpoints(system.buffer_size, part["regions"])

    lr = cfg["learning"]
    learning = LearningOptions(step_a=float(lr["step_a"]), step_b=float(lr["step_b"]),
                               per_visit=lr["per_visit"], epsilon=float(lr["epsilon"]),
                               epsilon_decay=lr["epsilon_decay"],
                               explore_scale=float(lr["explore_scale"]),
                               init_slope=float(lr["init_slope"]))
    bl = cfg["baselines"]
    baselines = BaselineOptions(bl["reuse_factor"], bl["t_slow"], bl["pf_window"], bl["slow_utility"])
    return Scenario(system=system, patterns=patterns, channel=channel, arrivals=arrivals,
                    cost=cost, breakpoints=starts, learning=learning, baselines=baselines,
                    include_bandwidth=lr["include_bandwidth"], colors=colors,
                    bs_xy=bs_xy, user_xy=user_xy)


def _build_patterns(catalog, M, colors) -> PatternSet:
    if isinstance(catalog, list):
        return PatternSet.from_lists(catalog)
    if catalog == "all":
        return PatternSet.all_nonempty(M)
    if catalog == "color_classes":
        # all on, plus each reuse colour class switched off (when that leaves someone on)
        rows = [np.ones(M, dtype=bool)]
        for c in range(3):
            row = colors != c
            if row.any() and not row.all():
                rows.append(row)
        for c in range(3):
            row = colors == c
            if row.any() and not row.all():
                rows.append(row)
        uniq = {tuple(r): r for r in rows}
        return PatternSet(np.array(list(uniq.values())))
    raise ConfigError(f"unknown patterns.catalog {catalog!r}")


def validate_config(cfg: dict) -> Scenario:
    """Full validation: schema, model invariants and run settings."""
    run = cfg["run"]
    if run["horizon"] < 1:
        raise ConfigError("run.horizon must be >= 1")
    if not 0 <= run["warmup_frac"] < 1:
        raise ConfigError("run.warmup_frac must lie in [0, 1)")
    if run["batches"] < 2:
        raise ConfigError("run.batches must be >= 2")
    return build_scenario(cfg, np.random.default_rng(0))
