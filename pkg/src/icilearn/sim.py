"""Slot-level simulation engine, metrics, sweeps and learner checkpoints.

Random streams: every run derives five independent generators from
``SeedSequence([seed, replicate])`` in a fixed order (user placement, fading,
arrivals, packet sizes, exploration).  Fading and arrivals therefore do not
depend on the policy, so policies compared under one seed see identical
channel and traffic realisations.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .baselines import ReuseBaseline, TimescaleBaseline
from .channel import candidate_rates, deliverable_units
from .control import ProposedController, QsiRegionPartition
from .learner import (NoiseDiagnostics, expected_q_targets, expected_value_targets,
                      q_target, record_noise, user_kernel, value_target)
from .model import ConfigError, QueueUnit
from .queueing import PacketBuffers
from .stats import batch_means, replicate_ci

METRICS_FORMAT = "icilearn-metrics/1"
CHECKPOINT_FORMAT = "icilearn-checkpoint/1"
POLICIES = ("proposed", "oracle", "csit", "backpressure", "timescale", "never")
STREAM_NAMES = ("placement", "channel", "arrivals", "packets", "explore")
BLOCK = 4096


def make_streams(seed: int, replicate: int = 0) -> dict:
    seqs = np.random.SeedSequence([int(seed), int(replicate)]).spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(s) for name, s in zip(STREAM_NAMES, seqs)}


@dataclass(frozen=True)
class RunSpec:
    seed: int = 1
    horizon: int = 10_000
    warmup: int | None = None
    policy: str = "proposed"
    checkpoints: tuple = ()
    batches: int = 20
    replicate: int = 0

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        w = self.horizon // 10 if self.warmup is None else self.warmup
        if not 0 <= w < self.horizon:
            raise ConfigError(f"warmup {w} must satisfy 0 <= warmup < horizon {self.horizon}")
        object.__setattr__(self, "warmup", int(w))
        object.__setattr__(self, "checkpoints", tuple(sorted(int(c) for c in self.checkpoints)))

    @classmethod
    def from_config(cls, cfg: dict, **overrides) -> "RunSpec":
        run = cfg["run"]
        args = dict(seed=run["seed"], horizon=run["horizon"],
                    warmup=int(run["horizon"] * run["warmup_frac"]), policy=run["policy"],
                    checkpoints=tuple(run["checkpoints"]), batches=run["batches"])
        args.update({k: v for k, v in overrides.items() if v is not None})
        if "horizon" in overrides and "warmup" not in overrides and overrides["horizon"] is not None:
            args["warmup"] = int(args["horizon"] * run["warmup_frac"])
        return cls(**args)


@dataclass
class MetricsRecord:
    policy: str
    seed: int
    replicate: int
    horizon: int
    warmup: int
    slots: int  # measured (post-warmup) slots
    lam: list  # (M, K) mean arrivals per slot
    mean_cost: float
    cost_ci: float
    avg_delay: float  # slots, averaged over users
    delay_ci: float
    mean_q: list  # (M, K)
    mean_f: list  # (M, K)
    delay: list  # (M, K) slots
    drop_prob: list  # (M, K), dropped / arrived over measured slots
    overall_drop_prob: float
    queue_hist: list  # (M, K, N+1) slot counts
    messages: list  # (M,) BSC refresh messages
    pattern_usage: list  # (P,) slot counts, measured slots
    arrived: list  # (M, K) whole run
    served: list
    dropped: list
    q_initial: list
    q_final: list
    explored: int = 0
    checkpoints: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> dict:
        doc = {k: v for k, v in asdict(self).items() if k != "checkpoints"}
        doc["format"] = METRICS_FORMAT
        return doc

    def accounting_gap(self) -> np.ndarray:
        """arrived - served - dropped - (final - initial); zero on every run."""
        a, s, d = (np.array(x) for x in (self.arrived, self.served, self.dropped))
        return a - s - d - (np.array(self.q_final) - np.array(self.q_initial))


def make_policy(name, scenario, streams, oracle_policy=None):
    if name == "proposed":
        return ProposedController(scenario, streams["explore"])
    if name in ("csit", "backpressure"):
        return ReuseBaseline(scenario, name)
    if name == "timescale":
        return TimescaleBaseline(scenario)
    if name == "oracle":
        if oracle_policy is None:
            from .oracle import OracleModel, relative_value_iteration
            _, oracle_policy = relative_value_iteration(OracleModel(scenario))
        return OraclePolicy(oracle_policy, scenario)
    if name == "never":
        return NeverPolicy(scenario)
    raise ConfigError(f"unknown policy {name!r}")


class _CatalogPolicy:
    def __init__(self, scenario):
        self.patterns = scenario.patterns

    def active(self, p):
        return self.patterns.active[p]

    def learn(self, *args):
        pass


class OraclePolicy(_CatalogPolicy):
    name = "oracle"

    def __init__(self, policy, scenario):
        super().__init__(scenario)
        self.policy = policy
        if not scenario.channel.is_discrete:
            raise ConfigError("the oracle policy needs a discrete channel model")

    def select(self, t, q):
        return self.policy.pattern(q)

    def schedule(self, t, q, p, service, rate, h_state=None):
        return self.policy.schedule(q, int(h_state))


class NeverPolicy(_CatalogPolicy):
    name = "never"

    def select(self, t, q):
        return 0

    def schedule(self, t, q, p, service, rate, h_state=None):
        return np.full(q.shape[0], -1)


def run(spec: RunSpec, scenario, *, oracle_policy=None, streams=None, policy=None,
        trace=None, observer=None) -> MetricsRecord:
    """Simulate one run.

    Each slot: pattern selection (with the BSC refresh), per-BS scheduling,
    transmission and queue update, then learning from the slot's
    observations.  ``trace`` (a csv.writer) receives one row per slot;
    ``observer(t, q, p, arrivals, service, post, prev_post)`` sees every
    slot's learning inputs.
    """
    system = scenario.system
    M, K = system.shape
    n = system.buffer_size
    tau = system.slot_len
    streams = streams or make_streams(spec.seed, spec.replicate)
    pol = policy or make_policy(spec.policy, scenario, streams, oracle_policy)
    packets = system.queue_unit is QueueUnit.PACKETS
    discrete = scenario.channel.is_discrete
    has_rates = hasattr(pol, "rates")
    csi_hook = getattr(pol, "observe_csi", None)
    pf_hook = getattr(pol, "record_throughput", None)
    sched_scale = 1.0 if scenario.include_bandwidth else 1.0 / system.bandwidth

    q = np.zeros((M, K), dtype=np.int64)
    q_initial = q.copy()
    buffers = PacketBuffers((M, K), n) if packets else None
    H, warm = spec.horizon, spec.warmup
    q_track = np.empty((H - warm, M, K), dtype=np.int16)
    arrived = np.zeros((M, K), dtype=np.int64)
    served_tot = np.zeros((M, K), dtype=np.int64)
    dropped_tot = np.zeros((M, K), dtype=np.int64)
    arr_meas = np.zeros((M, K), dtype=np.int64)
    drop_meas = np.zeros((M, K), dtype=np.int64)
    usage = {}
    rate_cache = {}
    checkpoints = {}
    ck = list(spec.checkpoints)
    mk = np.indices((M, K))
    prev_post = None

    for t in range(H):
        i = t % BLOCK
        if i == 0:
            size = min(BLOCK, H - t)
            h_blk, st_blk = scenario.channel.sample_block(streams["channel"], size)
            a_blk = scenario.arrivals.sample_block(streams["arrivals"], size)
            if packets:
                sizes = scenario.arrivals.sample_packet_sizes(streams["packets"], int(a_blk.sum()))
                cursor = 0
        h = h_blk[i]
        a = a_blk[i]
        state = int(st_blk[i]) if discrete else None
        if csi_hook is not None:
            csi_hook(t, h)
        p = pol.select(t, q)

        key = (p, state)
        cached = rate_cache.get(key) if discrete else None
        if cached is None:
            if has_rates:
                rate = pol.rates(h, p)
            else:
                rate, _, _ = candidate_rates(system, h, scenario.patterns.active[p])
            u_bits = np.minimum(deliverable_units(rate, tau), n)
            u_sched = u_bits if sched_scale == 1.0 else np.minimum(
                deliverable_units(rate * sched_scale, tau), n)
            cached = (rate, u_bits, u_sched)
            if discrete:
                rate_cache[key] = cached
        rate, u, u_sched = cached
        budget = rate * tau
        if packets:
            # whole packets the bit budget completes; scheduling sees the same count
            u = u_sched = buffers.completions(budget)

        choice = pol.schedule(t, q, p, u_sched, rate, state)
        on = np.flatnonzero(choice >= 0)
        if packets:
            post = q.copy()
            for m in on:
                k = choice[m]
                if q[m, k] > 0:
                    post[m, k] -= buffers.serve(m, k, budget[m, k])
            drop = np.zeros((M, K), dtype=np.int64)
            for m, k in zip(*np.nonzero(a)):
                drop[m, k] = buffers.admit(m, k, sizes[cursor: cursor + a[m, k]])
                cursor += a[m, k]
            nq = buffers.count.copy()
        else:
            cap = np.zeros((M, K), dtype=np.int64)
            cap[on, choice[on]] = u[on, choice[on]]
            post = np.maximum(q - cap, 0)
            total = post + a
            nq = np.minimum(total, n)
            drop = total - nq
        served = q - post

        arrived += a
        served_tot += served
        dropped_tot += drop
        if t >= warm:
            q_track[t - warm] = q
            arr_meas += a
            drop_meas += drop
            usage[p] = usage.get(p, 0) + 1
        if pf_hook is not None:
            pf_hook(np.where(served > 0, rate, 0.0))
        if observer is not None:
            observer(t, q, p, a, u, post, prev_post)
        pol.learn(t, q, p, a, u, post)
        if trace is not None:
            trace.writerow([t, p, *q.ravel().tolist(), *a.ravel().tolist(),
                            *served.ravel().tolist(), *drop.ravel().tolist()])
        prev_post = post
        q = nq
        if ck and t + 1 == ck[0]:
            ck.pop(0)
            if isinstance(pol, ProposedController):
                checkpoints[t + 1] = pol.bank.snapshot()

    return _summarize(spec, scenario, pol, q_track, q_initial, q, arrived, served_tot,
                      dropped_tot, arr_meas, drop_meas, usage, checkpoints)


def _summarize(spec, scenario, pol, q_track, q_initial, q_final, arrived, served, dropped,
               arr_meas, drop_meas, usage, checkpoints) -> MetricsRecord:
    M, K = scenario.shape
    n = scenario.system.buffer_size
    lam = scenario.arrivals.mean
    cost = scenario.cost
    qf = q_track.astype(float)
    f = cost.f(qf) * cost.beta[None]
    per_slot = f.reshape(len(qf), -1).sum(axis=1)
    mean_cost, cost_ci = batch_means(per_slot, spec.batches)
    with np.errstate(divide="ignore", invalid="ignore"):
        dly = np.where(lam > 0, qf / lam[None], 0.0)
    delay_series = dly.reshape(len(qf), -1).mean(axis=1)
    avg_delay, delay_ci = batch_means(delay_series, spec.batches)
    hist = np.zeros((M, K, n + 1), dtype=np.int64)
    for m in range(M):
        for k in range(K):
            hist[m, k] = np.bincount(q_track[:, m, k], minlength=n + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        dp = np.where(arr_meas > 0, drop_meas / np.maximum(arr_meas, 1), 0.0)
    total_arr = arr_meas.sum()
    P = len(scenario.patterns)
    usage_arr = np.zeros(P, dtype=np.int64)
    for p, c in usage.items():
        if p >= 0:
            usage_arr[p] = c
    messages = getattr(pol, "messages", np.zeros(M, dtype=np.int64))
    return MetricsRecord(
        policy=getattr(pol, "name", spec.policy), seed=spec.seed, replicate=spec.replicate,
        horizon=spec.horizon, warmup=spec.warmup, slots=len(qf), lam=lam.tolist(),
        mean_cost=mean_cost, cost_ci=cost_ci, avg_delay=avg_delay, delay_ci=delay_ci,
        mean_q=qf.mean(axis=0).tolist(), mean_f=f.mean(axis=0).tolist(),
        delay=dly.mean(axis=0).tolist(), drop_prob=dp.tolist(),
        overall_drop_prob=float(drop_meas.sum() / total_arr) if total_arr else 0.0,
        queue_hist=hist.tolist(), messages=np.asarray(messages).tolist(),
        pattern_usage=usage_arr.tolist(), arrived=arrived.tolist(), served=served.tolist(),
        dropped=dropped.tolist(), q_initial=q_initial.tolist(), q_final=q_final.tolist(),
        explored=getattr(pol, "explored", 0), checkpoints=checkpoints)


def run_config(cfg: dict, spec: RunSpec | None = None, oracle_policy=None, **kwargs):
    """Build the scenario (placement drawn from the run's seed) and run it."""
    spec = spec or RunSpec.from_config(cfg)
    streams = make_streams(spec.seed, spec.replicate)
    scenario = cfgmod.build_scenario(cfg, streams["placement"])
    return run(spec, scenario, oracle_policy=oracle_policy, streams=streams, **kwargs)


# --- sweeps -----------------------------------------------------------------

def _sweep_job(args):
    cfg, spec = args
    return run_config(cfg, spec)


def sweep(cfg: dict, param: str, values, policies=("proposed",), replicates: int = 1,
          horizon: int | None = None, jobs: int = 1) -> list[dict]:
    """One run per (value, policy, replicate); rows aggregate replicates.

    Replicate ``r`` uses seed ``(run.seed, r)`` at every grid point and for
    every policy (common random numbers).  With a single replicate the CI is
    the run's batch-means interval; otherwise a t-interval over replicates.
    """
    if not values:
        raise ConfigError("sweep grid is empty")
    jobs_list, keys = [], []
    for v in values:
        point = cfgmod.set_path(cfg, param, v)
        for pol in policies:
            if pol == "oracle":
                continue
            for r in range(replicates):
                spec = RunSpec.from_config(point, policy=pol, horizon=horizon, replicate=r,
                                           checkpoints=())
                jobs_list.append((point, spec))
                keys.append((v, pol, r))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_sweep_job, jobs_list))
    else:
        results = [_sweep_job(j) for j in jobs_list]

    # the oracle policy is solved once per grid point and shared by replicates
    if "oracle" in policies:
        from .oracle import OracleModel, relative_value_iteration
        for v in values:
            point = cfgmod.set_path(cfg, param, v)
            scenario = cfgmod.build_scenario(point)
            _, pol = relative_value_iteration(OracleModel(scenario))
            for r in range(replicates):
                spec = RunSpec.from_config(point, policy="oracle", horizon=horizon, replicate=r,
                                           checkpoints=())
                results.append(run_config(point, spec, oracle_policy=pol))
                keys.append((v, "oracle", r))

    rows = []
    for v in values:
        for pol in policies:
            recs = [rec for (kv, kp, _), rec in zip(keys, results) if kv == v and kp == pol]
            rows.append(aggregate(param, v, pol, recs))
    return rows


def aggregate(param, value, policy, recs) -> dict:
    if len(recs) == 1:
        r = recs[0]
        delay, dci, cost, cci = r.avg_delay, r.delay_ci, r.mean_cost, r.cost_ci
    else:
        delay, dci = replicate_ci([r.avg_delay for r in recs])
        cost, cci = replicate_ci([r.mean_cost for r in recs])
    slots = sum(r.slots for r in recs)
    msgs = np.mean([np.mean(r.messages) / r.horizon for r in recs]) if recs else math.nan
    hist = np.sum([np.array(r.queue_hist).sum(axis=(0, 1)) for r in recs], axis=0)
    return {
        "param": param, "value": value, "policy": policy, "replicates": len(recs),
        "avg_delay": delay, "delay_ci": dci, "mean_cost": cost, "cost_ci": cci,
        "drop_prob": float(np.mean([r.overall_drop_prob for r in recs])),
        "messages_per_bs_per_slot": float(msgs), "slots": slots,
        "queue_hist": hist.tolist(),
    }


# --- learner checks ---------------------------------------------------------

def fixed_point_distances(scenario, checkpoints: dict):
    """Relative max-norm distance of checkpointed tables to the direct solutions.

    Returns ``{t: (value_distance, q_distance)}``; each distance is the
    largest over users of ``||learned - fp||_inf / (1 + ||fp||_inf)``.
    """
    from .learner import solve_qfactor_fixed_point, solve_value_fixed_point
    M, K = scenario.shape
    vfp = [[solve_value_fixed_point(scenario, m, k).values for k in range(K)] for m in range(M)]
    qfp = [[solve_qfactor_fixed_point(scenario, m, k).values for k in range(K)] for m in range(M)]
    out = {}
    for t, (values, qf) in sorted(checkpoints.items()):
        dv = max(_rel(values[m, k], vfp[m][k]) for m in range(M) for k in range(K))
        dq = max(_rel(qf[m, k], qfp[m][k]) for m in range(M) for k in range(K))
        out[t] = (dv, dq)
    return out


def _rel(x, ref) -> float:
    return float(np.max(np.abs(x - ref)) / (1.0 + np.max(np.abs(ref))))


def noise_study(scenario, samples: int, seed: int = 1, user=(0, 0), values=None, qf=None,
                explore: float = 1.0):
    """Update-noise statistics with frozen tables.

    Runs the proposed controller with learning switched off and records, for
    one user, ``Z = sampled target - expected target`` for both update rules
    until each has ``samples`` observations.  Tables are fixed at
    ``values``/``qf``, by default at the user's direct fixed points (every
    other user keeps its initial tables).  With ``explore=1`` patterns are
    drawn uniformly, so the reference-pattern gate of the value rule fires
    on about one slot in ``P``; the noise is a martingale difference under
    any policy whose pattern is fixed before the slot's draws.
    """
    from .learner import solve_qfactor_fixed_point, solve_value_fixed_point
    m, k = user
    ker = user_kernel(scenario, m, k)
    scenario = replace(scenario, learning=replace(scenario.learning, epsilon=explore,
                                                  epsilon_decay="none"))
    ctrl = ProposedController(scenario, make_streams(seed)["explore"])
    bank = ctrl.bank
    bank.values[m, k] = solve_value_fixed_point(scenario, m, k).values if values is None else values
    bank.qf[m, k] = solve_qfactor_fixed_point(scenario, m, k).values if qf is None else qf
    bank.frozen = True
    vt = bank.value_table(m, k)
    qt = bank.q_table(m, k)
    ev = expected_value_targets(ker, vt.values)
    eq = expected_q_targets(ker, qt.values)
    dv, dq = NoiseDiagnostics(), NoiseDiagnostics()

    def obs(t, q, p, a, u, post, prev_post):
        if dq.count < samples:
            qq = int(q[m, k])
            record_noise(dq, q_target(qt, qq, int(a[m, k]), int(u[m, k])), eq[qq, p])
        if prev_post is not None and p == vt.ref_pattern and dv.count < samples:
            x = int(prev_post[m, k])
            record_noise(dv, value_target(vt, x, int(a[m, k]), int(u[m, k])), ev[x])

    # size the run from the gate frequency; grow it if the gate fired less often
    horizon = max(samples, int(1.2 * samples / max(explore / len(scenario.patterns), 1e-3)))
    while dv.count < samples or dq.count < samples:
        dv, dq = NoiseDiagnostics(), NoiseDiagnostics()
        streams = make_streams(seed)
        ctrl.rng = streams["explore"]
        ctrl.prev_post = None
        ctrl.info = type(ctrl.info).initial(bank.qf, np.zeros(scenario.shape, dtype=np.int64),
                                            ctrl.partition)
        run(RunSpec(seed=seed, horizon=horizon, warmup=0, policy="proposed"), scenario,
            streams=streams, policy=ctrl, observer=obs)
        horizon *= 2
    return dv, dq


# --- output -----------------------------------------------------------------

USER_COLUMNS = ["policy", "seed", "replicate", "m", "k", "lambda", "mean_q", "delay_slots",
                "mean_f", "drop_prob", "arrived", "served", "dropped"]


def write_metrics(record: MetricsRecord, out_dir, stem="metrics") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath = out / f"{stem}.json"
    jpath.write_text(json.dumps(record.to_json(), indent=1))
    cpath = out / f"{stem}.csv"
    M = len(record.mean_q)
    K = len(record.mean_q[0])
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(USER_COLUMNS)
        for m in range(M):
            for k in range(K):
                w.writerow([record.policy, record.seed, record.replicate, m, k, record.lam[m][k],
                            record.mean_q[m][k], record.delay[m][k], record.mean_f[m][k],
                            record.drop_prob[m][k], record.arrived[m][k], record.served[m][k],
                            record.dropped[m][k]])
    return jpath, cpath


def load_metrics(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != METRICS_FORMAT:
        raise ValueError(f"{path}: not a metrics file")
    return doc


SWEEP_COLUMNS = ["param", "value", "policy", "replicates", "avg_delay", "delay_ci", "mean_cost",
                 "cost_ci", "drop_prob", "messages_per_bs_per_slot", "slots"]


def write_sweep(rows, out_dir, stem="sweep") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cpath = out / f"{stem}.csv"
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in SWEEP_COLUMNS])
    jpath = out / f"{stem}.json"
    jpath.write_text(json.dumps({"format": "icilearn-sweep/1", "rows": rows}, indent=1))
    return cpath, jpath


def write_checkpoints(checkpoints: dict, scenario, out_dir) -> Path:
    """Checkpoint file: a JSON header line, then one dense row per table.

    Rows are ``slot,kind,m,k,pattern,v_0,...,v_N``; ``kind`` is ``value``
    (pattern -1) or ``qfactor`` (one row per pattern).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "checkpoints.csv"
    M, K = scenario.shape
    n = scenario.system.buffer_size
    refs = [scenario.patterns.reference_pattern(m) for m in range(M)]
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps({"format": CHECKPOINT_FORMAT, "shape": [M, K],
                                    "buffer_size": n, "patterns": len(scenario.patterns),
                                    "reference_patterns": refs}) + "\n")
        w = csv.writer(fh)
        w.writerow(["slot", "kind", "m", "k", "pattern"] + [f"v{i}" for i in range(n + 1)])
        for t, (values, qf) in sorted(checkpoints.items()):
            for m in range(M):
                for k in range(K):
                    w.writerow([t, "value", m, k, -1, *values[m, k].tolist()])
                    for p in range(qf.shape[3]):
                        w.writerow([t, "qfactor", m, k, p, *qf[m, k, :, p].tolist()])
    return path


def read_checkpoints(path) -> tuple[dict, dict]:
    lines = Path(path).read_text().splitlines()
    header = json.loads(lines[0][2:])
    M, K = header["shape"]
    n1 = header["buffer_size"] + 1
    P = header["patterns"]
    out: dict = {}
    for row in csv.DictReader(lines[1:]):
        t = int(row["slot"])
        if t not in out:
            out[t] = (np.zeros((M, K, n1)), np.zeros((M, K, n1, P)))
        vals = np.array([float(row[f"v{i}"]) for i in range(n1)])
        m, k, p = int(row["m"]), int(row["k"]), int(row["pattern"])
        if row["kind"] == "value":
            out[t][0][m, k] = vals
        else:
            out[t][1][m, k, :, p] = vals
    return header, out


# --- fixed-point verification -------------------------------------------------

FP_THRESHOLD = 0.05
FP_SLACK = 0.10


def verify_fixed_points(cfg: dict, horizon: int = 1_000_000, checkpoints=(10_000, 100_000, 1_000_000),
                        freeze: bool = False, seed: int | None = None) -> dict:
    """Learn inside the simulator and compare checkpointed tables with the direct solutions.

    Passing needs the final distances below ``FP_THRESHOLD`` and each series
    to be nonincreasing across checkpoints up to a ``FP_SLACK`` relative
    allowance.  ``freeze`` switches learning off (a negative control).
    """
    streams_seed = cfg["run"]["seed"] if seed is None else seed
    spec = RunSpec(seed=streams_seed, horizon=horizon, warmup=0, policy="proposed",
                   checkpoints=tuple(c for c in checkpoints if c <= horizon))
    streams = make_streams(spec.seed)
    scenario = cfgmod.build_scenario(cfg, streams["placement"])
    if not scenario.channel.is_discrete or scenario.system.queue_unit is not QueueUnit.BITS:
        raise ConfigError("fixed-point verification needs a discrete channel and bit queues "
                          "(try example1.cfg or set channel.kind = \"discrete\")")
    local_states = max(int(np.prod([len(scenario.channel.link_levels((n, m, k))[0])
                                    for n in range(scenario.system.num_bs)]))
                       for m in range(scenario.system.num_bs)
                       for k in range(scenario.system.users_per_bs))
    if local_states > 1_000_000:
        raise ConfigError(f"per-user CSI has {local_states} states; too many for the direct solvers")
    ctrl = ProposedController(scenario, streams["explore"])
    ctrl.bank.frozen = freeze
    rec = run(spec, scenario, streams=streams, policy=ctrl)
    dist = fixed_point_distances(scenario, rec.checkpoints)
    slots = sorted(dist)
    value_series = [dist[t][0] for t in slots]
    q_series = [dist[t][1] for t in slots]

    def series_ok(s):
        below = bool(s) and s[-1] < FP_THRESHOLD
        mono = all(b <= a * (1 + FP_SLACK) for a, b in zip(s, s[1:]))
        return below, mono

    vb, vm = series_ok(value_series)
    qb, qm = series_ok(q_series)
    return {"slots": slots, "value_distance": value_series, "q_distance": q_series,
            "value_below": vb, "value_monotone": vm, "q_below": qb, "q_monotone": qm,
            "passed": vb and vm and qb and qm, "threshold": FP_THRESHOLD, "slack": FP_SLACK,
            "checkpoints": rec.checkpoints, "scenario": scenario, "record": rec}
