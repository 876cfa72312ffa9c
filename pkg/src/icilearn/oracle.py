"""Brute-force centralized solver for small discrete instances.

The equivalent Bellman equation is

    V(Q) + theta = g(Q) + min_p sum_H Pr(H) min_s E_A[ V(min((Q - U s)^+ + A, N_Q)) ]

The pattern is chosen per queue state, the schedule per (queue, CSI) pair.
Within a CSI state the schedules of different BSs are enumerated jointly:
V is not a sum of per-BS terms, so minimising BS by BS would not be exact.

Queue states are flattened in C order over ``(m, k)``; CSI states use the
channel model's global state index.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import candidate_rates, deliverable_units
from .model import ConfigError, per_slot_cost
from .stats import batch_means

MAX_PAIRS = 2_000_000
FORMAT = "icilearn-oracle/1"


class UnsupportedInstance(ConfigError):
    """The instance is continuous or too large for exhaustive solving."""


class ConvergenceError(RuntimeError):
    def __init__(self, message, span_history=()):
        super().__init__(message)
        self.span_history = list(span_history)


def schedule_options(active, users_per_bs: int) -> np.ndarray:
    """Joint per-BS choices ``(J, M)``; -1 means nobody.

    Each active BS offers users 0..K-1 and then "nobody"; inactive BSs only
    "nobody".  Rows come out in lexicographic order of the per-BS options, so
    an argmin over rows breaks ties toward lower user indices.
    """
    per_bs = [list(range(users_per_bs)) + [-1] if a else [-1] for a in active]
    return np.array(list(itertools.product(*per_bs)), dtype=np.int64).reshape(-1, len(per_bs))


class OracleModel:
    """Precomputed transition structure of a discrete scenario."""

    def __init__(self, scenario, max_pairs: int = MAX_PAIRS):
        system = scenario.system
        if not scenario.channel.is_discrete:
            raise UnsupportedInstance("the oracle needs a discrete channel model")
        M, K = system.shape
        self.scenario = scenario
        self.shape = (M, K)
        self.n = system.buffer_size
        self.users = M * K
        self.dims = (self.n + 1,) * self.users
        self.num_q = (self.n + 1) ** self.users
        self.num_h = scenario.channel.num_states
        if self.num_q * self.num_h > max_pairs:
            raise UnsupportedInstance(
                f"{self.num_q} queue states x {self.num_h} CSI states exceeds the {max_pairs} pair limit")

        self.q_grid = np.indices(self.dims).reshape(self.users, -1).T.reshape(-1, M, K)
        self.h_states, self.h_prob = scenario.channel.enumerate_states()
        self.cost = np.array([per_slot_cost(q, scenario.cost) for q in self.q_grid])
        self.strides = np.array([(self.n + 1) ** (self.users - 1 - i) for i in range(self.users)])

        # candidate service of every user under every pattern and CSI state
        P = len(scenario.patterns)
        self.service = np.zeros((P, self.num_h, M, K), dtype=np.int64)
        for p, active in enumerate(scenario.patterns.active):
            for s, h in enumerate(self.h_states):
                rate, _, _ = candidate_rates(system, h, active)
                self.service[p, s] = np.minimum(deliverable_units(rate, system.slot_len), self.n)

        self.options = [schedule_options(a, K) for a in scenario.patterns.active]
        self.post_idx = []
        self.valid = []
        flat_q = self.q_grid.reshape(self.num_q, self.users)
        for p, opts in enumerate(self.options):
            idx = np.empty((self.num_q, self.num_h, len(opts)), dtype=np.int64)
            ok = np.empty((self.num_q, len(opts)), dtype=bool)
            for j, choice in enumerate(opts):
                sched = np.zeros((M, K), dtype=bool)
                on = choice >= 0
                sched[np.flatnonzero(on), choice[on]] = True
                served = (self.service[p] * sched).reshape(self.num_h, self.users)
                post = np.maximum(flat_q[:, None, :] - served[None], 0)
                idx[:, :, j] = post @ self.strides
                ok[:, j] = np.all(flat_q[:, sched.ravel()] > 0, axis=1)
            self.post_idx.append(idx)
            self.valid.append(ok)

        # per-user arrival operators T[x, y] = Pr(min(x + A, N) = y)
        self.arrival_ops = []
        self.arrival_pmfs = []
        for m in range(M):
            for k in range(K):
                _, pmf = scenario.arrivals.user_pmf(m, k, self.n)
                T = np.zeros((self.n + 1, self.n + 1))
                for x in range(self.n + 1):
                    for a, pa in enumerate(pmf):
                        T[x, min(x + a, self.n)] += pa
                self.arrival_ops.append(T)
                self.arrival_pmfs.append(pmf)

    def index_of(self, q) -> int:
        return int(np.asarray(q).ravel() @ self.strides)

    def expected_after_arrivals(self, V) -> np.ndarray:
        """``W(x) = E_A[V(min(x + A, N))]`` over flattened post-decision states."""
        W = np.asarray(V, dtype=float).reshape(self.dims)
        for axis, T in enumerate(self.arrival_ops):
            W = np.moveaxis(np.tensordot(T, W, axes=([1], [axis])), 0, axis)
        return W.ravel()

    def pattern_values(self, V) -> np.ndarray:
        """``(num_q, P)``: expected continuation value of each pattern."""
        W = self.expected_after_arrivals(V)
        cols = [W[idx].min(axis=2) @ self.h_prob for idx in self.post_idx]
        return np.stack(cols, axis=1)

    def operator(self, V) -> tuple[np.ndarray, np.ndarray]:
        """Bellman operator ``T(V)`` and the greedy pattern per state."""
        vals = self.pattern_values(V)
        best = vals.argmin(axis=1)
        return self.cost + vals[np.arange(self.num_q), best], best


@dataclass
class CentralValueTable:
    values: np.ndarray  # (num_q,) flattened, C order over (m, k)
    theta: float
    dims: tuple
    ref_state: int = 0
    iterations: int = 0
    span: float = 0.0

    def at(self, q) -> float:
        return float(self.values.reshape(self.dims)[tuple(np.asarray(q).ravel())])

    def tensor(self) -> np.ndarray:
        return self.values.reshape(self.dims)


@dataclass
class CentralPolicy:
    pattern_of: np.ndarray  # (num_q,) pattern index
    schedule_of: np.ndarray  # (num_q, num_h, M) scheduled user per BS or -1
    shape: tuple
    buffer_size: int

    def _index(self, q):
        n1 = self.buffer_size + 1
        flat = np.asarray(q).ravel()
        return int(np.ravel_multi_index(tuple(flat), (n1,) * flat.size))

    def pattern(self, q) -> int:
        return int(self.pattern_of[self._index(q)])

    def schedule(self, q, h_state: int) -> np.ndarray:
        return self.schedule_of[self._index(q), h_state]


def bellman_rhs(model: OracleModel, q, V):
    """RHS at one queue state: ``(value, best_pattern, best_schedule_per_H)``.

    ``best_schedule_per_H`` has shape ``(num_h, M)``.
    """
    qi = model.index_of(q)
    W = model.expected_after_arrivals(V)
    best_val, best_p, best_sched = math.inf, -1, None
    for p, idx in enumerate(model.post_idx):
        vals = np.where(model.valid[p][qi][None, :], W[idx[qi]], np.inf)
        j = vals.argmin(axis=1)
        total = float(vals[np.arange(model.num_h), j] @ model.h_prob)
        if total < best_val:
            best_val, best_p, best_sched = total, p, model.options[p][j]
    return model.cost[qi] + best_val, best_p, best_sched


def bellman_rhs_enumerated(model: OracleModel, q, V):
    """Same quantity by brute force over whole partitioned actions.

    Enumerates every pattern and every map from CSI states to valid joint
    schedules, and computes the arrival expectation directly.  Exponential in
    the number of CSI states: only for tiny instances.
    """
    M, K = model.shape
    q = np.asarray(q).reshape(M, K)
    Vt = np.asarray(V, dtype=float).reshape(model.dims)
    combos = list(itertools.product(*[range(len(p)) for p in model.arrival_pmfs]))

    def after_arrivals(post):
        total = 0.0
        for a in combos:
            pr = np.prod([model.arrival_pmfs[u][a[u]] for u in range(model.users)])
            if pr:
                nxt = np.minimum(post.ravel() + np.array(a), model.n)
                total += pr * Vt[tuple(nxt)]
        return total

    best = math.inf
    for p, active in enumerate(model.scenario.patterns.active):
        choices = []
        for m in range(M):
            opts = [k for k in range(K) if active[m] and q[m, k] > 0] + [-1]
            choices.append(opts)
        joint = list(itertools.product(*choices))
        # per CSI state, value of each joint schedule
        table = np.empty((model.num_h, len(joint)))
        for s in range(model.num_h):
            for j, choice in enumerate(joint):
                served = np.zeros((M, K), dtype=np.int64)
                for m, k in enumerate(choice):
                    if k >= 0:
                        served[m, k] = model.service[p, s, m, k]
                table[s, j] = after_arrivals(np.maximum(q - served, 0))
        for assign in itertools.product(range(len(joint)), repeat=model.num_h):
            val = float(sum(model.h_prob[s] * table[s, assign[s]] for s in range(model.num_h)))
            best = min(best, val)
    return model.cost[model.index_of(q)] + best


def relative_value_iteration(model: OracleModel, tol: float = 1e-9, max_iters: int = 100_000,
                             damping: float = 1.0, ref_state: int = 0):
    """Relative value iteration ``V <- T(V) - T(V)(ref)`` until the span of the change drops below ``tol``.

    ``damping < 1`` mixes in the previous iterate (an aperiodicity transform
    that leaves the fixed point unchanged).
    """
    V = np.zeros(model.num_q)
    spans = []
    for it in range(1, max_iters + 1):
        TV, _ = model.operator(V)
        new = TV - TV[ref_state]
        if damping != 1.0:
            new = (1 - damping) * V + damping * new
        diff = new - V
        span = float(diff.max() - diff.min())
        spans.append(span)
        V = new
        if span < tol:
            break
    else:
        raise ConvergenceError(f"no convergence to span {tol} within {max_iters} iterations",
                               spans[-100:])
    TV, _ = model.operator(V)
    table = CentralValueTable(V, float(TV[ref_state]), model.dims, ref_state, it, spans[-1])
    return table, extract_policy(model, V)


def extract_policy(model: OracleModel, V) -> CentralPolicy:
    W = model.expected_after_arrivals(V)
    M, K = model.shape
    vals = model.pattern_values(V)
    pattern_of = vals.argmin(axis=1)
    schedule_of = np.full((model.num_q, model.num_h, M), -1, dtype=np.int64)
    for p, idx in enumerate(model.post_idx):
        rows = np.flatnonzero(pattern_of == p)
        if rows.size == 0:
            continue
        v = np.where(model.valid[p][rows][:, None, :], W[idx[rows]], np.inf)
        j = v.argmin(axis=2)
        schedule_of[rows] = model.options[p][j]
    return CentralPolicy(pattern_of, schedule_of, (M, K), model.n)


def bellman_residual(model: OracleModel, table: CentralValueTable) -> np.ndarray:
    TV, _ = model.operator(table.values)
    return TV - table.values - table.theta


def is_monotone(values, dims, tol: float = 0.0) -> bool:
    """Component-wise nondecreasing along every queue axis (hence over all ordered pairs)."""
    t = np.asarray(values).reshape(dims)
    return all(np.all(np.diff(t, axis=ax) >= -tol) for ax in range(t.ndim))


def monotone_violations(values, dims, tol: float = 0.0) -> int:
    """Count ordered pairs ``Q1 >= Q2`` with ``V(Q1) < V(Q2) - tol`` by direct enumeration."""
    v = np.asarray(values).ravel()
    grid = np.indices(dims).reshape(len(dims), -1).T
    bad = 0
    for i, q1 in enumerate(grid):
        ge = np.all(q1[None, :] >= grid, axis=1)
        bad += int(np.sum(v[i] < v[ge] - tol))
    return bad


# --- policy evaluation by simulation -----------------------------------------

def _streams(rng):
    if isinstance(rng, np.random.Generator):
        seeds = rng.bit_generator.seed_seq.spawn(2)
    else:
        seeds = np.random.SeedSequence(rng).spawn(2)
    return np.random.default_rng(seeds[0]), np.random.default_rng(seeds[1])


@dataclass
class PolicyEstimate:
    mean: float
    half_width: float
    horizon: int
    warmup: int
    costs: np.ndarray = field(repr=False, default=None)


def evaluate_policy(policy, scenario, horizon: int, rng=0, warmup: int | None = None,
                    batches: int = 20, q0=None, model: OracleModel | None = None) -> PolicyEstimate:
    """Average per-slot cost of a two-timescale policy by direct simulation.

    ``policy`` needs ``pattern(q) -> index`` and ``schedule(q, h_state) ->
    per-BS choice`` (the CSI enters through the discrete state index).
    Tabular :class:`CentralPolicy` objects take a fast integer-indexed path.
    """
    if warmup is None:
        warmup = horizon // 10
    if horizon <= warmup:
        raise ValueError(f"horizon {horizon} must exceed warmup {warmup}")
    if not scenario.channel.is_discrete:
        raise UnsupportedInstance("policy evaluation needs a discrete channel model")
    ch_rng, arr_rng = _streams(rng)
    system = scenario.system
    M, K = system.shape
    n = system.buffer_size
    _, states = scenario.channel.sample_block(ch_rng, horizon)
    arrivals = np.minimum(scenario.arrivals.sample_block(arr_rng, horizon), n)
    q = np.zeros((M, K), dtype=np.int64) if q0 is None else np.array(q0, dtype=np.int64)

    if isinstance(policy, CentralPolicy):
        costs = _evaluate_table(policy, scenario, states, arrivals, q, model)
    else:
        costs = np.empty(horizon)
        service_cache = {}
        h_all, _ = scenario.channel.enumerate_states()
        for t in range(horizon):
            costs[t] = per_slot_cost(q, scenario.cost)
            p = policy.pattern(q)
            key = (p, int(states[t]))
            if key not in service_cache:
                rate, _, _ = candidate_rates(system, h_all[states[t]], scenario.patterns.active[p])
                service_cache[key] = deliverable_units(rate, system.slot_len)
            choice = np.asarray(policy.schedule(q, int(states[t])))
            served = np.zeros((M, K), dtype=np.int64)
            on = np.flatnonzero(choice >= 0)
            served[on, choice[on]] = service_cache[key][on, choice[on]]
            q = np.minimum(np.maximum(q - served, 0) + arrivals[t], n)
    mean, half = batch_means(costs[warmup:], batches)
    return PolicyEstimate(mean, half, horizon, warmup, costs)


def _evaluate_table(policy, scenario, states, arrivals, q, model):
    M, K = policy.shape
    n = policy.buffer_size
    users = M * K
    dims = (n + 1,) * users
    num_q = (n + 1) ** users
    grid = np.indices(dims).reshape(users, -1).T
    strides = np.array([(n + 1) ** (users - 1 - i) for i in range(users)])
    if model is None:
        model = OracleModel(scenario)
    # post-decision flat index for every (queue state, CSI state) under the policy
    post = np.empty((num_q, model.num_h), dtype=np.int64)
    for p, idx in enumerate(model.post_idx):
        rows = np.flatnonzero(policy.pattern_of == p)
        if rows.size == 0:
            continue
        opts = model.options[p]
        # locate each chosen joint schedule among the pattern's options
        sched = policy.schedule_of[rows]  # (r, H, M)
        match = np.all(sched[:, :, None, :] == opts[None, None, :, :], axis=3)
        j = match.argmax(axis=2)
        post[rows] = np.take_along_axis(idx[rows], j[:, :, None], axis=2)[:, :, 0]
    a_idx = (arrivals.reshape(len(arrivals), users) @ strides).tolist()
    # next state from (post index, arrival index) computed digit-wise on demand
    add_cache: dict = {}
    post_l = post.tolist()
    cost_l = model.cost.tolist()
    qi = int(q.ravel() @ strides)
    states_l = states.tolist()
    out = np.empty(len(states))
    for t in range(len(states)):
        out[t] = cost_l[qi]
        x = post_l[qi][states_l[t]]
        key = (x, a_idx[t])
        nxt = add_cache.get(key)
        if nxt is None:
            nxt = int(np.minimum(grid[x] + grid[a_idx[t]], n) @ strides)
            add_cache[key] = nxt
        qi = nxt
    return out


class NeverTransmit:
    """Keeps every BS silent (pattern 0, nobody scheduled)."""

    def __init__(self, num_bs: int):
        self.num_bs = num_bs

    def pattern(self, q) -> int:
        return 0

    def schedule(self, q, h_state):
        return np.full(self.num_bs, -1)


# --- serialization -----------------------------------------------------------

def save_oracle(path, table: CentralValueTable, policy: CentralPolicy, meta=None) -> Path:
    path = Path(path)
    doc = {
        "format": FORMAT,
        "theta": table.theta,
        "ref_state": table.ref_state,
        "dims": list(table.dims),
        "iterations": table.iterations,
        "final_span": table.span,
        "values": table.values.tolist(),
        "pattern_of": policy.pattern_of.tolist(),
        "schedule_of": policy.schedule_of.tolist(),
        "shape": list(policy.shape),
        "buffer_size": policy.buffer_size,
        "meta": meta or {},
    }
    path.write_text(json.dumps(doc))
    return path


def load_oracle(path) -> tuple[CentralValueTable, CentralPolicy, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not an oracle file ({doc.get('format')!r})")
    table = CentralValueTable(np.array(doc["values"]), doc["theta"], tuple(doc["dims"]),
                              doc["ref_state"], doc["iterations"], doc["final_span"])
    policy = CentralPolicy(np.array(doc["pattern_of"], dtype=np.int64),
                           np.array(doc["schedule_of"], dtype=np.int64),
                           tuple(doc["shape"]), doc["buffer_size"])
    return table, policy, doc.get("meta", {})
