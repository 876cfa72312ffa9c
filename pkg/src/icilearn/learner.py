"""Per-user value-function and Q-factor learning.

Each user (m, k) owns two small tables: a post-decision value vector indexed
by queue length 0..N_Q, and a Q-factor matrix indexed by (queue, pattern).
Both are updated from purely local observations.  The direct solvers at the
bottom of the module compute the tables' limits from the per-user transition
kernels; they are the reference the online updates are checked against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .channel import deliverable_units, user_rates
from .model import ConfigError


class FixedPointError(RuntimeError):
    """A direct solver failed (singular system or no convergence)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class StepSizeSchedule:
    """``gamma(n) = a / (b + n)``; ``n`` is the slot index or a visit count."""

    a: float = 1.0
    b: float = 2.0
    per_visit: bool = False

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("step-size constants must be positive")

    def gamma(self, n) -> float:
        return self.a / (self.b + n)


@dataclass
class PerUserValueTable:
    values: np.ndarray  # (N_Q + 1,)
    cost: np.ndarray  # beta * f(q), q = 0..N_Q
    ref_pattern: int
    ref_state: int = 0
    visits: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.visits is None:
            self.visits = np.zeros(self.values.shape, dtype=np.int64)

    @property
    def buffer_size(self) -> int:
        return self.values.size - 1

    def copy(self) -> "PerUserValueTable":
        return PerUserValueTable(self.values.copy(), self.cost, self.ref_pattern,
                                 self.ref_state, self.visits.copy())


@dataclass
class PerUserQTable:
    values: np.ndarray  # (N_Q + 1, P)
    cost: np.ndarray
    ref_pattern: int
    ref_state: int = 0
    visits: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.visits is None:
            self.visits = np.zeros(self.values.shape, dtype=np.int64)

    @property
    def buffer_size(self) -> int:
        return self.values.shape[0] - 1

    def copy(self) -> "PerUserQTable":
        return PerUserQTable(self.values.copy(), self.cost, self.ref_pattern,
                             self.ref_state, self.visits.copy())


def initial_value_table(cost, ref_pattern, slope=0.01) -> PerUserValueTable:
    cost = np.asarray(cost, dtype=float)
    return PerUserValueTable(slope * np.arange(cost.size), cost, ref_pattern)


def initial_q_table(cost, num_patterns, ref_pattern) -> PerUserQTable:
    cost = np.asarray(cost, dtype=float)
    return PerUserQTable(np.zeros((cost.size, num_patterns)), cost, ref_pattern)


def _check_index(i, n, what):
    if not 0 <= i <= n:
        raise IndexError(f"{what}={i} outside 0..{n}")


def value_target(table: PerUserValueTable, post_q: int, arrival: int, service: int) -> float:
    """Sampled right-hand side ``beta f(Q) + V((Q - U)^+)`` with ``Q = min(post_q + A, N_Q)``."""
    n = table.buffer_size
    _check_index(post_q, n, "post-decision queue")
    pre = min(post_q + arrival, n)
    nxt = max(pre - service, 0)
    return table.cost[pre] + table.values[nxt]


def update_value(table, post_q, arrival, service, pattern, gamma):
    """One online step of the per-user value function.

    Changes only ``values[post_q]`` and only when ``pattern`` is the table's
    reference pattern.
    """
    if pattern != table.ref_pattern:
        return table
    target = value_target(table, post_q, arrival, service)
    v = table.values
    v[post_q] += gamma * (target - v[table.ref_state] - v[post_q])
    table.visits[post_q] += 1
    return table


def q_target(table: PerUserQTable, q: int, arrival: int, service: int) -> float:
    """Sampled ``beta f(q) + min_p' Q(q', p')`` with ``q' = min((q - U)^+ + A, N_Q)``."""
    n = table.buffer_size
    _check_index(q, n, "queue")
    nxt = min(max(q - service, 0) + arrival, n)
    return table.cost[q] + table.values[nxt].min()


def update_qfactor(table, q, pattern, arrival, service, gamma):
    """One online step of the per-user Q-factor; only cell ``(q, pattern)`` changes."""
    target = q_target(table, q, arrival, service)
    Q = table.values
    ref = Q[table.ref_state, table.ref_pattern]
    Q[q, pattern] += gamma * (target - ref - Q[q, pattern])
    table.visits[q, pattern] += 1
    return table


# --- per-user transition kernels --------------------------------------------

@dataclass(frozen=True)
class UserKernel:
    """Everything the direct solvers need for one user.

    ``service[p]`` is the pmf of the deliverable amount when the user is
    scheduled under pattern ``p`` (values clipped at N_Q).
    """

    cost: np.ndarray  # (N+1,)
    arrival_pmf: np.ndarray  # (N+1,)
    service: np.ndarray  # (P, N+1)
    ref_pattern: int
    ref_state: int = 0

    @property
    def buffer_size(self) -> int:
        return self.cost.size - 1

    def value_cost(self) -> np.ndarray:
        """``E_A[beta f(min(x + A, N))]`` for every post-decision state x."""
        n = self.buffer_size
        pre = np.minimum(np.arange(n + 1)[:, None] + np.arange(n + 1)[None, :], n)
        return (self.cost[pre] * self.arrival_pmf[None, :]).sum(axis=1)

    def value_matrix(self) -> np.ndarray:
        """Post-decision to post-decision kernel under the reference pattern, user always scheduled."""
        n = self.buffer_size
        P = np.zeros((n + 1, n + 1))
        svc = self.service[self.ref_pattern]
        for x in range(n + 1):
            for a, pa in enumerate(self.arrival_pmf):
                if pa == 0:
                    continue
                pre = min(x + a, n)
                for u, pu in enumerate(svc):
                    if pu:
                        P[x, max(pre - u, 0)] += pa * pu
        return P

    def q_matrices(self) -> np.ndarray:
        """Pre-decision kernels ``P[p, q, q']`` with the user scheduled under pattern p."""
        n = self.buffer_size
        out = np.zeros((self.service.shape[0], n + 1, n + 1))
        for p, svc in enumerate(self.service):
            for q in range(n + 1):
                for u, pu in enumerate(svc):
                    if pu == 0:
                        continue
                    post = max(q - u, 0)
                    for a, pa in enumerate(self.arrival_pmf):
                        if pa:
                            out[p, q, min(post + a, n)] += pu * pa
        return out


def user_kernel(scenario, m: int, k: int) -> UserKernel:
    """Build the per-user kernel from a discrete scenario (bits mode)."""
    system = scenario.system
    if not scenario.channel.is_discrete:
        raise ConfigError("per-user kernels need a discrete channel model")
    n = system.buffer_size
    h_local, prob = scenario.channel.enumerate_local(m, k)
    service = np.zeros((len(scenario.patterns), n + 1))
    for p, active in enumerate(scenario.patterns.active):
        rate = user_rates(system, m, k, h_local, active)
        u = np.minimum(deliverable_units(rate, system.slot_len), n)
        np.add.at(service[p], u, prob)
    _, arr = scenario.arrivals.user_pmf(m, k, n)
    return UserKernel(cost=scenario.cost.user_table(m, k), arrival_pmf=arr, service=service,
                      ref_pattern=scenario.patterns.reference_pattern(m))


def solve_value_fixed_point(scenario, m: int, k: int) -> PerUserValueTable:
    """Solve ``V + V(ref) 1 = g + P V`` exactly by one linear solve."""
    ker = user_kernel(scenario, m, k)
    return value_fixed_point_from_kernel(ker)


def value_fixed_point_from_kernel(ker: UserKernel) -> PerUserValueTable:
    P = ker.value_matrix()
    g = ker.value_cost()
    n = ker.buffer_size
    A = np.eye(n + 1) - P
    A[:, ker.ref_state] += 1.0
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e12:
        raise FixedPointError("value fixed-point system is singular",
                              {"condition_number": cond, "matrix": A})
    v = np.linalg.solve(A, g)
    return PerUserValueTable(v, ker.cost, ker.ref_pattern, ker.ref_state)


def value_residual(ker: UserKernel, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return v + v[ker.ref_state] - (ker.value_cost() + ker.value_matrix() @ v)


def q_operator(ker: UserKernel, Q, matrices=None) -> np.ndarray:
    """``T^Q(Q)[q, p] = beta f(q) + sum_q' P_p(q, q') min_p' Q(q', p')``."""
    mats = ker.q_matrices() if matrices is None else matrices
    best = np.asarray(Q).min(axis=1)
    return ker.cost[:, None] + np.einsum("pij,j->ip", mats, best)


def solve_qfactor_fixed_point(scenario, m: int, k: int, tol=1e-9, max_iters=100_000,
                              damping=1.0) -> PerUserQTable:
    ker = user_kernel(scenario, m, k)
    return q_fixed_point_from_kernel(ker, tol=tol, max_iters=max_iters, damping=damping)


def q_fixed_point_from_kernel(ker: UserKernel, tol=1e-9, max_iters=100_000,
                              damping=1.0) -> PerUserQTable:
    """Relative Q-value iteration, then a shift so that ``Q = T^Q(Q) - Q(ref)``."""
    mats = ker.q_matrices()
    n, P = ker.buffer_size, mats.shape[0]
    ref = (ker.ref_state, ker.ref_pattern)
    h = np.zeros((n + 1, P))
    spans = []
    for _ in range(max_iters):
        t = q_operator(ker, h, mats)
        new = t - t[ref]
        if damping != 1.0:
            new = (1 - damping) * h + damping * new
        diff = new - h
        span = float(diff.max() - diff.min())
        spans.append(span)
        h = new
        if span < tol:
            break
    else:
        raise FixedPointError(f"relative Q iteration did not reach span {tol} in {max_iters} iterations",
                              {"span_history": spans[-50:]})
    theta = q_operator(ker, h, mats)[ref]
    return PerUserQTable(h + theta, ker.cost, ker.ref_pattern, ker.ref_state)


def q_residual(ker: UserKernel, values) -> np.ndarray:
    Q = np.asarray(values, dtype=float)
    return Q - (q_operator(ker, Q) - Q[ker.ref_state, ker.ref_pattern])


# --- martingale-noise diagnostics -------------------------------------------

@dataclass
class NoiseDiagnostics:
    count: int = 0
    mean: float = 0.0
    m2: float = 0.0
    sumsq: float = 0.0

    @property
    def variance(self) -> float:
        return self.m2 / (self.count - 1) if self.count > 1 else 0.0

    @property
    def second_moment(self) -> float:
        return self.sumsq / self.count if self.count else 0.0

    def clt_band(self, z=3.0) -> float:
        return z * math.sqrt(self.variance / self.count) if self.count else math.inf


def record_noise(diag: NoiseDiagnostics, observed, expected) -> NoiseDiagnostics:
    """Welford accumulation of ``Z = observed - expected``."""
    z = float(observed) - float(expected)
    diag.count += 1
    delta = z - diag.mean
    diag.mean += delta / diag.count
    diag.m2 += delta * (z - diag.mean)
    diag.sumsq += z * z
    return diag


def expected_value_targets(ker: UserKernel, values) -> np.ndarray:
    """``T(V)`` for every post-decision state: the mean of :func:`value_target`."""
    return ker.value_cost() + ker.value_matrix() @ np.asarray(values, dtype=float)


def expected_q_targets(ker: UserKernel, values, matrices=None) -> np.ndarray:
    return q_operator(ker, values, matrices)


# --- all users at once ------------------------------------------------------

class LearnerBank:
    """The per-user tables of every user stacked into arrays.

    ``values[m, k]`` and ``qf[m, k]`` are exactly the tables of
    :class:`PerUserValueTable` / :class:`PerUserQTable`; the batched updates
    below apply :func:`update_value` / :func:`update_qfactor` to every user in
    one go (each user still touches only its own row).
    """

    def __init__(self, cost, num_patterns: int, ref_pattern, steps: StepSizeSchedule,
                 init_slope: float = 0.01):
        self.cost = np.asarray(cost, dtype=float)  # (M, K, N+1)
        M, K, n1 = self.cost.shape
        self.ref_pattern = np.asarray(ref_pattern, dtype=np.int64)  # per BS
        self.steps = steps
        self.values = np.broadcast_to(init_slope * np.arange(n1), (M, K, n1)).copy()
        self.qf = np.zeros((M, K, n1, num_patterns))
        self.value_visits = np.zeros((M, K, n1), dtype=np.int64)
        self.q_visits = np.zeros((M, K, n1, num_patterns), dtype=np.int64)
        self._mk = np.indices((M, K)).reshape(2, -1)
        self.frozen = False

    @classmethod
    def for_scenario(cls, scenario) -> "LearnerBank":
        M, K = scenario.shape
        cost = np.stack([[scenario.cost.user_table(m, k) for k in range(K)] for m in range(M)])
        refs = [scenario.patterns.reference_pattern(m) for m in range(M)]
        lr = scenario.learning
        return cls(cost, len(scenario.patterns), refs,
                   StepSizeSchedule(lr.step_a, lr.step_b, lr.per_visit), lr.init_slope)

    @property
    def buffer_size(self) -> int:
        return self.cost.shape[2] - 1

    def value_table(self, m, k) -> PerUserValueTable:
        return PerUserValueTable(self.values[m, k].copy(), self.cost[m, k],
                                 int(self.ref_pattern[m]), 0, self.value_visits[m, k].copy())

    def q_table(self, m, k) -> PerUserQTable:
        return PerUserQTable(self.qf[m, k].copy(), self.cost[m, k],
                             int(self.ref_pattern[m]), 0, self.q_visits[m, k].copy())

    def _gamma(self, t, visits):
        if self.steps.per_visit:
            return self.steps.a / (self.steps.b + visits)
        return self.steps.gamma(t)

    def update_values(self, t, post_q, arrivals, service, pattern):
        """Value step for users whose BS reference pattern equals ``pattern``."""
        if self.frozen:
            return
        _value_step(self.values, self.value_visits, self.cost, self.ref_pattern,
                    np.asarray(post_q, dtype=np.int64), np.asarray(arrivals, dtype=np.int64),
                    np.asarray(service, dtype=np.int64), int(pattern), float(t),
                    self.steps.a, self.steps.b, self.steps.per_visit)

    def update_qfactors(self, t, q, pattern, arrivals, service):
        if self.frozen:
            return
        _q_step(self.qf, self.q_visits, self.cost, self.ref_pattern,
                np.asarray(q, dtype=np.int64), np.asarray(arrivals, dtype=np.int64),
                np.asarray(service, dtype=np.int64), int(pattern), float(t),
                self.steps.a, self.steps.b, self.steps.per_visit)

    def snapshot(self):
        return self.values.copy(), self.qf.copy()


# Compiled inner loops of the batched updates.  Each user's step is the
# scalar rule of update_value / update_qfactor.

@numba.njit(cache=True)
def _value_step(values, visits, cost, ref_pattern, post_q, arrivals, service, pattern, t,
                a, b, per_visit):
    M, K, n1 = values.shape
    n = n1 - 1
    for m in range(M):
        if ref_pattern[m] != pattern:
            continue
        for k in range(K):
            x = post_q[m, k]
            pre = min(x + arrivals[m, k], n)
            nxt = max(pre - service[m, k], 0)
            err = cost[m, k, pre] + values[m, k, nxt] - values[m, k, 0] - values[m, k, x]
            g = a / (b + visits[m, k, x]) if per_visit else a / (b + t)
            values[m, k, x] += g * err
            visits[m, k, x] += 1


@numba.njit(cache=True)
def _q_step(qf, visits, cost, ref_pattern, q, arrivals, service, pattern, t, a, b, per_visit):
    M, K, n1, P = qf.shape
    n = n1 - 1
    for m in range(M):
        for k in range(K):
            qq = q[m, k]
            nxt = min(max(qq - service[m, k], 0) + arrivals[m, k], n)
            best = qf[m, k, nxt, 0]
            for p in range(1, P):
                if qf[m, k, nxt, p] < best:
                    best = qf[m, k, nxt, p]
            err = cost[m, k, qq] + best - qf[m, k, 0, ref_pattern[m]] - qf[m, k, qq, pattern]
            g = a / (b + visits[m, k, qq, pattern]) if per_visit else a / (b + t)
            qf[m, k, qq, pattern] += g * err
            visits[m, k, qq, pattern] += 1
