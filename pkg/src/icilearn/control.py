"""Online two-timescale control: BSC pattern selection and per-BS scheduling."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .learner import LearnerBank
from .model import ConfigError


@dataclass(frozen=True)
class QsiRegionPartition:
    """Contiguous regions over 0..N_Q, identical for every user.

    ``starts`` are the first queue length of each region, beginning with 0.
    """

    starts: tuple
    buffer_size: int

    def __post_init__(self):
        s = tuple(int(v) for v in self.starts)
        if not s or s[0] != 0 or list(s) != sorted(set(s)) or s[-1] > self.buffer_size:
            raise ConfigError("region starts must be increasing, begin at 0 and stay within 0..N_Q")
        object.__setattr__(self, "starts", s)
        lookup = np.searchsorted(np.array(s), np.arange(self.buffer_size + 1), side="right") - 1
        lookup.setflags(write=False)
        object.__setattr__(self, "_lookup", lookup)

    @classmethod
    def singletons(cls, buffer_size: int) -> "QsiRegionPartition":
        """Every queue length its own region (refresh on any change)."""
        return cls(tuple(range(buffer_size + 1)), buffer_size)

    @property
    def num_regions(self) -> int:
        return len(self.starts)

    def regions(self) -> list[range]:
        ends = list(self.starts[1:]) + [self.buffer_size + 1]
        return [range(a, b) for a, b in zip(self.starts, ends)]

    def region_of(self, q) -> np.ndarray:
        return self._lookup[np.asarray(q)]

    def region_id(self, q_m) -> tuple:
        """Region id of one BS: the tuple of its users' region indices."""
        return tuple(self._lookup[np.asarray(q_m)].tolist())


@dataclass
class BscQInfo:
    cache: np.ndarray  # (M, P) cached per-BS Q-information
    last_region: list  # per BS region-id tuple
    messages: np.ndarray = None  # (M,) refresh messages sent

    def __post_init__(self):
        if self.messages is None:
            self.messages = np.zeros(self.cache.shape[0], dtype=np.int64)

    @classmethod
    def initial(cls, qf, q, partition: QsiRegionPartition) -> "BscQInfo":
        """Cache built from the starting tables at slot 0 (not counted as messages)."""
        qf = np.asarray(qf)
        M, K = q.shape
        cache = np.stack([qf[m, np.arange(K), q[m]].sum(axis=0) for m in range(M)])
        return cls(cache, [partition.region_id(q[m]) for m in range(M)])


def select_pattern(info: BscQInfo, num_patterns: int | None = None) -> int:
    """Pattern minimising ``sum_m cache[m, p]``; ties go to the lowest index."""
    if info.cache.shape[1] == 0 or num_patterns == 0:
        raise ConfigError("empty pattern catalog")
    return int(np.argmin(info.cache.sum(axis=0)))


def refresh_qinfo(info: BscQInfo, m: int, q_m, partition: QsiRegionPartition, qf_m) -> bool:
    """Refresh BS ``m``'s cache entry when its region id changed; returns whether a message was sent.

    ``qf_m`` holds the Q-factor tables of BS m's users, shape ``(K, N+1, P)``.
    """
    rid = partition.region_id(q_m)
    if rid == info.last_region[m]:
        return False
    q_m = np.asarray(q_m)
    info.cache[m] = np.asarray(qf_m)[np.arange(q_m.size), q_m].sum(axis=0)
    info.last_region[m] = rid
    info.messages[m] += 1
    return True


@dataclass(frozen=True)
class DeltaReport:
    delta: np.ndarray  # (M, K)
    service: np.ndarray  # (M, K) candidate deliverable units


def delta_report(values, q, service) -> DeltaReport:
    """``delta = V(q) - V((q - u)^+)`` per user from its own value table (values: (M, K, N+1))."""
    values = np.asarray(values)
    q = np.asarray(q)
    u = np.asarray(service)
    m, k = np.indices(q.shape)
    n = values.shape[2] - 1
    post = np.clip(q - u, 0, n)
    delta = values[m, k, q] - values[m, k, post]
    delta = np.where(q > 0, delta, 0.0)
    return DeltaReport(delta, u)


def schedule_users(active, values, q, service) -> np.ndarray:
    """Per-BS choice (user index or -1): argmax of delta among nonempty queues at active BSs.

    Ties go to the lowest user index.
    """
    return _schedule(np.asarray(active, dtype=np.bool_), np.asarray(values, dtype=float),
                     np.asarray(q, dtype=np.int64), np.asarray(service, dtype=np.int64))


@numba.njit(cache=True)
def _schedule(active, values, q, service):
    M, K = q.shape
    n = values.shape[2] - 1
    choice = np.full(M, -1, dtype=np.int64)
    for m in range(M):
        if not active[m]:
            continue
        best = -np.inf
        for k in range(K):
            if q[m, k] <= 0:
                continue
            post = min(max(q[m, k] - service[m, k], 0), n)
            d = values[m, k, q[m, k]] - values[m, k, post]
            if d > best:
                best = d
                choice[m] = k
    return choice


class ProposedController:
    """Per-user learning plus region-gated pattern control."""

    name = "proposed"

    def __init__(self, scenario, explore_rng: np.random.Generator, partition=None, q0=None):
        self.scenario = scenario
        self.patterns = scenario.patterns
        self.bank = LearnerBank.for_scenario(scenario)
        n = scenario.system.buffer_size
        self.partition = partition or QsiRegionPartition(scenario.breakpoints, n)
        q0 = np.zeros(scenario.shape, dtype=np.int64) if q0 is None else np.asarray(q0)
        self.info = BscQInfo.initial(self.bank.qf, q0, self.partition)
        self.rng = explore_rng
        self.options = scenario.learning
        self.explored = 0
        self.prev_post = None

    @property
    def messages(self) -> np.ndarray:
        return self.info.messages

    def select(self, t, q) -> int:
        for m in range(q.shape[0]):
            refresh_qinfo(self.info, m, q[m], self.partition, self.bank.qf[m])
        p = select_pattern(self.info)
        # one uniform draw per slot keeps the exploration stream aligned across settings
        if self.rng.random() < self.options.epsilon_at(t):
            p = int(self.rng.integers(len(self.patterns)))
            self.explored += 1
        return p

    def schedule(self, t, q, p, service, rate=None, h_state=None) -> np.ndarray:
        return schedule_users(self.patterns.active[p], self.bank.values, q, service)

    def learn(self, t, q, p, arrivals, service, post):
        """Algorithm updates after the slot.

        The value step pairs the previous post-decision state with this slot's
        arrivals and candidate service; the gate on ``p`` is fixed before
        either is drawn, so the sample is unbiased for the post-decision
        kernel under the reference pattern.
        """
        if self.prev_post is not None:
            self.bank.update_values(t, self.prev_post, arrivals, service, p)
        self.bank.update_qfactors(t, q, p, arrivals, service)
        self.prev_post = post
