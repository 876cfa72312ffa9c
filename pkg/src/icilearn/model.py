"""Shared domain types for the multi-cell downlink model.

Array conventions used throughout the package:

* queue lengths ``q`` have shape ``(M, K)``; ``q[m, k]`` is user ``k`` of BS ``m``
* link quantities (path loss, fading) have shape ``(M, M, K)``; ``x[n, m, k]``
  is the link from BS ``n`` to user ``(m, k)``
* a schedule is either a boolean ``(M, K)`` matrix or, internally, a
  "choice" vector of length ``M`` holding the scheduled user or ``-1``
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class ConfigError(ValueError):
    """Raised for inconsistent or invalid configuration values."""


class CostKind(str, Enum):
    NORMALIZED_QUEUE = "normalized_queue"
    OVERFLOW_INDICATOR = "overflow_indicator"


class QueueUnit(str, Enum):
    BITS = "bits"
    PACKETS = "packets"


def _frozen_array(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SystemConfig:
    num_bs: int
    users_per_bs: int
    slot_len: float
    bandwidth: float
    noise_psd: float
    coding_gap: float
    max_power: np.ndarray
    path_loss: np.ndarray
    buffer_size: int
    cost_weights: np.ndarray
    cost_kind: CostKind = CostKind.NORMALIZED_QUEUE
    queue_unit: QueueUnit = QueueUnit.BITS

    def __post_init__(self):
        M, K = int(self.num_bs), int(self.users_per_bs)
        if M < 1 or K < 1:
            raise ConfigError(f"need num_bs >= 1 and users_per_bs >= 1, got {M}, {K}")
        if not self.slot_len > 0:
            raise ConfigError("slot_len must be positive")
        if not self.bandwidth > 0:
            raise ConfigError("bandwidth must be positive")
        if self.noise_psd < 0:
            raise ConfigError("noise_psd must be nonnegative")
        if not 0 < self.coding_gap <= 1:
            raise ConfigError("coding_gap must lie in (0, 1]")
        if int(self.buffer_size) != self.buffer_size or self.buffer_size < 1:
            raise ConfigError("buffer_size must be an integer >= 1")

        power = np.broadcast_to(np.asarray(self.max_power, dtype=float), (M,))
        loss = np.broadcast_to(np.asarray(self.path_loss, dtype=float), (M, M, K))
        beta = np.broadcast_to(np.asarray(self.cost_weights, dtype=float), (M, K))
        if np.any(power < 0):
            raise ConfigError("max_power must be nonnegative")
        if np.any(loss < 0):
            raise ConfigError("path_loss entries must be nonnegative")
        if np.any(beta <= 0):
            raise ConfigError("cost_weights must be strictly positive")

        object.__setattr__(self, "num_bs", M)
        object.__setattr__(self, "users_per_bs", K)
        object.__setattr__(self, "buffer_size", int(self.buffer_size))
        object.__setattr__(self, "max_power", _frozen_array(power))
        object.__setattr__(self, "path_loss", _frozen_array(loss))
        object.__setattr__(self, "cost_weights", _frozen_array(beta))
        object.__setattr__(self, "cost_kind", CostKind(self.cost_kind))
        object.__setattr__(self, "queue_unit", QueueUnit(self.queue_unit))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_bs, self.users_per_bs)

    @property
    def noise_power(self) -> float:
        return self.noise_psd * self.bandwidth


def make_qsi(q, buffer_size: int) -> np.ndarray:
    """Validate and freeze a queue-length matrix."""
    arr = np.asarray(q)
    if arr.size and not np.all(np.equal(np.mod(arr, 1), 0)):
        raise ValueError("queue lengths must be integers")
    arr = _frozen_array(arr, dtype=np.int64)
    if np.any(arr < 0) or np.any(arr > buffer_size):
        raise ValueError(f"queue lengths must lie in [0, {buffer_size}]")
    return arr


def make_csi(h) -> np.ndarray:
    arr = _frozen_array(h)
    if np.any(arr < 0):
        raise ValueError("fading gains must be nonnegative")
    return arr


@dataclass(frozen=True)
class PatternSet:
    """Ordered catalog of admissible on/off patterns.

    Patterns are kept in lexicographic order of their activity vectors so that
    "lowest index" is a deterministic tie-break everywhere.
    """

    active: np.ndarray  # (P, M) bool

    def __post_init__(self):
        arr = np.asarray(self.active, dtype=bool)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ConfigError("pattern catalog must be a nonempty (P, M) array")
        if not np.all(arr.any(axis=1)):
            raise ConfigError("every catalog pattern must activate at least one BS")
        rows = [tuple(int(v) for v in r) for r in arr]
        if len(set(rows)) != len(rows):
            raise ConfigError("duplicate patterns in catalog")
        order = sorted(range(len(rows)), key=lambda i: rows[i])
        object.__setattr__(self, "active", _frozen_array(arr[order], dtype=bool))

    @classmethod
    def all_nonempty(cls, num_bs: int) -> "PatternSet":
        if num_bs > 6:
            raise ConfigError("the default catalog is only built for M <= 6; supply patterns explicitly")
        rows = [p for p in itertools.product((0, 1), repeat=num_bs) if any(p)]
        return cls(np.array(rows, dtype=bool))

    @classmethod
    def from_lists(cls, rows) -> "PatternSet":
        return cls(np.array(rows, dtype=bool))

    def __len__(self) -> int:
        return self.active.shape[0]

    @property
    def num_bs(self) -> int:
        return self.active.shape[1]

    def patterns_activating(self, m: int) -> np.ndarray:
        return np.flatnonzero(self.active[:, m])

    def index_of(self, pattern) -> int:
        target = np.asarray(pattern, dtype=bool)
        hits = np.flatnonzero((self.active == target).all(axis=1))
        if hits.size == 0:
            raise KeyError(f"pattern {tuple(int(v) for v in target)} not in catalog")
        return int(hits[0])

    def reference_pattern(self, m: int) -> int:
        """Pattern activating ``m`` with the fewest active BSs, lexicographic ties."""
        cands = self.patterns_activating(m)
        if cands.size == 0:
            raise ConfigError(f"no catalog pattern activates BS {m}")
        counts = self.active[cands].sum(axis=1)
        return int(cands[np.argmin(counts)])

    def label(self, idx: int) -> str:
        return "".join("1" if v else "0" for v in self.active[idx])


@dataclass(frozen=True)
class CostModel:
    kind: CostKind
    beta: np.ndarray  # (M, K)
    lam: np.ndarray  # (M, K) mean arrival per slot, in queue units
    buffer_size: int

    def __post_init__(self):
        object.__setattr__(self, "kind", CostKind(self.kind))
        beta = np.asarray(self.beta, dtype=float)
        lam = np.broadcast_to(np.asarray(self.lam, dtype=float), beta.shape)
        if self.kind is CostKind.NORMALIZED_QUEUE and np.any(lam <= 0):
            raise ConfigError("normalized-queue cost needs every arrival rate > 0")
        object.__setattr__(self, "beta", _frozen_array(beta))
        object.__setattr__(self, "lam", _frozen_array(lam))

    @classmethod
    def for_system(cls, system: SystemConfig, lam) -> "CostModel":
        return cls(system.cost_kind, system.cost_weights, lam, system.buffer_size)

    def f(self, q, m=None, k=None) -> np.ndarray:
        """Per-user cost ``f``; ``m, k`` select a single user's normalisation."""
        q = np.asarray(q, dtype=float)
        if self.kind is CostKind.OVERFLOW_INDICATOR:
            return (q >= self.buffer_size).astype(float)
        lam = self.lam if m is None else self.lam[m, k]
        return q / lam

    def user_table(self, m: int, k: int) -> np.ndarray:
        """``beta * f(q)`` for q = 0..N_Q for one user."""
        grid = np.arange(self.buffer_size + 1)
        return self.beta[m, k] * self.f(grid, m, k)


def per_slot_cost(q, cost: CostModel) -> float:
    """Weighted per-slot cost ``sum_{m,k} beta[m,k] f(q[m,k])``."""
    q = np.asarray(q)
    return float(np.sum(cost.beta * cost.f(q)))


def schedule_matrix(choice, users_per_bs: int) -> np.ndarray:
    """Convert a per-BS choice vector (user index or -1) into a boolean matrix."""
    choice = np.asarray(choice, dtype=int)
    s = np.zeros((choice.size, users_per_bs), dtype=bool)
    on = choice >= 0
    s[np.flatnonzero(on), choice[on]] = True
    return s


def validate_action(pattern, s, q) -> list[str]:
    """Return every violation of the one-user-per-active-BS rules (empty when ok)."""
    pattern = np.asarray(pattern, dtype=bool)
    s = np.asarray(s, dtype=bool)
    q = np.asarray(q)
    problems = []
    for m in range(s.shape[0]):
        picked = np.flatnonzero(s[m])
        if picked.size > 1:
            problems.append(f"multi-user: BS {m} schedules users {picked.tolist()}")
        if picked.size and not pattern[m]:
            problems.append(f"BS inactive: BS {m} is off but schedules users {picked.tolist()}")
        for k in picked:
            if q[m, k] <= 0:
                problems.append(f"empty queue: user ({m},{k}) scheduled with q=0")
    return problems
