"""Arrival processes and per-slot queue dynamics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import ConfigError

BERNOULLI = "bernoulli"
DETERMINISTIC = "deterministic"
POISSON_PACKETS = "poisson_packets"


@dataclass(frozen=True)
class ArrivalModel:
    kind: str
    rate: np.ndarray  # (M, K); per-slot probability (bernoulli) or packets/slot (poisson)
    size: int = 1  # bits per arrival for bernoulli / deterministic
    mean_packet_bits: float = 0.0

    def __post_init__(self):
        if self.kind not in (BERNOULLI, DETERMINISTIC, POISSON_PACKETS):
            raise ConfigError(f"unknown arrival kind {self.kind!r}")
        rate = np.array(self.rate, dtype=float)
        rate.setflags(write=False)
        object.__setattr__(self, "rate", rate)
        if np.any(rate < 0):
            raise ConfigError("arrival rates must be nonnegative")
        if self.kind == BERNOULLI and np.any(rate > 1):
            raise ConfigError("Bernoulli arrival probabilities must be <= 1")
        if self.kind != POISSON_PACKETS and (int(self.size) != self.size or self.size < 0):
            raise ConfigError("arrival size must be a nonnegative integer")
        if self.kind == POISSON_PACKETS and not self.mean_packet_bits > 0:
            raise ConfigError("packet sizes must be positive")

    @property
    def mean(self) -> np.ndarray:
        """Mean arrivals per slot in queue units."""
        if self.kind == BERNOULLI:
            return self.rate * self.size
        if self.kind == DETERMINISTIC:
            return np.full(self.rate.shape, float(self.size))
        return self.rate

    def sample_block(self, rng: np.random.Generator, n: int) -> np.ndarray:
        shape = (n, *self.rate.shape)
        if self.kind == BERNOULLI:
            return (rng.random(shape) < self.rate).astype(np.int64) * int(self.size)
        if self.kind == DETERMINISTIC:
            return np.full(shape, int(self.size), dtype=np.int64)
        return rng.poisson(self.rate, size=shape).astype(np.int64)

    def sample_packet_sizes(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return rng.exponential(self.mean_packet_bits, size=count)

    def user_pmf(self, m: int, k: int, buffer_size: int) -> tuple[np.ndarray, np.ndarray]:
        """Arrival values 0..N_Q and their probabilities for one user.

        Mass above ``buffer_size`` is lumped onto ``buffer_size``; every queue
        update clips at the buffer, so the lumped pmf gives exact transitions.
        """
        values = np.arange(buffer_size + 1)
        pmf = np.zeros(buffer_size + 1)
        lam = float(self.rate[m, k])
        if self.kind == BERNOULLI:
            pmf[0] += 1.0 - lam
            pmf[min(int(self.size), buffer_size)] += lam
        elif self.kind == DETERMINISTIC:
            pmf[min(int(self.size), buffer_size)] = 1.0
        else:
            pmf[:buffer_size] = stats.poisson.pmf(values[:buffer_size], lam)
            pmf[buffer_size] = stats.poisson.sf(buffer_size - 1, lam)
        return values, pmf


def sample_arrivals(model: ArrivalModel, rng: np.random.Generator) -> np.ndarray:
    return model.sample_block(rng, 1)[0]


@dataclass(frozen=True)
class SlotOutcome:
    next_q: np.ndarray
    served: np.ndarray
    arrived: np.ndarray
    dropped: np.ndarray
    post_decision: np.ndarray


def step_queues(q, service, arrivals, buffer_size: int) -> SlotOutcome:
    """One slot of ``Q' = min((Q - U)^+ + A, N_Q)``.

    ``service`` is the deliverable amount per user (a ``RateReport`` is
    accepted and its ``deliverable`` field used).  ``served`` records what was
    actually removed, i.e. ``min(U, Q)``.
    """
    u = getattr(service, "deliverable", service)
    q = np.asarray(q, dtype=np.int64)
    u = np.asarray(u, dtype=np.int64)
    a = np.asarray(arrivals, dtype=np.int64)
    post = np.maximum(q - u, 0)
    total = post + a
    next_q = np.minimum(total, buffer_size)
    return SlotOutcome(next_q=next_q, served=q - post, arrived=a,
                       dropped=total - next_q, post_decision=post)


class PacketBuffers:
    """FIFO packet queues holding the remaining bits of every queued packet.

    The head-of-line entry shrinks when a slot's bit budget ends mid-packet,
    which carries partial service over to the next slot.
    """

    def __init__(self, shape: tuple[int, int], buffer_size: int):
        self.buffer_size = buffer_size
        self.bits = np.full((*shape, buffer_size), np.inf)
        self.count = np.zeros(shape, dtype=np.int64)

    def completions(self, budget) -> np.ndarray:
        """Packets each user would finish with the given bit budget."""
        done = np.cumsum(self.bits, axis=-1) <= np.asarray(budget, dtype=float)[..., None]
        return done.sum(axis=-1)

    def serve(self, m: int, k: int, budget: float) -> int:
        row = self.bits[m, k]
        n = int(self.count[m, k])
        finished = 0
        while finished < n and row[finished] <= budget:
            budget -= row[finished]
            finished += 1
        if finished:
            row[: n - finished] = row[finished:n]
            row[n - finished: n] = np.inf
            n -= finished
        if n and budget > 0:
            row[0] -= budget
        self.count[m, k] = n
        return finished

    def admit(self, m: int, k: int, sizes) -> int:
        """Enqueue packets (dropping overflow); returns the number dropped."""
        n = int(self.count[m, k])
        room = self.buffer_size - n
        take = min(room, len(sizes))
        if take:
            self.bits[m, k, n: n + take] = sizes[:take]
            self.count[m, k] = n + take
        return len(sizes) - take
