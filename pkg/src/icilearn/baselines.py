"""Comparison policies: CSIT-only, backpressure (both over reuse-3) and a
two-timescale pattern/proportional-fair proxy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import candidate_rates, link_powers
from .model import ConfigError


@dataclass(frozen=True)
class ReusePlan:
    """Static frequency reuse: every BS always on, in its colour's share of the band."""

    colors: np.ndarray
    reuse_factor: int = 3

    def __post_init__(self):
        colors = np.asarray(self.colors, dtype=int) % self.reuse_factor
        colors.setflags(write=False)
        object.__setattr__(self, "colors", colors)

    @classmethod
    def for_scenario(cls, scenario) -> "ReusePlan":
        return cls(scenario.colors, scenario.baselines.reuse_factor)

    def is_proper(self, adjacency) -> bool:
        """No two adjacent BSs share a colour."""
        adj = np.asarray(adjacency, dtype=bool)
        same = self.colors[:, None] == self.colors[None, :]
        return not np.any(adj & same & ~np.eye(len(self.colors), dtype=bool))

    def interference_mask(self) -> np.ndarray:
        mask = self.colors[:, None] == self.colors[None, :]
        np.fill_diagonal(mask, False)
        return mask

    def rates(self, system, h) -> np.ndarray:
        M = system.num_bs
        rate, _, _ = candidate_rates(system, h, np.ones(M, dtype=bool),
                                     mask=self.interference_mask(),
                                     bandwidth=system.bandwidth / self.reuse_factor)
        return rate


def _argmax_rows(score, active) -> np.ndarray:
    """Per-BS argmax (lowest index on ties); -1 at inactive BSs."""
    choice = np.argmax(np.asarray(score), axis=1)
    return np.where(np.asarray(active, dtype=bool), choice, -1)


def csit_only_schedule(rates, active) -> np.ndarray:
    """Per-BS user with the largest rate, ignoring queues."""
    return _argmax_rows(rates, active)


def backpressure_schedule(q, rates, active) -> np.ndarray:
    """Per-BS user with the largest ``q * R`` weight."""
    return _argmax_rows(np.asarray(q) * np.asarray(rates), active)


def as_action(choice, q) -> np.ndarray:
    """Boolean schedule matrix from per-BS choices, dropping empty-queue users.

    A selected user with an empty buffer would receive no service anyway, so
    masking it keeps the action valid without changing the queue dynamics.
    """
    q = np.asarray(q)
    s = np.zeros(q.shape, dtype=bool)
    on = np.flatnonzero(np.asarray(choice) >= 0)
    s[on, np.asarray(choice)[on]] = True
    return s & (q > 0)


def all_pattern_rates(system, h, active_rows) -> np.ndarray:
    """Candidate rates ``(P, M, K)`` of every user under every pattern."""
    act = np.asarray(active_rows, dtype=bool)
    rx = link_powers(system, h)
    M = system.num_bs
    masks = act[:, :, None] & act[:, None, :]
    masks[:, np.arange(M), np.arange(M)] = False
    diag = np.arange(M)
    signal = rx[diag, diag, :]
    ifn = np.einsum("pnm,nmk->pmk", masks.astype(float), rx) + system.noise_psd * system.bandwidth
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(signal[None] > 0, system.coding_gap * signal[None] / ifn, 0.0)
    rate = system.bandwidth * np.log2(1.0 + sinr)
    return np.where(act[:, :, None], rate, 0.0)


class ReuseBaseline:
    """Baselines 1 and 2: reuse-3 resource split with a per-slot user rule."""

    def __init__(self, scenario, rule: str):
        if rule not in ("csit", "backpressure"):
            raise ConfigError(f"unknown reuse baseline {rule!r}")
        self.name = rule
        self.plan = ReusePlan.for_scenario(scenario)
        self.system = scenario.system
        self.all_on = np.ones(scenario.system.num_bs, dtype=bool)

    def select(self, t, q) -> int:
        return -1  # not a catalog pattern: every BS on, reuse split

    def rates(self, h, p) -> np.ndarray:
        return self.plan.rates(self.system, h)

    def active(self, p) -> np.ndarray:
        return self.all_on

    def schedule(self, t, q, p, service, rate, h_state=None) -> np.ndarray:
        if self.name == "csit":
            return csit_only_schedule(rate, self.all_on)
        return backpressure_schedule(q, rate, self.all_on)

    def learn(self, *args):
        pass


class TimescaleBaseline:
    """Slow pattern choice from window-averaged proportional-fair utility,
    fast proportional-fair user selection.  Queue lengths are never read."""

    name = "timescale"

    def __init__(self, scenario):
        opts = scenario.baselines
        self.system = scenario.system
        self.patterns = scenario.patterns
        self.t_slow = opts.t_slow
        self.alpha = 1.0 / opts.pf_window
        self.utility = opts.slow_utility
        M, K = scenario.shape
        self.avg = np.full((M, K), 1e-6 * scenario.system.bandwidth)
        self.accum = np.zeros(len(self.patterns))
        self.current = 0
        self._rates = None

    def slow_metric(self, all_rates) -> np.ndarray:
        """Per-pattern utility of one slot: sum over active BSs of the best user's metric."""
        if self.utility == "sum_rate":
            return all_rates.max(axis=2).sum(axis=1)
        return (all_rates / self.avg[None]).max(axis=2).sum(axis=1)

    def observe_csi(self, t, h):
        """Accumulate this slot's utility for every pattern; switch pattern on the slow clock."""
        self._rates = all_pattern_rates(self.system, h, self.patterns.active)
        self.accum += self.slow_metric(self._rates)
        if t % self.t_slow == 0:
            self.current = int(np.argmax(self.accum))
            self.accum[:] = 0.0

    def select(self, t, q) -> int:
        return self.current

    def rates(self, h, p) -> np.ndarray:
        if self._rates is None:
            return all_pattern_rates(self.system, h, self.patterns.active)[p]
        return self._rates[p]

    def active(self, p) -> np.ndarray:
        return self.patterns.active[p]

    def schedule(self, t, q, p, service, rate, h_state=None) -> np.ndarray:
        return _argmax_rows(rate / self.avg, self.patterns.active[p])

    def record_throughput(self, delivered_rate):
        self.avg += self.alpha * (delivered_rate - self.avg)

    def learn(self, *args):
        pass
