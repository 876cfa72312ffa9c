"""Block-fading channel sampling, geometry and achievable rates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, SystemConfig, validate_action

RAYLEIGH = "rayleigh"
DISCRETE = "discrete"


@dataclass(frozen=True)
class ChannelModel:
    """I.i.d. per-slot fading gains for every (BS n -> user (m, k)) link.

    ``levels`` is a list of ``(gain, prob)`` pairs used by the discrete model;
    ``mean_gain`` parametrises the Rayleigh (exponential power) model.
    ``overrides`` maps a link ``(n, m, k)`` to its own level list (discrete) or
    its own mean gain (Rayleigh).
    """

    kind: str
    shape: tuple[int, int, int]
    levels: tuple = ()
    mean_gain: float = 1.0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (DISCRETE, RAYLEIGH):
            raise ConfigError(f"unknown channel kind {self.kind!r}")
        if self.kind == DISCRETE:
            _check_levels(self.levels)
            for link, lv in self.overrides.items():
                _check_levels(lv, where=f"link {link}")
        else:
            means = [self.mean_gain, *self.overrides.values()]
            if any(not (mu >= 0) for mu in means):
                raise ConfigError("Rayleigh mean gains must be nonnegative")

    @property
    def is_discrete(self) -> bool:
        return self.kind == DISCRETE

    def link_levels(self, link) -> tuple[np.ndarray, np.ndarray]:
        lv = self.overrides.get(tuple(link), self.levels)
        gains = np.array([g for g, _ in lv], dtype=float)
        probs = np.array([p for _, p in lv], dtype=float)
        return gains, probs

    def _tables(self):
        # (links, per-link (gains, probs), radix), links in C order over (n, m, k)
        cache = self.__dict__.get("_cache")
        if cache is None:
            links = list(np.ndindex(*self.shape))
            tables = [self.link_levels(link) for link in links]
            radix = tuple(len(g) for g, _ in tables)
            cache = (links, tables, radix)
            object.__setattr__(self, "_cache", cache)
        return cache

    @property
    def num_states(self) -> int:
        if not self.is_discrete:
            raise ValueError("continuous channel has no finite state space")
        return int(np.prod(self._tables()[2], dtype=np.int64))

    def sample_block(self, rng: np.random.Generator, n: int):
        """Draw ``n`` slots of CSI.

        Returns ``(h, state)`` where ``h`` has shape ``(n, M, M, K)`` and
        ``state`` holds the global discrete-state index (``None`` for Rayleigh).
        """
        M, _, K = self.shape
        if self.kind == RAYLEIGH:
            means = np.full(self.shape, float(self.mean_gain))
            for link, mu in self.overrides.items():
                means[tuple(link)] = mu
            h = rng.exponential(1.0, size=(n, *self.shape)) * means
            return h, None
        links, tables, radix = self._tables()
        u = rng.random((n, len(links)))
        idx = np.empty((n, len(links)), dtype=np.int64)
        h = np.empty((n, len(links)))
        for j, (gains, probs) in enumerate(tables):
            cdf = np.cumsum(probs)
            cdf[-1] = 1.0
            lvl = np.searchsorted(cdf, u[:, j], side="right")
            idx[:, j] = lvl
            h[:, j] = gains[lvl]
        state = np.ravel_multi_index(idx.T, radix) if links else np.zeros(n, dtype=np.int64)
        return h.reshape(n, *self.shape), state

    def enumerate_states(self):
        """All global CSI states (C-order over links) with their probabilities."""
        links, tables, radix = self._tables()
        grids = np.indices(radix).reshape(len(radix), -1).T
        h = np.empty(grids.shape)
        prob = np.ones(grids.shape[0])
        for j, (gains, probs) in enumerate(tables):
            h[:, j] = gains[grids[:, j]]
            prob *= probs[grids[:, j]]
        return h.reshape(-1, *self.shape), prob

    def enumerate_local(self, m: int, k: int):
        """Joint distribution of the M links reaching user (m, k): ``(h[S, M], prob[S])``."""
        if not self.is_discrete:
            raise ValueError("continuous channel has no finite state space")
        M = self.shape[0]
        tables = [self.link_levels((n, m, k)) for n in range(M)]
        radix = tuple(len(g) for g, _ in tables)
        grids = np.indices(radix).reshape(M, -1).T
        h = np.empty(grids.shape)
        prob = np.ones(grids.shape[0])
        for n, (gains, probs) in enumerate(tables):
            h[:, n] = gains[grids[:, n]]
            prob *= probs[grids[:, n]]
        return h, prob


def _check_levels(levels, where="channel"):
    if not levels:
        raise ConfigError(f"{where}: discrete model needs at least one level")
    gains = [g for g, _ in levels]
    probs = [p for _, p in levels]
    if any(g < 0 for g in gains):
        raise ConfigError(f"{where}: gains must be nonnegative")
    if any(p < 0 for p in probs) or not math.isclose(sum(probs), 1.0, abs_tol=1e-9):
        raise ConfigError(f"{where}: level probabilities must be nonnegative and sum to 1")


def sample_csi(model: ChannelModel, rng: np.random.Generator) -> np.ndarray:
    h, _ = model.sample_block(rng, 1)
    return h[0]


@dataclass(frozen=True)
class RateReport:
    rate: np.ndarray  # (M, K) bit/s
    signal: np.ndarray  # (M, K) W
    interference_noise: np.ndarray  # (M, K) W
    deliverable: np.ndarray  # (M, K) integer units per slot


def interferer_mask(active) -> np.ndarray:
    """``mask[n, m]`` is True when BS n interferes with BS m's users."""
    active = np.asarray(active, dtype=bool)
    mask = np.outer(active, active)
    np.fill_diagonal(mask, False)
    return mask


def link_powers(system: SystemConfig, h) -> np.ndarray:
    return system.max_power[:, None, None] * np.asarray(h) * system.path_loss


def candidate_rates(system: SystemConfig, h, active, *, mask=None, bandwidth=None,
                    include_bandwidth=True):
    """Rates of every user as if it were the one scheduled at its BS.

    Users of inactive BSs get rate 0.  ``mask``/``bandwidth`` override the
    interference coupling and the per-BS band (used by frequency reuse).
    Returns ``(rate, signal, interference_plus_noise)``.
    """
    active = np.asarray(active, dtype=bool)
    M = system.num_bs
    bw = system.bandwidth if bandwidth is None else bandwidth
    if mask is None:
        mask = interferer_mask(active)
    rx = link_powers(system, h)
    diag = np.arange(M)
    signal = rx[diag, diag, :]
    ifn = np.einsum("nm,nmk->mk", mask.astype(float), rx) + system.noise_psd * bw
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(signal > 0, system.coding_gap * signal / ifn, 0.0)
    spectral = np.log2(1.0 + sinr)
    rate = (bw if include_bandwidth else 1.0) * spectral
    rate = np.where(active[:, None], rate, 0.0)
    return rate, signal, ifn


def user_rates(system: SystemConfig, m: int, k: int, h_local, active, *,
               include_bandwidth=True) -> np.ndarray:
    """Candidate rates of user (m, k) for a batch of local CSI rows ``h_local[S, M]``."""
    h_local = np.atleast_2d(np.asarray(h_local, dtype=float))
    active = np.asarray(active, dtype=bool)
    if not active[m]:
        return np.zeros(h_local.shape[0])
    rx = system.max_power[None, :] * h_local * system.path_loss[:, m, k][None, :]
    mask = interferer_mask(active)[:, m].astype(float)
    signal = rx[:, m]
    ifn = rx @ mask + system.noise_psd * system.bandwidth
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.where(signal > 0, system.coding_gap * signal / ifn, 0.0)
    scale = system.bandwidth if include_bandwidth else 1.0
    return scale * np.log2(1.0 + sinr)


def deliverable_units(rate, slot_len) -> np.ndarray:
    return np.floor(np.asarray(rate) * slot_len).astype(np.int64)


def compute_rates(system: SystemConfig, h, pattern, s) -> RateReport:
    """Achievable rates for a (pattern, schedule) pair; unscheduled users get 0."""
    s = np.asarray(s, dtype=bool)
    pattern = np.asarray(pattern, dtype=bool)
    bad = [v for v in validate_action(pattern, s, np.ones(s.shape)) if not v.startswith("empty")]
    if bad:
        raise ValueError("invalid action: " + "; ".join(bad))
    rate, signal, ifn = candidate_rates(system, h, pattern)
    rate = np.where(s, rate, 0.0)
    return RateReport(rate, signal, ifn, deliverable_units(rate, system.slot_len))


# --- geometry -------------------------------------------------------------

_HEX_DIRS = [(1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1)]


def hex_axial(num_cells: int) -> list[tuple[int, int]]:
    """Axial coordinates of the first ``num_cells`` cells of a hexagonal spiral."""
    cells = [(0, 0)]
    ring = 1
    while len(cells) < num_cells:
        q, r = _HEX_DIRS[4][0] * ring, _HEX_DIRS[4][1] * ring
        for dq, dr in _HEX_DIRS:
            for _ in range(ring):
                cells.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    return cells[:num_cells]


def hex_positions(num_cells: int, site_distance: float) -> np.ndarray:
    ax = np.array(hex_axial(num_cells), dtype=float)
    x = site_distance * (ax[:, 0] + ax[:, 1] / 2.0)
    y = site_distance * (math.sqrt(3) / 2.0) * ax[:, 1]
    return np.stack([x, y], axis=1)


def hex_colors(num_cells: int) -> np.ndarray:
    """Proper 3-colouring of the hexagonal spiral (no two neighbours share a colour)."""
    return np.array([(q - r) % 3 for q, r in hex_axial(num_cells)], dtype=int)


def place_users(rng: np.random.Generator, bs_xy: np.ndarray, users_per_bs: int,
                cell_radius: float, min_distance: float = 35.0) -> np.ndarray:
    """Uniform placement in each BS's disc; returns ``(M, K, 2)`` coordinates."""
    M = bs_xy.shape[0]
    u = rng.random((M, users_per_bs))
    r = np.sqrt(min_distance**2 + u * (cell_radius**2 - min_distance**2))
    phi = rng.uniform(0.0, 2 * math.pi, (M, users_per_bs))
    offs = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=-1)
    return bs_xy[:, None, :] + offs


def macro_path_loss(bs_xy: np.ndarray, user_xy: np.ndarray, intercept_db=34.5,
                    slope_db=35.0, min_distance=1.0) -> np.ndarray:
    """Linear gains ``L[n, m, k]`` from ``PL = intercept + slope*log10(d_m)``."""
    d = np.linalg.norm(user_xy[None, :, :, :] - bs_xy[:, None, None, :], axis=-1)
    d = np.maximum(d, min_distance)
    pl_db = intercept_db + slope_db * np.log10(d)
    return 10.0 ** (-pl_db / 10.0)


def dbm_to_watt(dbm) -> np.ndarray:
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)
