"""Synthetic ground truth for uplink grant-free access in a multi-cell network.

All quantities are in linear units internally (mW for power, km for
distance); dB/dBm values appear only in the configuration.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SQRT3 = np.sqrt(3.0)


class ConfigError(ValueError):
    """Invalid scenario or experiment configuration."""


@dataclass(frozen=True)
class ScenarioConfig:
    n_cells: int = 7
    users_per_cell: int = 50
    cell_radius: float = 1.0  # km, center-to-vertex
    activity_mode: str = "fixed_count"  # fixed_count | per_cell | bernoulli
    activity_fraction: float = 0.05
    power_dbm: float = 23.0
    noise_dbm_hz: float = -174.0
    bandwidth_hz: float = 10e6
    paths_min: int = 8
    paths_max: int = 14
    pilot_length: int = 60
    antennas: int = 8  # M_c, per access point
    min_distance: float = 0.005  # km, clamp before path loss
    ap_positions: tuple | None = None  # explicit (x, y) pairs, km

    @property
    def n_users(self) -> int:
        return self.n_cells * self.users_per_cell

    @property
    def n_active(self) -> int:
        """Number of active users in the fixed-count modes."""
        if self.activity_mode == "per_cell":
            return self.n_cells * int(round(self.activity_fraction * self.users_per_cell))
        return int(round(self.activity_fraction * self.n_users))

    @property
    def noise_power(self) -> float:
        return dbm_to_mw(self.noise_dbm_hz + 10.0 * np.log10(self.bandwidth_hz))

    @property
    def power_mw(self) -> float:
        return dbm_to_mw(self.power_dbm)


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


@dataclass
class NetworkLayout:
    cell_radius: float
    ap_positions: np.ndarray  # (B, 2), km

    @property
    def n_cells(self) -> int:
        return self.ap_positions.shape[0]


@dataclass
class UserPopulation:
    positions: np.ndarray  # (K, 2), km
    home_cell: np.ndarray  # (K,), int
    users_per_cell: int
    activity: np.ndarray | None = None  # (K,), int8 in {0, 1}

    @property
    def n_users(self) -> int:
        return self.positions.shape[0]

    @property
    def active_set(self) -> np.ndarray:
        return np.flatnonzero(self.activity)


@dataclass
class Observation:
    per_ap: list  # B arrays of shape (G, M_c)
    noise_power: float

    @property
    def n_aps(self) -> int:
        return len(self.per_ap)


@dataclass
class Scenario:
    config: ScenarioConfig
    seed: tuple
    layout: NetworkLayout
    population: UserPopulation
    X: np.ndarray  # (K, B*M_c)
    S: np.ndarray  # (G, K)
    observation: Observation
    noiseless: list = field(default_factory=list)  # S @ H_b per AP

    def digest(self) -> str:
        """Short content hash identifying this exact scenario."""
        h = hashlib.sha256()
        for arr in (self.S, self.X, *self.observation.per_ap):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


# --------------------------------------------------------------------------
# geometry

def generate_layout(n_cells: int, cell_radius: float, positions=None) -> NetworkLayout:
    """Flat-top hexagonal layout: one center cell plus the first ring.

    Adjacent centers are sqrt(3) * cell_radius apart. Cell counts other than
    1 and 7 need explicit ``positions``.
    """
    if cell_radius <= 0:
        raise ConfigError(f"cell_radius must be positive, got {cell_radius}")
    if positions is not None:
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] != n_cells:
            raise ConfigError(f"{pos.shape[0]} AP positions given for {n_cells} cells")
        if len({tuple(p) for p in pos}) != n_cells:
            raise ConfigError("AP positions must be pairwise distinct")
        return NetworkLayout(cell_radius, pos)
    if n_cells == 1:
        return NetworkLayout(cell_radius, np.zeros((1, 2)))
    if n_cells == 7:
        ang = np.deg2rad(30.0 + 60.0 * np.arange(6))
        ring = SQRT3 * cell_radius * np.stack([np.cos(ang), np.sin(ang)], axis=1)
        return NetworkLayout(cell_radius, np.vstack([np.zeros((1, 2)), ring]))
    raise ConfigError(f"no built-in layout for {n_cells} cells; pass explicit positions")


def in_hexagon(points, center, radius) -> np.ndarray:
    """Membership test for a flat-top hexagon (vertices at 0, 60, ... degrees)."""
    p = np.abs(np.asarray(points, dtype=float) - np.asarray(center, dtype=float))
    tol = 1e-12 * radius
    return (p[:, 1] <= SQRT3 / 2 * radius + tol) & (SQRT3 * p[:, 0] + p[:, 1] <= SQRT3 * radius + tol)


def _sample_hexagon(n, radius, rng) -> np.ndarray:
    # rejection from the bounding box; acceptance ratio is 3/4
    out = np.empty((0, 2))
    half_h = SQRT3 / 2 * radius
    while out.shape[0] < n:
        m = int(1.4 * (n - out.shape[0])) + 8
        cand = np.column_stack([rng.uniform(-radius, radius, m), rng.uniform(-half_h, half_h, m)])
        out = np.vstack([out, cand[in_hexagon(cand, (0.0, 0.0), radius)]])
    return out[:n]


def place_users(layout: NetworkLayout, users_per_cell: int, rng) -> UserPopulation:
    """Uniform user drop, ``users_per_cell`` users inside every hexagon.

    User k belongs to cell ``k // users_per_cell``.
    """
    if users_per_cell < 1:
        raise ConfigError(f"users_per_cell must be >= 1, got {users_per_cell}")
    rng = np.random.default_rng(rng)
    pos = [c + _sample_hexagon(users_per_cell, layout.cell_radius, rng) for c in layout.ap_positions]
    home = np.repeat(np.arange(layout.n_cells), users_per_cell)
    return UserPopulation(np.vstack(pos), home, users_per_cell)


def draw_activity(n_users: int, rng, *, n_active: int | None = None, p: float | None = None,
                  users_per_cell: int | None = None) -> np.ndarray:
    """Activity indicators: a uniform ``n_active``-subset, or i.i.d. Bernoulli(p).

    With ``users_per_cell`` set, ``n_active`` is applied within every cell.
    """
    rng = np.random.default_rng(rng)
    alpha = np.zeros(n_users, dtype=np.int8)
    if (n_active is None) == (p is None):
        raise ConfigError("give exactly one of n_active or p")
    if p is not None:
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"activity probability {p} outside [0, 1]")
        alpha[:] = rng.random(n_users) < p
        return alpha
    if users_per_cell is None:
        if not 0 <= n_active <= n_users:
            raise ConfigError(f"n_active={n_active} not in [0, {n_users}]")
        alpha[rng.choice(n_users, size=n_active, replace=False)] = 1
        return alpha
    if n_users % users_per_cell or not 0 <= n_active <= users_per_cell:
        raise ConfigError("per-cell activity needs n_active <= users_per_cell dividing n_users")
    for b in range(n_users // users_per_cell):
        alpha[b * users_per_cell + rng.choice(users_per_cell, size=n_active, replace=False)] = 1
    return alpha


# --------------------------------------------------------------------------
# channel

def path_loss_db(d):
    """Log-distance path loss 128.1 + 37.6 log10(d), d in km."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return 128.1 + 37.6 * np.log10(d)


def array_response(phi, n_antennas: int) -> np.ndarray:
    """ULA steering vector(s) [1, e^{-j2 pi phi}, ..., e^{-j2 pi (M-1) phi}] along a new last axis."""
    m = np.arange(n_antennas)
    return np.exp(-2j * np.pi * np.asarray(phi)[..., None] * m)


def _multipath(n_antennas, n_paths, rng, shape=()):
    """Sum of ``n_paths`` (array, broadcast over ``shape``) plane waves with CN(0,1) gains."""
    rng = np.random.default_rng(rng)
    n_paths = np.broadcast_to(np.asarray(n_paths), shape)
    lmax = int(n_paths.max()) if n_paths.size else 1
    beta = (rng.standard_normal(shape + (lmax,)) + 1j * rng.standard_normal(shape + (lmax,))) / np.sqrt(2)
    aoa = rng.uniform(-np.pi / 2, np.pi / 2, shape + (lmax,))
    beta = np.where(np.arange(lmax) < n_paths[..., None], beta, 0.0)
    resp = array_response(0.5 * np.sin(aoa), n_antennas)  # shape + (lmax, M_c)
    return np.einsum("...l,...lm->...m", beta, resp)


def draw_small_scale_channel(n_antennas: int, n_paths: int, rng) -> np.ndarray:
    """Small-scale fading vector of length ``n_antennas`` with ``n_paths`` components."""
    if n_antennas < 1 or n_paths < 1:
        raise ConfigError("need n_antennas >= 1 and n_paths >= 1")
    return _multipath(n_antennas, n_paths, rng)


def distances(layout: NetworkLayout, population: UserPopulation) -> np.ndarray:
    """(K, B) user-to-AP distances in km."""
    diff = population.positions[:, None, :] - layout.ap_positions[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def assemble_channel_matrix(population: UserPopulation, layout: NetworkLayout, power_dbm: float,
                            n_antennas: int, path_range, rng, min_distance: float = 0.005) -> np.ndarray:
    """Channel matrix X (K x B*M_c); block b of row k is alpha_k sqrt(P) g_bk h_bk.

    The path count is drawn uniformly from ``path_range`` (inclusive) for
    every user/AP pair. Small-scale fading is drawn for all users so the
    random stream does not depend on who is active.
    """
    if population.activity is None:
        raise ConfigError("population has no activity vector")
    if population.activity.shape != (population.n_users,):
        raise ValueError("activity length does not match the population")
    rng = np.random.default_rng(rng)
    lo, hi = path_range
    K, B = population.n_users, layout.n_cells
    n_paths = rng.integers(lo, hi + 1, size=(K, B))
    h = _multipath(n_antennas, n_paths, rng, shape=(K, B))  # (K, B, M_c)
    d = np.maximum(distances(layout, population), min_distance)
    gain = 10.0 ** (-path_loss_db(d) / 20.0)
    amp = np.sqrt(dbm_to_mw(power_dbm)) * gain * population.activity[:, None]
    return (amp[..., None] * h).reshape(K, B * n_antennas)


def draw_pilots(pilot_length: int, n_users: int, rng) -> np.ndarray:
    """i.i.d. CN(0, 1) pilot matrix of shape (G, K)."""
    rng = np.random.default_rng(rng)
    shape = (pilot_length, n_users)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def synthesize_observation(S, X, noise_power: float, rng, n_aps: int = 1):
    """Y = S X + N split into ``n_aps`` equal column blocks.

    Returns the observation and the noiseless per-AP signals.
    """
    if noise_power < 0:
        raise ValueError("noise power must be non-negative")
    S, X = np.asarray(S), np.asarray(X)
    if S.shape[1] != X.shape[0]:
        raise ValueError(f"S is {S.shape} but X is {X.shape}")
    if X.shape[1] % n_aps:
        raise ValueError("column count not divisible by the number of APs")
    rng = np.random.default_rng(rng)
    clean = S @ X
    shape = clean.shape
    noise = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * np.sqrt(noise_power / 2)
    Y = clean + noise
    per_ap = np.split(Y, n_aps, axis=1)
    return Observation([np.ascontiguousarray(r) for r in per_ap], float(noise_power)), np.split(clean, n_aps, axis=1)


# --------------------------------------------------------------------------
# full scenario

def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(list(np.atleast_1d(seed).astype(int)))


def build_scenario(cfg: ScenarioConfig, seed) -> Scenario:
    """Draw a complete scenario; identical (cfg, seed) gives identical arrays.

    Positions, activity and pilots use their own streams, so they are shared
    across runs that only change the antenna count.
    """
    ss = _seed_sequence(seed)
    s_pos, s_act, s_chan, s_pilot, s_noise = ss.spawn(5)
    layout = generate_layout(cfg.n_cells, cfg.cell_radius, cfg.ap_positions)
    pop = place_users(layout, cfg.users_per_cell, s_pos)
    if cfg.activity_mode == "fixed_count":
        pop.activity = draw_activity(pop.n_users, s_act, n_active=cfg.n_active)
    elif cfg.activity_mode == "per_cell":
        pop.activity = draw_activity(pop.n_users, s_act, users_per_cell=cfg.users_per_cell,
                                     n_active=int(round(cfg.activity_fraction * cfg.users_per_cell)))
    elif cfg.activity_mode == "bernoulli":
        pop.activity = draw_activity(pop.n_users, s_act, p=cfg.activity_fraction)
    else:
        raise ConfigError(f"unknown activity_mode {cfg.activity_mode!r}")
    X = assemble_channel_matrix(pop, layout, cfg.power_dbm, cfg.antennas, (cfg.paths_min, cfg.paths_max),
                                s_chan, cfg.min_distance)
    S = draw_pilots(cfg.pilot_length, pop.n_users, s_pilot)
    obs, clean = synthesize_observation(S, X, cfg.noise_power, s_noise, n_aps=cfg.n_cells)
    return Scenario(cfg, tuple(int(e) for e in np.atleast_1d(ss.entropy)) + tuple(ss.spawn_key),
                    layout, pop, X, S, obs, clean)


def save_scenario(scn: Scenario, path) -> None:
    """Write a scenario to a ``.npz`` archive (bit-exact round trip)."""
    meta = {"config": asdict(scn.config), "seed": list(scn.seed), "noise_power": scn.observation.noise_power}
    arrays = {
        "ap_positions": scn.layout.ap_positions,
        "positions": scn.population.positions,
        "home_cell": scn.population.home_cell,
        "activity": scn.population.activity,
        "X": scn.X,
        "S": scn.S,
    }
    for b, (r, c) in enumerate(zip(scn.observation.per_ap, scn.noiseless)):
        arrays[f"R_{b}"] = r
        arrays[f"clean_{b}"] = c
    np.savez(Path(path), meta=np.array(json.dumps(meta)), **arrays)


def load_scenario(path) -> Scenario:
    with np.load(Path(path)) as z:
        meta = json.loads(str(z["meta"]))
        cfgd = meta["config"]
        if cfgd.get("ap_positions") is not None:
            cfgd["ap_positions"] = tuple(tuple(p) for p in cfgd["ap_positions"])
        cfg = ScenarioConfig(**cfgd)
        B = z["ap_positions"].shape[0]
        layout = NetworkLayout(cfg.cell_radius, z["ap_positions"])
        pop = UserPopulation(z["positions"], z["home_cell"], cfg.users_per_cell, z["activity"])
        obs = Observation([z[f"R_{b}"] for b in range(B)], meta["noise_power"])
        clean = [z[f"clean_{b}"] for b in range(B)]
        return Scenario(cfg, tuple(meta["seed"]), layout, pop, z["X"], z["S"], obs, clean)
