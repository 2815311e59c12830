"""Low-level tracking controllers, semantics-blind by construction.

The DWA tracker chases a waypoint with occupancy-only collision filtering;
the MPPI baseline perturbs a nominal control sequence toward the global goal
and softmin-averages the samples. Neither reads the semantic cost map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .costmap import Footprint, footprint_collision_batch
from .geometry import normalize_angle
from .grid import GridMap, Pose
from .planner import Control, _integrate_batch


@dataclass(frozen=True)
class DwaConfig:
    v_max: float = 0.5
    omega_max: float = 1.0
    v_samples: int = 7
    omega_samples: int = 15
    track_horizon: float = 1.0
    dt: float = 0.1
    w_heading: float = 1.0
    w_clearance: float = 0.4
    w_speed: float = 0.3
    clearance_cap: float = 1.0

    def __post_init__(self) -> None:
        if self.track_horizon <= 0 or self.dt <= 0:
            raise ValueError("horizons must be positive")
        if min(self.w_heading, self.w_clearance, self.w_speed) < 0:
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class MppiConfig:
    samples: int = 256
    horizon_steps: int = 15
    noise_std_v: float = 0.15
    noise_std_omega: float = 0.4
    temperature: float = 0.3
    v_max: float = 0.5
    omega_max: float = 1.0
    dt: float = 0.1
    collision_cost: float = 1000.0

    def __post_init__(self) -> None:
        if self.samples < 16:
            raise ValueError("sample count must be >= 16")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def clearance_field(grid: GridMap) -> np.ndarray:
    """Distance (meters) from each cell center to the nearest occupied cell.

    Cached on the map: the occupancy never changes after load.
    """
    cached = getattr(grid, "_clearance_field", None)
    if cached is None:
        cached = distance_transform_edt(~grid.occupied) * grid.resolution
        grid._clearance_field = cached
    return cached


def dwa_track(robot: Pose, waypoint: tuple[float, float], grid: GridMap,
              cfg: DwaConfig, prev_ctrl: Control,
              footprint: Footprint = Footprint()) -> Control:
    """Best admissible command for chasing a waypoint.

    Samples the velocity grid, discards commands whose short rollout collides
    (occupancy only), and scores the rest by end-state heading alignment,
    clearance, and speed. When every forward sample collides, falls back to
    rotating in place toward the waypoint, capped at omega_max.
    """
    wx, wy = waypoint
    if math.hypot(wx - robot.x, wy - robot.y) < 1e-6:
        return Control(0.0, 0.0)

    vs = np.linspace(0.0, cfg.v_max, cfg.v_samples)
    ws = np.linspace(-cfg.omega_max, cfg.omega_max, cfg.omega_samples)
    v_all = np.repeat(vs, cfg.omega_samples)
    w_all = np.tile(ws, cfg.v_samples)
    steps = int(round(cfg.track_horizon / cfg.dt))
    states = _integrate_batch(robot, v_all, w_all, steps, cfg.dt)

    flat = states[:, :, :2].reshape(-1, 2)
    collide = footprint_collision_batch(flat, footprint, grid).reshape(len(v_all), steps)
    feasible = ~collide.any(axis=1)
    if not (feasible & (v_all > 0)).any():
        # All forward samples collide: rotate in place toward the waypoint.
        bearing = normalize_angle(math.atan2(wy - robot.y, wx - robot.x) - robot.heading)
        omega = max(-cfg.omega_max, min(cfg.omega_max, 2.0 * bearing))
        return Control(0.0, omega)

    end = states[:, -1, :]
    bearing_end = np.arctan2(wy - end[:, 1], wx - end[:, 0]) - end[:, 2]
    ang_err = np.abs(np.arctan2(np.sin(bearing_end), np.cos(bearing_end)))
    clear = clearance_field(grid)
    exi = np.clip((end[:, 0] / grid.resolution).astype(int), 0, grid.width - 1)
    eyi = np.clip((end[:, 1] / grid.resolution).astype(int), 0, grid.height - 1)
    clearance = np.minimum(clear[eyi, exi], cfg.clearance_cap) / cfg.clearance_cap

    cost = (cfg.w_heading * ang_err / math.pi
            + cfg.w_speed * (1.0 - v_all / cfg.v_max)
            + cfg.w_clearance * (1.0 - clearance))
    cost = np.where(feasible, cost, np.inf)
    order = np.lexsort((np.arange(len(cost)), np.abs(w_all), cost))
    best = int(order[0])
    return Control(float(v_all[best]), float(w_all[best]))


def softmin_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Normalized softmin weights: exp(-(c - min) / temperature)."""
    shifted = costs - costs.min()
    w = np.exp(-shifted / temperature)
    return w / w.sum()


def mppi_step(robot: Pose, goal: tuple[float, float], grid: GridMap, cfg: MppiConfig,
              nominal: np.ndarray, rng: np.random.Generator,
              footprint: Footprint = Footprint()) -> tuple[Control, np.ndarray]:
    """One stochastic optimization step toward the goal.

    Perturbs the nominal sequence with seeded Gaussian noise, rolls out every
    sample against occupancy, softmin-averages the samples by accumulated
    cost (goal distance plus collision penalty), and returns the first
    command of the averaged sequence together with the shifted sequence.
    """
    t = cfg.horizon_steps
    if nominal.shape != (t, 2):
        raise ValueError(f"nominal sequence must be ({t}, 2), got {nominal.shape}")
    noise = rng.normal(0.0, 1.0, (cfg.samples, t, 2))
    noise[:, :, 0] *= cfg.noise_std_v
    noise[:, :, 1] *= cfg.noise_std_omega
    samples = nominal[None, :, :] + noise
    samples[:, :, 0] = np.clip(samples[:, :, 0], 0.0, cfg.v_max)
    samples[:, :, 1] = np.clip(samples[:, :, 1], -cfg.omega_max, cfg.omega_max)

    # Per-step integration across all samples (controls vary along the horizon).
    n = cfg.samples
    x = np.full(n, robot.x)
    y = np.full(n, robot.y)
    th = np.full(n, robot.heading)
    cost = np.zeros(n)
    collided = np.zeros(n, dtype=bool)
    for k in range(t):
        v = samples[:, k, 0]
        w = samples[:, k, 1]
        straight = np.abs(w) < 1e-12
        th2 = th + w * cfg.dt
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(straight, 0.0, v / np.where(straight, 1.0, w))
        x = np.where(straight, x + v * np.cos(th) * cfg.dt, x + r * (np.sin(th2) - np.sin(th)))
        y = np.where(straight, y + v * np.sin(th) * cfg.dt, y - r * (np.cos(th2) - np.cos(th)))
        th = th2
        pts = np.stack([x, y], axis=1)
        collided |= footprint_collision_batch(pts, footprint, grid)
        cost += np.hypot(x - goal[0], y - goal[1]) + cfg.collision_cost * collided

    weights = softmin_weights(cost, cfg.temperature)
    averaged = np.einsum("s,stc->tc", weights, samples)
    first = Control(float(averaged[0, 0]), float(averaged[0, 1]))
    shifted = np.vstack([averaged[1:], averaged[-1:]])
    return first, shifted
