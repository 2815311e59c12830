"""Short-horizon goal generation.

Rolls out every admissible (v, omega) pair under unicycle kinematics, scores
each endpoint by geometric cost plus discounted dead-end exposure along the
path, and emits the argmin endpoint as the next waypoint. When every
candidate is infeasible or risk-saturated it signals semantic recovery
instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costmap import (Footprint, SemanticCostmap, footprint_collision_batch,
                      footprint_pool_batch)
from .grid import Cell, GridMap, Pose

_OMEGA_STRAIGHT_EPS = 1e-12


@dataclass(frozen=True)
class Control:
    """One admissible command: linear and angular velocity."""

    v: float
    omega: float


@dataclass(frozen=True)
class PlannerConfig:
    horizon: float = 3.0
    dt: float = 0.1
    lambda_score: float = 1.0
    lambda_discount: float = 0.5
    v_max: float = 0.5
    omega_max: float = 1.0
    v_samples: int = 7
    omega_samples: int = 15
    w_collision: float = 1.0
    w_smooth: float = 0.3
    w_goal: float = 1.0
    blocked_threshold: float = 0.7
    waypoint_range: tuple[float, float] = (3.0, 5.0)

    def __post_init__(self) -> None:
        if not (self.horizon > 0 and self.dt > 0 and self.dt <= self.horizon):
            raise ValueError("require horizon > 0, dt > 0, dt <= horizon")
        if self.v_samples < 3 or self.omega_samples < 3:
            raise ValueError("sample counts must be >= 3")
        if self.lambda_score < 0 or self.lambda_discount < 0:
            raise ValueError("lambda weights must be nonnegative")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class Rollout:
    """States induced by holding one control for the horizon.

    ``states`` is a (K, 3) array of (x, y, heading) sampled at dt, excluding
    the start pose; ``arc_lengths`` the cumulative path length at each state
    (first entry dt*|v|). Truncated before the first state whose footprint
    overlaps an occupied cell, with ``collided`` set.
    """

    control: Control
    states: np.ndarray
    arc_lengths: np.ndarray
    endpoint: tuple[float, float]
    collided: bool

    def __len__(self) -> int:
        return int(self.states.shape[0])

    def poses(self) -> list[Pose]:
        return [Pose(float(x), float(y), float(t)) for x, y, t in self.states]


@dataclass(frozen=True)
class CandidateScore:
    index: int
    control: Control
    endpoint: tuple[float, float]
    j_geom: float
    ede: float
    score: float
    max_risk: float
    collided: bool


@dataclass(frozen=True)
class GoalSelection:
    endpoint: tuple[float, float]
    score: float
    ede: float
    j_geom: float
    control: Control
    index: int
    candidates: list[CandidateScore] = field(repr=False)


@dataclass(frozen=True)
class RecoverySignal:
    """All candidates blocked or risk-saturated; switch to semantic recovery."""

    all_infeasible: bool
    candidates: list[CandidateScore] = field(repr=False)


@dataclass(frozen=True)
class PlanDecision:
    kind: str  # goal_reached | waypoint | recovery | stuck
    waypoint: tuple[float, float] | None = None
    score: float | None = None
    ede: float | None = None
    j_geom: float | None = None
    recovery_cell: Cell | None = None
    selection: GoalSelection | None = None


def step_pose(x: float, y: float, theta: float, v: float, omega: float,
              dt: float) -> tuple[float, float, float]:
    """One constant-control unicycle step along the exact circular arc."""
    if abs(omega) < _OMEGA_STRAIGHT_EPS:
        return x + v * math.cos(theta) * dt, y + v * math.sin(theta) * dt, theta
    r = v / omega
    t2 = theta + omega * dt
    return x + r * (math.sin(t2) - math.sin(theta)), y - r * (math.cos(t2) - math.cos(theta)), t2


def candidate_grid(cfg: PlannerConfig) -> list[Control]:
    """The admissible command set: v in [0, v_max] x omega in [-max, max]."""
    vs = np.linspace(0.0, cfg.v_max, cfg.v_samples)
    ws = np.linspace(-cfg.omega_max, cfg.omega_max, cfg.omega_samples)
    return [Control(float(v), float(w)) for v in vs for w in ws]


def _integrate_batch(start: Pose, v: np.ndarray, w: np.ndarray,
                     steps: int, dt: float) -> np.ndarray:
    """(N, K, 3) state array for N controls over K steps (start excluded)."""
    n = v.shape[0]
    out = np.empty((n, steps, 3))
    x = np.full(n, start.x)
    y = np.full(n, start.y)
    th = np.full(n, start.heading)
    straight = np.abs(w) < _OMEGA_STRAIGHT_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(straight, 0.0, v / np.where(straight, 1.0, w))
    for k in range(steps):
        th2 = th + w * dt
        x = np.where(straight, x + v * np.cos(th) * dt, x + r * (np.sin(th2) - np.sin(th)))
        y = np.where(straight, y + v * np.sin(th) * dt, y - r * (np.cos(th2) - np.cos(th)))
        th = th2
        out[:, k, 0] = x
        out[:, k, 1] = y
        out[:, k, 2] = th
    return out


def rollout_batch(start: Pose, controls: list[Control], cfg: PlannerConfig,
                  grid: GridMap, footprint: Footprint,
                  posterior: np.ndarray | None = None
                  ) -> list[Rollout] | tuple[list[Rollout], list[np.ndarray]]:
    """Roll out many controls at once; same semantics as :func:`rollout`.

    With ``posterior`` given, additionally returns each rollout's per-state
    footprint posteriors (collision and pooling share one pass).
    """
    if not controls:
        return [] if posterior is None else ([], [])
    v = np.array([c.v for c in controls])
    w = np.array([c.omega for c in controls])
    steps = cfg.steps
    states = _integrate_batch(start, v, w, steps, cfg.dt)

    flat = states[:, :, :2].reshape(-1, 2)
    if posterior is None:
        collide_flat = footprint_collision_batch(flat, footprint, grid)
        probs = None
    else:
        probs_flat, collide_flat = footprint_pool_batch(flat, footprint, grid, posterior)
        probs = probs_flat.reshape(len(controls), steps)
    collide = collide_flat.reshape(len(controls), steps)
    first_hit = np.where(collide.any(axis=1), collide.argmax(axis=1), steps)

    # Arc-length cap honors the waypoint range; below-range rollouts stand as-is.
    range_max = cfg.waypoint_range[1]
    step_arc = np.abs(v) * cfg.dt
    cap = np.where(step_arc > 0,
                   np.minimum(np.floor(range_max / np.where(step_arc > 0, step_arc, 1.0)
                                       + 1e-9).astype(int), steps),
                   steps)
    collided = first_hit < cap
    length = np.where(collided, first_hit, cap)

    rollouts = []
    state_probs = []
    for i, ctrl in enumerate(controls):
        k = int(length[i])
        st = states[i, :k, :].copy()
        arcs = step_arc[i] * np.arange(1, k + 1)
        endpoint = (float(st[-1, 0]), float(st[-1, 1])) if k else (start.x, start.y)
        rollouts.append(Rollout(control=ctrl, states=st, arc_lengths=arcs,
                                endpoint=endpoint, collided=bool(collided[i])))
        if probs is not None:
            state_probs.append(probs[i, :k])
    return rollouts if posterior is None else (rollouts, state_probs)


def rollout(start: Pose, ctrl: Control, cfg: PlannerConfig, grid: GridMap,
            footprint: Footprint = Footprint()) -> Rollout:
    """States induced by one control, truncated before the first collision."""
    if abs(ctrl.v) > cfg.v_max + 1e-9 or abs(ctrl.omega) > cfg.omega_max + 1e-9:
        raise ValueError(f"control {ctrl} outside admissible bounds")
    return rollout_batch(start, [ctrl], cfg, grid, footprint)[0]


def ede(r: Rollout, cm: SemanticCostmap, footprint: Footprint, cfg: PlannerConfig,
        posterior: np.ndarray | None = None) -> float:
    """Discount-weighted sum of footprint dead-end posteriors along the rollout.

    EDE = sum_k exp(-lambda_discount * s_k) * P_foot(state_k).
    """
    if len(r) == 0:
        raise ValueError("rollout is empty")
    if posterior is None:
        posterior = cm.posterior_grid()
    probs, _ = footprint_pool_batch(r.states[:, :2], footprint, cm.grid, posterior)
    weights = np.exp(-cfg.lambda_discount * r.arc_lengths)
    return float(np.dot(weights, probs))


def j_geom(r: Rollout, goal: tuple[float, float], prev_ctrl: Control,
           cfg: PlannerConfig) -> float:
    """Geometric cost: infeasible when collided, else smoothness + goal bias.

    The goal-distance contribution is capped at twice the waypoint range so a
    remote goal cannot drown out the other terms.
    """
    if r.collided:
        return math.inf
    gx, gy = goal
    dist = math.hypot(r.endpoint[0] - gx, r.endpoint[1] - gy)
    cap = 2.0 * cfg.waypoint_range[1]
    return (cfg.w_smooth * abs(r.control.omega - prev_ctrl.omega)
            + cfg.w_goal * min(dist, cap))


def rank_key(c: CandidateScore) -> tuple[float, float, float, int]:
    """Deterministic candidate ordering: score, then EDE, |omega|, index."""
    return (c.score, c.ede, abs(c.control.omega), c.index)


def select_goal(candidates: list[Rollout], cm: SemanticCostmap, goal: tuple[float, float],
                prev_ctrl: Control, cfg: PlannerConfig,
                footprint: Footprint = Footprint(),
                posterior: np.ndarray | None = None,
                state_probs: list[np.ndarray] | None = None) -> GoalSelection | RecoverySignal:
    """Score every candidate and pick the argmin endpoint.

    Score(g(theta)) = j_geom(theta) + lambda_score * EDE(theta). Emits a
    :class:`RecoverySignal` when every candidate is infeasible (all scores
    infinite) or every candidate's worst footprint posterior reaches the
    blocked threshold. ``state_probs`` may carry precomputed per-state
    footprint posteriors (one array per candidate) to avoid re-pooling.
    """
    if not candidates:
        raise ValueError("empty candidate list")

    lengths = [len(r) for r in candidates]
    if state_probs is None:
        if posterior is None:
            posterior = cm.posterior_grid()
        all_states = (np.concatenate([r.states[:, :2] for r in candidates if len(r)])
                      if any(lengths) else np.zeros((0, 2)))
        probs_flat, _ = footprint_pool_batch(all_states, footprint, cm.grid, posterior)
        state_probs = []
        pos = 0
        for k in lengths:
            state_probs.append(probs_flat[pos:pos + k])
            pos += k

    scored: list[CandidateScore] = []
    for i, r in enumerate(candidates):
        k = lengths[i]
        if k:
            probs = state_probs[i]
            weights = np.exp(-cfg.lambda_discount * r.arc_lengths)
            ede_val = float(np.dot(weights, probs))
            max_risk = float(probs.max())
        else:
            ede_val = 0.0
            max_risk = 1.0  # immediately blocked counts as saturated risk
        jg = j_geom(r, goal, prev_ctrl, cfg)
        score = jg + cfg.lambda_score * ede_val
        scored.append(CandidateScore(index=i, control=r.control, endpoint=r.endpoint,
                                     j_geom=jg, ede=ede_val, score=score,
                                     max_risk=max_risk, collided=r.collided))

    # "Blocked" means every actual ray is infeasible: rotate-in-place
    # candidates are not rays and can never collide, so they are excluded,
    # otherwise the trigger would be unreachable.
    rays = [c for c in scored if c.control.v > 0.0]
    all_infeasible = bool(rays) and all(math.isinf(c.score) for c in rays)
    # The risk-saturation trigger is part of the semantic layer: with the
    # semantic weight off the pipeline reduces to the plain geometric
    # objective, which has no notion of risk (only true infeasibility).
    all_risky = (cfg.lambda_score > 0.0
                 and all(c.max_risk >= cfg.blocked_threshold for c in scored))
    if all_infeasible or all_risky:
        return RecoverySignal(all_infeasible=all_infeasible, candidates=scored)

    best = min(scored, key=rank_key)
    return GoalSelection(endpoint=best.endpoint, score=best.score, ede=best.ede,
                         j_geom=best.j_geom, control=best.control, index=best.index,
                         candidates=scored)


def plan_step(robot: Pose, goal: tuple[float, float], cm: SemanticCostmap,
              grid: GridMap, prev_ctrl: Control, cfg: PlannerConfig,
              footprint: Footprint = Footprint(),
              goal_tolerance: float = 0.75,
              visited: np.ndarray | None = None) -> PlanDecision:
    """One planning tick: goal check, candidate scoring, recovery fallback."""
    if math.hypot(robot.x - goal[0], robot.y - goal[1]) <= goal_tolerance:
        return PlanDecision(kind="goal_reached")

    controls = candidate_grid(cfg)
    posterior = cm.posterior_grid()
    candidates, state_probs = rollout_batch(robot, controls, cfg, grid, footprint,
                                            posterior=posterior)
    outcome = select_goal(candidates, cm, goal, prev_ctrl, cfg, footprint,
                          posterior, state_probs=state_probs)
    if isinstance(outcome, GoalSelection):
        return PlanDecision(kind="waypoint", waypoint=outcome.endpoint,
                            score=outcome.score, ede=outcome.ede,
                            j_geom=outcome.j_geom, selection=outcome)
    target = cm.best_recovery_point(robot, visited=visited)
    if target is None:
        return PlanDecision(kind="stuck")
    return PlanDecision(kind="recovery", recovery_cell=target)
