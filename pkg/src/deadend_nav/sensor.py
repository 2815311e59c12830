"""Synthetic per-cell dead-end estimator.

Stands in for a trained perception stack: every tick it emits a soft
probability for each cell inside the robot's field of view, drawn from a
correct or incorrect band according to a range-dependent accuracy. Occlusion
is decided by a conservative supercover raycast, so diagonal wall seams are
never seen through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import batch_visibility, normalize_angle, supercover_cells
from .grid import Cell, GridMap, OccupancyClass, Pose

# Soft-evidence bands emitted by the estimator.
BAND_DEADEND = (0.6, 0.95)
BAND_CLEAR = (0.05, 0.4)
BAND_UNCERTAIN = (0.3, 0.7)


@dataclass(frozen=True)
class SensorParams:
    """Field of view, range, and accuracy calibration of the estimator.

    Accuracy interpolates linearly from ``accuracy_at_zero`` at range 0 down
    to ``accuracy_at_max`` at ``max_range``.
    """

    fov: float = 2.0 * math.pi / 3.0
    max_range: float = 5.0
    accuracy_at_zero: float = 0.9
    accuracy_at_max: float = 0.6
    stream_id: int = 0

    def __post_init__(self) -> None:
        if not (0.5 < self.accuracy_at_max <= self.accuracy_at_zero < 1.0):
            raise ValueError(
                "require 0.5 < accuracy_at_max <= accuracy_at_zero < 1, got "
                f"accuracy_at_max={self.accuracy_at_max}, accuracy_at_zero={self.accuracy_at_zero}")
        if self.max_range <= 0:
            raise ValueError("max_range must be > 0")

    def accuracy_at(self, r: float | np.ndarray) -> float | np.ndarray:
        frac = np.clip(np.asarray(r, dtype=float) / self.max_range, 0.0, 1.0)
        out = self.accuracy_at_zero + (self.accuracy_at_max - self.accuracy_at_zero) * frac
        return float(out) if np.ndim(r) == 0 else out


@dataclass(frozen=True)
class ObservationBatch:
    """One tick's worth of per-cell soft evidence.

    ``cells`` is an (N, 2) int array of (ix, iy); ``p_hat`` the matching
    probabilities, each strictly inside (0, 1). Every cell appears at most
    once per batch.
    """

    tick: int
    cells: np.ndarray
    p_hat: np.ndarray

    def __post_init__(self) -> None:
        if self.cells.shape[0] != self.p_hat.shape[0]:
            raise ValueError("cells and p_hat length mismatch")
        if self.p_hat.size and not ((self.p_hat > 0.0) & (self.p_hat < 1.0)).all():
            raise ValueError("p_hat values must lie strictly inside (0, 1)")
        if self.cells.shape[0]:
            flat = self.cells[:, 1].astype(np.int64) << 32 | self.cells[:, 0].astype(np.int64)
            if np.unique(flat).size != flat.size:
                raise ValueError("duplicate cell in observation batch")

    @property
    def readings(self) -> list[tuple[Cell, float]]:
        return [((int(x), int(y)), float(p))
                for (x, y), p in zip(self.cells, self.p_hat)]

    def __len__(self) -> int:
        return int(self.cells.shape[0])


def occluded(grid: GridMap, from_pt: tuple[float, float], to_pt: tuple[float, float]) -> bool:
    """True iff the segment between the two points crosses an occupied cell.

    The endpoint cells themselves never block: the sensor sees the face of a
    wall cell, and the robot sits inside its own cell.
    """
    for pt in (from_pt, to_pt):
        if not grid.in_bounds_point(*pt):
            raise ValueError(f"point {pt} outside map bounds")
    if from_pt == to_pt:
        return False
    cells = supercover_cells(from_pt[0], from_pt[1], to_pt[0], to_pt[1], grid.resolution)
    first, last = cells[0], cells[-1]
    for c in cells:
        if c == first or c == last:
            continue
        if grid.occupied[c[1], c[0]]:
            return True
    return False


def covered_cells(grid: GridMap, robot: Pose, params: SensorParams) -> np.ndarray:
    """Cells observable from ``robot``: in range, inside the FOV wedge, unoccluded.

    Returns an (N, 2) int array of (ix, iy) in deterministic (iy, ix) order.
    A cell whose center lies within half a cell of the robot counts as inside
    the wedge (its bearing is ill-defined), so the robot always observes the
    cell it stands on.
    """
    res = grid.resolution
    r_cells = int(math.ceil(params.max_range / res)) + 1
    rx, ry = int(math.floor(robot.x / res)), int(math.floor(robot.y / res))
    x0, x1 = max(rx - r_cells, 0), min(rx + r_cells + 1, grid.width)
    y0, y1 = max(ry - r_cells, 0), min(ry + r_cells + 1, grid.height)
    ixs, iys = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
    ixs, iys = ixs.ravel(), iys.ravel()
    cx = (ixs + 0.5) * res
    cy = (iys + 0.5) * res
    dx = cx - robot.x
    dy = cy - robot.y
    dist = np.hypot(dx, dy)
    bearing = np.arctan2(dy, dx) - robot.heading
    bearing = np.arctan2(np.sin(bearing), np.cos(bearing))
    near = dist < 0.5 * res
    in_wedge = (dist <= params.max_range) & (near | (np.abs(bearing) <= params.fov / 2.0))
    cand = np.stack([ixs[in_wedge], iys[in_wedge]], axis=1)
    if cand.shape[0] == 0:
        return cand
    vis = batch_visibility(robot.x, robot.y, cand, grid.occupied, res)
    return cand[vis]


def sense(grid: GridMap, truth, robot: Pose,
          params: SensorParams, rng: np.random.Generator, tick: int = 0) -> ObservationBatch:
    """Produce one observation batch from ground truth plus calibrated noise.

    ``truth`` is the ground-truth dead-end labeling, either as a set of
    (ix, iy) cells or as a boolean [iy, ix] mask. Each covered cell is read
    correctly with probability ``accuracy_at(r)``: a correct reading draws
    from the dead-end band when the cell is truly a dead-end and from the
    clear band otherwise; an incorrect reading draws from the wrong band.
    Uncertain cells draw from the widened band regardless of correctness.
    """
    if not grid.in_bounds_point(robot.x, robot.y):
        raise ValueError("robot pose outside map")
    cells = covered_cells(grid, robot, params)
    n = cells.shape[0]
    if n == 0:
        return ObservationBatch(tick, cells.reshape(0, 2), np.zeros(0))

    res = grid.resolution
    centers_x = (cells[:, 0] + 0.5) * res
    centers_y = (cells[:, 1] + 0.5) * res
    r = np.hypot(centers_x - robot.x, centers_y - robot.y)
    q = params.accuracy_at(r)

    if isinstance(truth, np.ndarray):
        truth_mask = truth[cells[:, 1], cells[:, 0]]
    else:
        tset = truth if isinstance(truth, (set, frozenset)) else set(truth)
        truth_mask = np.fromiter(((int(x), int(y)) in tset for x, y in cells),
                                 dtype=bool, count=n)

    correct = rng.random(n) < q
    in_dead_band = truth_mask == correct  # correct on a dead-end, or wrong on a clear cell
    lo = np.where(in_dead_band, BAND_DEADEND[0], BAND_CLEAR[0])
    hi = np.where(in_dead_band, BAND_DEADEND[1], BAND_CLEAR[1])
    uncertain = grid.cells[cells[:, 1], cells[:, 0]] == OccupancyClass.UNCERTAIN
    lo = np.where(uncertain, BAND_UNCERTAIN[0], lo)
    hi = np.where(uncertain, BAND_UNCERTAIN[1], hi)
    p_hat = rng.uniform(lo, hi)
    # uniform() can return its low bound; keep readings strictly inside (0, 1)
    p_hat = np.clip(p_hat, 1e-9, 1.0 - 1e-9)
    return ObservationBatch(tick, cells, p_hat)


class FusionEstimator:
    """Alternative estimator backed by the attention-fusion math.

    Synthesizes patch tokens from the local occupancy neighborhood and
    pseudo-lidar tokens from ray distances, runs them through the untrained
    fusion stack, and emits the head's probability for every covered cell.
    Same interface as :func:`sense`; kept for integration tests and timing
    comparisons, not the benchmark default.
    """

    def __init__(self, weights=None, dim: int = 32, seed: int = 0, patch: int = 2) -> None:
        from .fusion import FusionWeights

        self.weights = weights if weights is not None else FusionWeights.seeded(dim, seed=seed)
        self.patch = patch

    def sense(self, grid: GridMap, truth, robot: Pose, params: SensorParams,
              rng: np.random.Generator, tick: int = 0) -> ObservationBatch:
        from .fusion import cross_fuse_batch, deadend_head_batch, pool_batch

        cells = covered_cells(grid, robot, params)
        n = cells.shape[0]
        if n == 0:
            return ObservationBatch(tick, cells.reshape(0, 2), np.zeros(0))
        d = self.weights.dim
        p = self.patch

        # Image-side patch features: occupancy classes of the (2p+1)^2 patch,
        # tiled/truncated to dimension d per patch row.
        offs = np.arange(-p, p + 1)
        oy, ox = np.meshgrid(offs, offs, indexing="ij")
        px = cells[:, 0][:, None] + ox.ravel()[None, :]
        py = cells[:, 1][:, None] + oy.ravel()[None, :]
        inb = (px >= 0) & (px < grid.width) & (py >= 0) & (py < grid.height)
        occ = np.ones(px.shape, dtype=float)
        occ[inb] = grid.cells[py[inb], px[inb]].astype(float)
        k = occ.shape[1]
        feats = np.zeros((n, k, d))
        reps = int(math.ceil(d / 3))
        for j in range(3):
            block = np.tile((occ == j).astype(float)[:, :, None], (1, 1, reps))
            feats[:, :, j * reps:(j + 1) * reps] = block[:, :, : max(0, min(reps, d - j * reps))]
        global_desc = feats.mean(axis=1)

        # Lidar-side point features: range and bearing of the cell center.
        res = grid.resolution
        dx = (cells[:, 0] + 0.5) * res - robot.x
        dy = (cells[:, 1] + 0.5) * res - robot.y
        rr = np.hypot(dx, dy) / max(params.max_range, 1e-9)
        bb = np.arctan2(dy, dx) / math.pi
        point = np.zeros((n, 1, d))
        point[:, 0, 0::2] = rr[:, None]
        point[:, 0, 1::2] = bb[:, None]
        context = point.mean(axis=1)

        z_img, _ = pool_batch(feats, global_desc, self.weights, side="image")
        z_lidar, _ = pool_batch(point, context, self.weights, side="lidar")
        z_fuse = cross_fuse_batch(z_img, z_lidar, self.weights)
        p_hat = deadend_head_batch(z_fuse, self.weights.head_w, self.weights.head_b)
        return ObservationBatch(tick, cells, p_hat)
