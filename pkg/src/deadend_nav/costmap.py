"""Continuous semantic cost map.

Per-cell dead-end belief kept as clipped log-odds, updated recursively from
soft evidence and read back through the logistic sigmoid. Also owns footprint
pooling (max posterior under the robot's body disc) and the recovery-point
registry used for backtracking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Cell, GridMap, OccupancyClass, Pose, shortest_path_cells, world_to_cell
from .sensor import ObservationBatch

DEFAULT_CLIP = (-10.0, 10.0)
RECOVERY_POSTERIOR_MAX = 0.3
RECOVERY_MIN_OPEN_NEIGHBORS = 3
RECOVERY_DEDUP_RADIUS = 0.5
BLOCKED_THRESHOLD = 0.7
# Backtracking to a point the robot already stands on is a no-op; entries
# closer than this are skipped during selection.
MIN_BACKTRACK_DISTANCE = 1.0


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie strictly inside (0, 1), got {p}")
    return math.log(p / (1.0 - p))


def sigmoid(l: float) -> float:
    # Stable in both tails.
    if l >= 0:
        return 1.0 / (1.0 + math.exp(-l))
    e = math.exp(l)
    return e / (1.0 + e)


@dataclass(frozen=True)
class Footprint:
    """Robot body disc used for pooling posteriors and collision checks."""

    radius: float = 0.3

    def validate(self, resolution: float) -> None:
        # The disc must span at least one cell center wherever it is placed.
        min_radius = resolution * math.sqrt(2.0) / 2.0
        if self.radius < min_radius:
            raise ValueError(
                f"footprint radius {self.radius} below half cell diagonal ({min_radius:.4f})")


class SemanticCostmap:
    """Grid of clipped log-odds dead-end beliefs plus the recovery registry."""

    def __init__(self, grid: GridMap, prior: float = 0.5,
                 clip_bounds: tuple[float, float] = DEFAULT_CLIP) -> None:
        if not 0.0 < prior < 1.0:
            raise ValueError("prior must lie strictly inside (0, 1)")
        l_min, l_max = clip_bounds
        if not l_min < l_max:
            raise ValueError("clip bounds must satisfy l_min < l_max")
        self.grid = grid
        self.prior_logodds = logit(prior)
        self.l_min = float(l_min)
        self.l_max = float(l_max)
        init = min(max(self.prior_logodds, self.l_min), self.l_max)
        self.log_odds = np.full((grid.height, grid.width), init, dtype=np.float64)
        self.last_update = np.full((grid.height, grid.width), -1, dtype=np.int64)
        self.obs_count = np.zeros((grid.height, grid.width), dtype=np.int64)
        # Ordered recovery registry: (cell, tick recorded), oldest first.
        self.recovery_points: list[tuple[Cell, int]] = []

    # -- Bayesian filtering -------------------------------------------------

    def update_cell(self, cell: Cell, p_hat: float, tick: int = 0) -> float:
        """Apply one recursive log-odds update; returns the new clipped value."""
        if not self.grid.in_bounds_cell(cell):
            raise ValueError(f"cell {cell} out of bounds")
        ix, iy = cell
        l_new = self.log_odds[iy, ix] + logit(p_hat) - self.prior_logodds
        l_new = min(max(l_new, self.l_min), self.l_max)
        self.log_odds[iy, ix] = l_new
        self.last_update[iy, ix] = tick
        self.obs_count[iy, ix] += 1
        return float(l_new)

    def update_batch(self, batch: ObservationBatch) -> None:
        """Vectorized update for one observation batch (each cell at most once)."""
        if len(batch) == 0:
            return
        xs = batch.cells[:, 0]
        ys = batch.cells[:, 1]
        inc = np.log(batch.p_hat / (1.0 - batch.p_hat)) - self.prior_logodds
        self.log_odds[ys, xs] = np.clip(self.log_odds[ys, xs] + inc, self.l_min, self.l_max)
        self.last_update[ys, xs] = batch.tick
        self.obs_count[ys, xs] += 1

    def posterior(self, cell: Cell) -> float:
        """sigma(log_odds); strictly inside (0, 1) given finite clip bounds."""
        if not self.grid.in_bounds_cell(cell):
            raise ValueError(f"cell {cell} out of bounds")
        return sigmoid(float(self.log_odds[cell[1], cell[0]]))

    def posterior_grid(self) -> np.ndarray:
        """Posterior field as a float array indexed [iy, ix] (fresh snapshot)."""
        return 1.0 / (1.0 + np.exp(-self.log_odds))

    # -- Footprint pooling --------------------------------------------------

    def footprint_prob(self, point: tuple[float, float], footprint: Footprint,
                       posterior: np.ndarray | None = None) -> float:
        """Max posterior over cells whose centers lie within the body disc.

        A disc too small to catch any center falls back to the containing
        cell. ``posterior`` may be a precomputed snapshot from
        :meth:`posterior_grid`. Raises when the disc misses the map entirely.
        """
        px, py = point
        ex, ey = self.grid.extent
        r = footprint.radius
        if px + r < 0 or py + r < 0 or px - r >= ex or py - r >= ey:
            raise ValueError(f"footprint at {point} covers no in-bounds cell")
        if posterior is None:
            posterior = self.posterior_grid()
        probs, _ = footprint_pool_batch(np.array([[px, py]]), footprint,
                                        self.grid, posterior)
        return float(probs[0])

    # -- Recovery registry ----------------------------------------------------

    def record_recovery_point(self, cell: Cell, tick: int) -> bool:
        """Register a visited low-risk, well-connected cell for backtracking.

        Eligibility: traversable, posterior below the recovery threshold, and
        at least three traversable 8-neighbors. Entries within the dedup
        radius of an existing one replace it with the newer tick. Returns
        True when recorded, False when skipped.
        """
        if not self.grid.in_bounds_cell(cell):
            return False
        ix, iy = cell
        if self.grid.cells[iy, ix] != OccupancyClass.TRAVERSABLE:
            return False
        if self.posterior(cell) >= RECOVERY_POSTERIOR_MAX:
            return False
        x0, x1 = max(ix - 1, 0), min(ix + 2, self.grid.width)
        y0, y1 = max(iy - 1, 0), min(iy + 2, self.grid.height)
        patch = self.grid.cells[y0:y1, x0:x1] == OccupancyClass.TRAVERSABLE
        open_neighbors = int(patch.sum()) - 1
        if open_neighbors < RECOVERY_MIN_OPEN_NEIGHBORS:
            return False
        res = self.grid.resolution
        dedup_sq = (RECOVERY_DEDUP_RADIUS / res) ** 2
        kept = [(c, t) for c, t in self.recovery_points
                if (c[0] - ix) ** 2 + (c[1] - iy) ** 2 > dedup_sq]
        kept.append((cell, tick))
        self.recovery_points = kept
        return True

    def best_recovery_point(self, robot: Pose, grid: GridMap | None = None,
                            visited: np.ndarray | None = None) -> Cell | None:
        """Most recent registry entry reachable through low-posterior cells.

        Reachability uses a 4-connected grid path over cells that are free
        and whose posterior is below the blocked threshold. Returns None when
        no entry qualifies.
        """
        path = self.recovery_path(robot, visited=visited)
        return path[-1] if path else None

    def recovery_path(self, robot: Pose,
                      visited: np.ndarray | None = None) -> list[Cell] | None:
        """Grid path from the robot to the best recovery point, if any.

        ``visited`` marks cells the robot has already driven; those stay
        passable even when their posterior has since risen, so backtracking
        out of a flagged pocket can retrace the robot's own breadcrumbs.
        """
        if not self.recovery_points:
            return None
        start = world_to_cell(self.grid, robot.x, robot.y)
        passable = self.grid.free & (self.posterior_grid() < BLOCKED_THRESHOLD)
        if visited is not None:
            passable |= self.grid.free & visited
        res = self.grid.resolution
        # Most recent first: registry is ordered by recording tick.
        for cell, _tick in sorted(self.recovery_points, key=lambda e: e[1], reverse=True):
            cx, cy = (cell[0] + 0.5) * res, (cell[1] + 0.5) * res
            if math.hypot(robot.x - cx, robot.y - cy) < MIN_BACKTRACK_DISTANCE:
                continue
            path = shortest_path_cells(passable, start, cell)
            if path is not None:
                return path
        return None

    # -- Export ---------------------------------------------------------------



    def export(self, pgm_path, sidecar_path) -> None:
        """Write the posterior field as a P2 graymap plus a recovery sidecar.

        Posteriors scale to 0..255 (255 = posterior 1). The sidecar lists one
        recovery point per line as ``x y tick`` in world meters.
        """
        from .render import write_pgm

        levels = np.rint(self.posterior_grid() * 255.0).astype(np.uint8)
        write_pgm(pgm_path, levels)
        res = self.grid.resolution
        lines = []
        for (ix, iy), tick in self.recovery_points:
            lines.append(f"{(ix + 0.5) * res:.3f} {(iy + 0.5) * res:.3f} {tick}")
        with open(sidecar_path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + ("\n" if lines else ""))


_OFFSET_CACHE: dict[tuple[float, float], tuple[np.ndarray, int]] = {}


def _culled_offsets(radius: float, resolution: float) -> tuple[np.ndarray, int]:
    """(M, 2) cell offsets that can hold a center within ``radius`` of some
    point of the origin cell, and the padding reach they require."""
    key = (radius, resolution)
    hit = _OFFSET_CACHE.get(key)
    if hit is not None:
        return hit
    reach = int(math.ceil(radius / resolution)) + 1
    span = np.arange(-reach, reach + 1)
    ox, oy = np.meshgrid(span, span)
    # Minimal possible distance from any in-cell point to the offset center.
    min_dx = np.maximum(np.abs(ox) - 0.5, 0.0)
    min_dy = np.maximum(np.abs(oy) - 0.5, 0.0)
    keep = (min_dx ** 2 + min_dy ** 2) * resolution ** 2 <= radius ** 2
    offsets = np.stack([ox[keep], oy[keep]], axis=1)
    _OFFSET_CACHE[key] = (offsets, reach)
    return offsets, reach


def _padded_occupancy(grid: GridMap, reach: int) -> np.ndarray:
    """Occupancy padded with True so out-of-map discs read as collisions."""
    cache = getattr(grid, "_occ_pad_cache", None)
    if cache is None:
        cache = {}
        grid._occ_pad_cache = cache
    arr = cache.get(reach)
    if arr is None:
        arr = np.ones((grid.height + 2 * reach, grid.width + 2 * reach), dtype=bool)
        arr[reach:reach + grid.height, reach:reach + grid.width] = grid.occupied
        cache[reach] = arr
    return arr


def _disc_membership(points: np.ndarray, footprint: Footprint, grid: GridMap):
    """Shared geometry for the batch helpers: flat padded indices plus the
    in-disc mask for every (point, offset) pair."""
    res = grid.resolution
    offsets, reach = _culled_offsets(footprint.radius, res)
    scaled = points / res
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base  # position within the cell, in [0, 1)
    dx = offsets[None, :, 0] + 0.5 - frac[:, 0][:, None]
    dy = offsets[None, :, 1] + 0.5 - frac[:, 1][:, None]
    in_disc = (dx * dx + dy * dy) * res * res <= footprint.radius ** 2
    wp = grid.width + 2 * reach
    flat = ((base[:, 1][:, None] + offsets[None, :, 1] + reach) * wp
            + base[:, 0][:, None] + offsets[None, :, 0] + reach)
    return base, flat, in_disc, reach


def footprint_collision_batch(points: np.ndarray, footprint: Footprint,
                              grid: GridMap) -> np.ndarray:
    """True for each point whose body disc covers an occupied cell center or
    pokes outside the map (conservative treatment of the boundary)."""
    if points.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    footprint.validate(grid.resolution)
    base, flat, in_disc, reach = _disc_membership(points, footprint, grid)
    occ_pad = _padded_occupancy(grid, reach)
    occ = occ_pad.ravel().take(flat)
    collided = (in_disc & occ).any(axis=1)
    empty = ~in_disc.any(axis=1)
    if empty.any():
        wp = grid.width + 2 * reach
        own = (base[empty, 1] + reach) * wp + base[empty, 0] + reach
        collided[empty] |= occ_pad.ravel().take(own)
    return collided


def footprint_pool_batch(points: np.ndarray, footprint: Footprint, grid: GridMap,
                         posterior: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized footprint pooling for many query points.

    ``points`` is a (K, 2) float array of world coordinates. Returns
    ``(probs, collided)`` where ``probs[k]`` is the max posterior over
    in-bounds cell centers inside the disc at point k and ``collided[k]`` is
    True when the disc covers an occupied cell center or reaches outside the
    map. Agrees with :meth:`SemanticCostmap.footprint_prob` on in-bounds discs.
    """
    if points.shape[0] == 0:
        return np.zeros(0), np.zeros(0, dtype=bool)
    footprint.validate(grid.resolution)
    base, flat, in_disc, reach = _disc_membership(points, footprint, grid)
    occ_pad = _padded_occupancy(grid, reach)
    post_pad = np.full((grid.height + 2 * reach, grid.width + 2 * reach), -1.0)
    post_pad[reach:reach + grid.height, reach:reach + grid.width] = posterior

    occ = occ_pad.ravel().take(flat)
    post = post_pad.ravel().take(flat)
    collided = (in_disc & occ).any(axis=1)
    probs = np.where(in_disc, post, -1.0).max(axis=1)
    # probs < 0 means the disc held no usable center: either out-of-map only,
    # or degenerate small disc; fall back to the containing cell.
    fallback = probs < 0.0
    if fallback.any():
        wp = grid.width + 2 * reach
        own = (base[fallback, 1] + reach) * wp + base[fallback, 0] + reach
        probs[fallback] = post_pad.ravel().take(own)
        collided[fallback] |= occ_pad.ravel().take(own)
        # Still negative: the point's own cell is outside the map.
        oob = probs < 0.0
        if oob.any():
            probs[oob] = 0.0
            collided[oob] = True
    return probs, collided
