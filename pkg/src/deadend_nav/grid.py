"""Discretized local map: occupancy grid, scenario documents, dead-end labeling.

The world is a dense grid of square cells. Scenarios are loaded from a
line-oriented text format (see :func:`load_scenario`) and carry authored
ground-truth dead-end labels. An independent articulation-based oracle
(:func:`ground_truth_deadend`) can derive labels geometrically; when the two
disagree the authored labels win and a warning is emitted.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import TYPE_CHECKING

import numpy as np

from .geometry import normalize_angle

if TYPE_CHECKING:
    from .sensor import SensorParams

Cell = tuple[int, int]

DEFAULT_RESOLUTION = 0.1
DEFAULT_GOAL_TOLERANCE = 0.75

_HEADER_KEYS = ("resolution", "start", "goal", "tolerance", "seed")
_RASTER_CHARS = {".", "#", "?", "D"}


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario document."""


class LabelMismatchWarning(UserWarning):
    """Authored dead-end labels disagree with the articulation oracle."""


class OccupancyClass(IntEnum):
    TRAVERSABLE = 0
    OCCUPIED = 1
    UNCERTAIN = 2


@dataclass(frozen=True)
class Pose:
    """Robot pose in world meters; heading normalized into (-pi, pi]."""

    x: float
    y: float
    heading: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "heading", normalize_angle(self.heading))


class GridMap:
    """Immutable dense grid of occupancy classes.

    ``cells`` is stored as a uint8 array indexed ``[iy, ix]``; cell (ix, iy)
    spans world x in [ix*res, (ix+1)*res) and y likewise, with y increasing
    upward.
    """

    def __init__(self, resolution: float, cells: np.ndarray) -> None:
        if resolution <= 0:
            raise ScenarioError(f"resolution must be > 0, got {resolution}")
        cells = np.asarray(cells, dtype=np.uint8)
        if cells.ndim != 2 or cells.size == 0:
            raise ScenarioError("cells must be a nonempty 2-D array")
        self.resolution = float(resolution)
        self.cells = cells
        self.cells.setflags(write=False)
        self.height, self.width = cells.shape
        self.occupied = cells == OccupancyClass.OCCUPIED
        self.occupied.setflags(write=False)
        self.free = ~self.occupied
        self.free.setflags(write=False)

    @property
    def extent(self) -> tuple[float, float]:
        """World size (x_extent, y_extent) in meters."""
        return self.width * self.resolution, self.height * self.resolution

    def in_bounds_point(self, x: float, y: float) -> bool:
        ex, ey = self.extent
        return 0.0 <= x < ex and 0.0 <= y < ey

    def in_bounds_cell(self, cell: Cell) -> bool:
        ix, iy = cell
        return 0 <= ix < self.width and 0 <= iy < self.height

    def class_at(self, cell: Cell) -> OccupancyClass:
        ix, iy = cell
        return OccupancyClass(int(self.cells[iy, ix]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridMap):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.cells, other.cells)


def _default_sensor_params():
    from .sensor import SensorParams

    return SensorParams()


@dataclass(frozen=True)
class Scenario:
    """A fully validated benchmark scenario: map, endpoints, labels, seed."""

    map: GridMap
    start: Pose
    goal: tuple[float, float]
    goal_tolerance: float
    deadend_regions: frozenset[Cell]
    rng_seed: int
    sensor_params: "SensorParams" = field(default_factory=_default_sensor_params)
    name: str = ""

    def deadend_mask(self) -> np.ndarray:
        """Boolean [iy, ix] array of the ground-truth dead-end labels."""
        mask = np.zeros((self.map.height, self.map.width), dtype=bool)
        for ix, iy in self.deadend_regions:
            mask[iy, ix] = True
        return mask


def world_to_cell(grid: GridMap, x: float, y: float) -> Cell:
    """Floor-quantize a world point to its containing cell (ix, iy)."""
    if not grid.in_bounds_point(x, y):
        raise ScenarioError(f"point ({x}, {y}) outside map bounds {grid.extent}")
    return int(math.floor(x / grid.resolution)), int(math.floor(y / grid.resolution))


def cell_center(grid: GridMap, cell: Cell) -> tuple[float, float]:
    """World coordinates of a cell's center."""
    ix, iy = cell
    return (ix + 0.5) * grid.resolution, (iy + 0.5) * grid.resolution


def load_scenario(text: str, name: str = "") -> Scenario:
    """Parse and validate a scenario document.

    Format: header lines ``resolution <f>``, ``start <x> <y> <theta>``,
    ``goal <x> <y>``, ``tolerance <f>``, ``seed <u64>`` in any order, then a
    character raster, one row per line, rows y-descending and columns
    x-ascending: ``.`` traversable, ``#`` occupied, ``?`` uncertain, ``D``
    traversable with an authored dead-end label.

    Raises :class:`ScenarioError` on malformed documents or invalid geometry
    (start/goal off the map or on occupied cells, empty raster, ragged rows).
    """
    headers: dict[str, list[str]] = {}
    raster_rows: list[str] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip()
        if not line.strip():
            continue
        word = line.split()[0]
        if word in _HEADER_KEYS:
            if raster_rows:
                raise ScenarioError(f"line {lineno}: header after raster start")
            if word in headers:
                raise ScenarioError(f"line {lineno}: duplicate header '{word}'")
            headers[word] = line.split()[1:]
        else:
            if not set(line) <= _RASTER_CHARS:
                bad = sorted(set(line) - _RASTER_CHARS)
                raise ScenarioError(f"line {lineno}: unexpected characters {bad}")
            raster_rows.append(line)

    if not raster_rows:
        raise ScenarioError("document has no raster")
    width = len(raster_rows[0])
    if any(len(r) != width for r in raster_rows):
        raise ScenarioError("raster rows have inconsistent width")

    def one_float(key: str, default: float | None = None) -> float:
        if key not in headers:
            if default is None:
                raise ScenarioError(f"missing required header '{key}'")
            return default
        vals = headers[key]
        if len(vals) != 1:
            raise ScenarioError(f"header '{key}' takes one value")
        return float(vals[0])

    resolution = one_float("resolution", DEFAULT_RESOLUTION)
    tolerance = one_float("tolerance", DEFAULT_GOAL_TOLERANCE)
    if tolerance <= 0:
        raise ScenarioError("tolerance must be > 0")
    seed = 0
    if "seed" in headers:
        seed = int(headers["seed"][0])
        if seed < 0:
            raise ScenarioError("seed must be nonnegative")
    if "start" not in headers or len(headers["start"]) != 3:
        raise ScenarioError("header 'start <x> <y> <theta>' is required")
    if "goal" not in headers or len(headers["goal"]) != 2:
        raise ScenarioError("header 'goal <x> <y>' is required")
    start = Pose(*(float(v) for v in headers["start"]))
    goal = (float(headers["goal"][0]), float(headers["goal"][1]))

    height = len(raster_rows)
    cells = np.empty((height, width), dtype=np.uint8)
    labels: set[Cell] = set()
    char_class = {".": OccupancyClass.TRAVERSABLE, "#": OccupancyClass.OCCUPIED,
                  "?": OccupancyClass.UNCERTAIN, "D": OccupancyClass.TRAVERSABLE}
    for row_i, row in enumerate(raster_rows):
        iy = height - 1 - row_i  # rows are y-descending
        for ix, ch in enumerate(row):
            cells[iy, ix] = char_class[ch]
            if ch == "D":
                labels.add((ix, iy))

    grid = GridMap(resolution, cells)
    for label, (px, py) in (("start", (start.x, start.y)), ("goal", goal)):
        if not grid.in_bounds_point(px, py):
            raise ScenarioError(f"{label} ({px}, {py}) outside map bounds")
        if grid.class_at(world_to_cell(grid, px, py)) != OccupancyClass.TRAVERSABLE:
            raise ScenarioError(f"{label} ({px}, {py}) is not on a traversable cell")

    scenario = Scenario(map=grid, start=start, goal=goal, goal_tolerance=tolerance,
                        deadend_regions=frozenset(labels), rng_seed=seed, name=name)
    if labels:
        oracle = ground_truth_deadend(grid, goal)
        if oracle != scenario.deadend_regions:
            warnings.warn(
                f"authored dead-end labels differ from the articulation oracle "
                f"(authored {len(labels)}, oracle {len(oracle)}); authored labels win",
                LabelMismatchWarning, stacklevel=2)
    return scenario


def _free_mask(grid: GridMap) -> np.ndarray:
    # Uncertain cells count as traversable for labeling purposes.
    return grid.cells != OccupancyClass.OCCUPIED


def _reachable_from(free: np.ndarray, seed: Cell) -> np.ndarray:
    """4-connected flood fill over ``free`` starting at ``seed`` (ix, iy)."""
    height, width = free.shape
    reached = np.zeros_like(free)
    sx, sy = seed
    if not free[sy, sx]:
        return reached
    reached[sy, sx] = True
    frontier = reached.copy()
    while frontier.any():
        grown = np.zeros_like(frontier)
        grown[1:, :] |= frontier[:-1, :]
        grown[:-1, :] |= frontier[1:, :]
        grown[:, 1:] |= frontier[:, :-1]
        grown[:, :-1] |= frontier[:, 1:]
        frontier = grown & free & ~reached
        reached |= frontier
    return reached


def _articulation_cells(free: np.ndarray) -> list[Cell]:
    """Articulation points of the 4-connected free-space graph (iterative Tarjan)."""
    height, width = free.shape
    ys, xs = np.nonzero(free)
    nodes = list(zip(xs.tolist(), ys.tolist()))
    if not nodes:
        return []
    index = {c: i for i, c in enumerate(nodes)}
    disc = [-1] * len(nodes)
    low = [0] * len(nodes)
    result: set[Cell] = set()
    counter = 0

    def neighbors(c: Cell):
        x, y = c
        for nx, ny in ((x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)):
            if 0 <= nx < width and 0 <= ny < height and free[ny, nx]:
                yield (nx, ny)

    for root_i, root in enumerate(nodes):
        if disc[root_i] != -1:
            continue
        root_children = 0
        stack = [(root_i, -1, iter(neighbors(root)))]
        disc[root_i] = low[root_i] = counter
        counter += 1
        while stack:
            vi, parent, it = stack[-1]
            advanced = False
            for ncell in it:
                wi = index[ncell]
                if disc[wi] == -1:
                    disc[wi] = low[wi] = counter
                    counter += 1
                    if vi == root_i:
                        root_children += 1
                    stack.append((wi, vi, iter(neighbors(ncell))))
                    advanced = True
                    break
                elif wi != parent:
                    low[vi] = min(low[vi], disc[wi])
            if not advanced:
                stack.pop()
                if stack:
                    pi = stack[-1][0]
                    low[pi] = min(low[pi], low[vi])
                    if pi != root_i and low[vi] >= disc[pi]:
                        result.add(nodes[pi])
        if root_children > 1:
            result.add(root)
    return sorted(result)


def ground_truth_deadend(grid: GridMap, goal: tuple[float, float]) -> frozenset[Cell]:
    """Geometric dead-end oracle.

    A traversable cell is labeled when it cannot reach the goal cell at all,
    or when removing a single articulation cell of its free-space component
    separates it from the goal. The articulation cell itself (the corridor
    mouth) stays unlabeled, as does the goal cell.
    """
    goal_cell = world_to_cell(grid, *goal)
    free = _free_mask(grid)
    if not free[goal_cell[1], goal_cell[0]]:
        raise ScenarioError("goal is not on a traversable cell")

    reachable = _reachable_from(free, goal_cell)
    labels = free & ~reachable  # disconnected free space is dead-end by definition

    for art in _articulation_cells(free):
        if art == goal_cell:
            continue
        if not reachable[art[1], art[0]]:
            continue  # hanging regions of unreachable components are already labeled
        cut = free.copy()
        cut[art[1], art[0]] = False
        still = _reachable_from(cut, goal_cell)
        labels |= cut & reachable & ~still

    labels[goal_cell[1], goal_cell[0]] = False
    ys, xs = np.nonzero(labels)
    return frozenset(zip(xs.tolist(), ys.tolist()))


def shortest_path_cells(passable: np.ndarray, start: Cell, target: Cell) -> list[Cell] | None:
    """4-connected BFS shortest path over a boolean [iy, ix] passability mask.

    Returns the cell sequence start..target inclusive, or None when
    unreachable. The start cell is accepted even if marked impassable (the
    robot is already there).
    """
    height, width = passable.shape
    if not (0 <= target[0] < width and 0 <= target[1] < height):
        return None
    if not passable[target[1], target[0]]:
        return None
    if start == target:
        return [start]
    prev: dict[Cell, Cell] = {start: start}
    queue: deque[Cell] = deque([start])
    while queue:
        cx, cy = queue.popleft()
        for nxt in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            nx, ny = nxt
            if not (0 <= nx < width and 0 <= ny < height):
                continue
            if nxt in prev or not passable[ny, nx]:
                continue
            prev[nxt] = (cx, cy)
            if nxt == target:
                path = [nxt]
                while path[-1] != start:
                    path.append(prev[path[-1]])
                path.reverse()
                return path
            queue.append(nxt)
    return None
