"""Static portable-pixmap rendering of costmaps, trajectories, and markers."""

from __future__ import annotations

import numpy as np

from .geometry import supercover_cells
from .grid import GridMap, Scenario

POSTERIOR_SAFE = (60, 170, 60)
POSTERIOR_RISK = (200, 40, 40)
TRAJECTORY = (30, 60, 220)
RECOVERY = (40, 160, 220)
START = (250, 220, 40)
GOAL = (250, 250, 250)


def write_pgm(path, levels: np.ndarray) -> None:
    """P2 graymap; row 0 of the file is the top (highest y) map row."""
    h, w = levels.shape
    rows = [" ".join(str(int(v)) for v in levels[iy]) for iy in range(h - 1, -1, -1)]
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P2\n{w} {h}\n255\n")
        fh.write("\n".join(rows) + "\n")


def write_ppm(path, rgb: np.ndarray) -> None:
    """P3 pixmap from an (H, W, 3) uint8 array indexed [iy, ix]."""
    h, w, _ = rgb.shape
    lines = []
    for iy in range(h - 1, -1, -1):
        lines.append(" ".join(f"{r} {g} {b}" for r, g, b in rgb[iy]))
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"P3\n{w} {h}\n255\n")
        fh.write("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm` (plain P2 only)."""
    with open(path, "r", encoding="ascii") as fh:
        tokens = fh.read().split()
    if tokens[0] != "P2":
        raise ValueError("not a plain P2 graymap")
    w, h, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array([int(t) for t in tokens[4:4 + w * h]], dtype=np.uint8).reshape(h, w)
    return vals[::-1, :]  # back to [iy, ix] with y increasing upward


def posterior_rgb(posterior: np.ndarray, grid: GridMap | None = None) -> np.ndarray:
    """Posterior heatmap: gray scaled by risk, occupied cells black.

    Posterior 0 renders near-white, 1 near-black, so risky pockets read as
    dark regions in both the color render and the exported graymap.
    """
    level = np.rint((1.0 - posterior) * 255.0).astype(np.uint8)
    rgb = np.stack([level, level, level], axis=2)
    if grid is not None:
        rgb[grid.occupied] = (0, 0, 0)
    return rgb


def _mark(rgb: np.ndarray, ix: int, iy: int, color, size: int = 2) -> None:
    h, w, _ = rgb.shape
    rgb[max(iy - size, 0):min(iy + size + 1, h),
        max(ix - size, 0):min(ix + size + 1, w)] = color


def draw_polyline(rgb: np.ndarray, points_xy: list[tuple[float, float]],
                  resolution: float, color) -> None:
    """Rasterize a world-coordinate polyline onto the image."""
    h, w, _ = rgb.shape
    for a, b in zip(points_xy, points_xy[1:]):
        for ix, iy in supercover_cells(a[0], a[1], b[0], b[1], resolution):
            if 0 <= ix < w and 0 <= iy < h:
                rgb[iy, ix] = color


def parse_trace(text: str) -> list[tuple[float, float]]:
    """Extract the (x, y) polyline from a trace CSV document."""
    points = []
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return points
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) < 3:
            raise ValueError(f"malformed trace row: {ln!r}")
        points.append((float(parts[1]), float(parts[2])))
    return points


def parse_recovery_sidecar(text: str) -> list[tuple[float, float, int]]:
    out = []
    for ln in text.splitlines():
        if not ln.strip():
            continue
        x, y, tick = ln.split()
        out.append((float(x), float(y), int(tick)))
    return out


def render_episode(posterior: np.ndarray, resolution: float,
                   trajectory: list[tuple[float, float]],
                   recovery_points: list[tuple[float, float, int]] | None = None,
                   start: tuple[float, float] | None = None,
                   goal: tuple[float, float] | None = None,
                   grid: GridMap | None = None) -> np.ndarray:
    """Compose the standard episode picture: heatmap + path + markers."""
    rgb = posterior_rgb(posterior, grid)
    if trajectory:
        draw_polyline(rgb, trajectory, resolution, TRAJECTORY)
    for x, y, _tick in recovery_points or []:
        _mark(rgb, int(x / resolution), int(y / resolution), RECOVERY, size=2)
    if start is not None:
        _mark(rgb, int(start[0] / resolution), int(start[1] / resolution), START, size=3)
    if goal is not None:
        _mark(rgb, int(goal[0] / resolution), int(goal[1] / resolution), GOAL, size=3)
    return rgb


def render_scenario_overview(scenario: Scenario) -> np.ndarray:
    """Map-only picture: free space white, walls black, labels red-tinted."""
    g = scenario.map
    rgb = np.full((g.height, g.width, 3), 255, dtype=np.uint8)
    rgb[g.occupied] = (0, 0, 0)
    rgb[g.cells == 2] = (180, 180, 120)  # uncertain
    mask = scenario.deadend_mask()
    rgb[mask] = POSTERIOR_RISK
    return rgb
