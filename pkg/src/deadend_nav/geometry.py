"""Small geometric helpers shared across modules: angles and grid ray traversal."""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    theta = math.fmod(theta, TWO_PI)
    if theta <= -math.pi:
        theta += TWO_PI
    elif theta > math.pi:
        theta -= TWO_PI
    return theta


def supercover_cells(x0: float, y0: float, x1: float, y1: float,
                     resolution: float) -> list[tuple[int, int]]:
    """All grid cells touched by the closed segment from (x0, y0) to (x1, y1).

    Conservative supercover traversal: when the segment passes exactly through
    a lattice corner, both side cells adjacent to the corner are included, so
    a diagonal seam of occupied cells cannot be slipped through.

    Returns cells as (ix, iy) in traversal order, start cell first.
    """
    inv = 1.0 / resolution
    # Work in cell units so lattice lines sit at integers.
    ax, ay = x0 * inv, y0 * inv
    bx, by = x1 * inv, y1 * inv
    ix, iy = int(math.floor(ax)), int(math.floor(ay))
    jx, jy = int(math.floor(bx)), int(math.floor(by))

    cells = [(ix, iy)]
    dx, dy = bx - ax, by - ay
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    tie_eps = 1e-12

    # Parametric distance to the next lattice crossing per axis.
    if dx != 0.0:
        t_max_x = ((ix + (sx > 0)) - ax) / dx
        t_delta_x = abs(1.0 / dx)
    else:
        t_max_x, t_delta_x = math.inf, math.inf
    if dy != 0.0:
        t_max_y = ((iy + (sy > 0)) - ay) / dy
        t_delta_y = abs(1.0 / dy)
    else:
        t_max_y, t_delta_y = math.inf, math.inf

    max_cells = 3 * (abs(jx - ix) + abs(jy - iy)) + 4
    while (ix, iy) != (jx, jy) and len(cells) <= max_cells:
        if abs(t_max_x - t_max_y) <= tie_eps:
            # Exact corner crossing: include both side cells, then step diagonally.
            if t_max_x > 1.0 + tie_eps:
                break
            cells.append((ix + sx, iy))
            cells.append((ix, iy + sy))
            ix += sx
            iy += sy
            t_max_x += t_delta_x
            t_max_y += t_delta_y
        elif t_max_x < t_max_y:
            if t_max_x > 1.0 + tie_eps:
                break
            ix += sx
            t_max_x += t_delta_x
        else:
            if t_max_y > 1.0 + tie_eps:
                break
            iy += sy
            t_max_y += t_delta_y
        cells.append((ix, iy))
    return cells


def batch_visibility(origin_x: float, origin_y: float,
                     targets: np.ndarray,
                     blocked: np.ndarray,
                     resolution: float) -> np.ndarray:
    """Vectorized line-of-sight test from one origin to many cell centers.

    ``targets`` is an (N, 2) int array of (ix, iy) cells; ``blocked`` a bool
    array indexed [iy, ix]. A target is visible when no blocked cell lies on
    the supercover of the segment from the origin to the target's center,
    excluding the origin's own cell and the target cell itself.

    Matches :func:`supercover_cells` semantics, including corner ties.
    """
    n = targets.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    height, width = blocked.shape
    # Pad by one ring: tie side-cells can poke one cell past the box spanned
    # by origin and target. Padding reads as blocked, which is conservative
    # and cannot trigger for in-bounds origin/target pairs anyway.
    wp = width + 2
    pad = np.ones((height + 2, width + 2), dtype=bool)
    pad[1:height + 1, 1:width + 1] = blocked
    flat_blocked = pad.ravel()

    inv = 1.0 / resolution
    ax = origin_x * inv
    ay = origin_y * inv
    ox, oy = int(math.floor(ax)), int(math.floor(ay))

    jx = targets[:, 0].astype(np.int64)
    jy = targets[:, 1].astype(np.int64)
    dx = (jx + 0.5) - ax
    dy = (jy + 0.5) - ay
    sx = np.where(dx > 0, 1, -1)
    sy = np.where(dy > 0, 1, -1)

    with np.errstate(divide="ignore"):
        t_delta_x = np.where(dx != 0.0, np.abs(1.0 / dx), np.inf)
        t_delta_y = np.where(dy != 0.0, np.abs(1.0 / dy), np.inf)
        t_max_x = np.where(dx != 0.0, ((ox + (sx > 0)) - ax) / dx, np.inf)
        t_max_y = np.where(dy != 0.0, ((oy + (sy > 0)) - ay) / dy, np.inf)

    visible = np.ones(n, dtype=bool)
    tie_eps = 1e-12
    step_sx = sx
    step_sy = sy * wp  # row stride in the padded flat array
    flat = np.full(n, (oy + 1) * wp + (ox + 1), dtype=np.int64)
    flat_target = (jy + 1) * wp + (jx + 1)
    active = flat != flat_target

    max_steps = 2 * (width + height) + 4
    for _ in range(max_steps):
        if not active.any():
            break
        with np.errstate(invalid="ignore"):
            diff = t_max_x - t_max_y
            tie = active & (np.abs(diff) <= tie_eps)
            go_x = active & ~tie & (diff < 0)
            go_y = active & ~tie & ~go_x

        if tie.any():
            side_a = flat + step_sx
            side_b = flat + step_sy
            hit = (tie & flat_blocked.take(side_a) & (side_a != flat_target)) \
                | (tie & flat_blocked.take(side_b) & (side_b != flat_target))
            visible &= ~hit
            flat = np.where(tie, side_a + step_sy, flat)
            t_max_x = np.where(tie, t_max_x + t_delta_x, t_max_x)
            t_max_y = np.where(tie, t_max_y + t_delta_y, t_max_y)

        flat = np.where(go_x, flat + step_sx, np.where(go_y, flat + step_sy, flat))
        t_max_x = np.where(go_x, t_max_x + t_delta_x, t_max_x)
        t_max_y = np.where(go_y, t_max_y + t_delta_y, t_max_y)

        moved = tie | go_x | go_y
        at_target = flat == flat_target
        visible &= ~(moved & ~at_target & flat_blocked.take(flat))
        active &= ~at_target & visible
    return visible
