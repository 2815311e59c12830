"""Canonical benchmark fixtures, generated from code so they stay reproducible.

Four 20 m x 20 m worlds at 0.1 m resolution:

* ``open_corridor``   - straight run, no dead ends; every controller should pass.
* ``u_corridor``      - an alcove sits squarely on the straight line to the
                        goal; a risk-blind planner drives in, a risk-aware one
                        skirts it through the corridor gaps.
* ``loading_dock``    - same trap in an open yard with a wider, deeper bay.
* ``blind_corner``    - an L-bend whose straight continuation is a labeled
                        pocket off the greedy route; exercises detection near
                        a corner without forcing divergence.

Each builder returns the scenario *document text*; ``build(name)`` parses it
through the regular loader so fixtures exercise the same code path as files
on disk.
"""

from __future__ import annotations

import numpy as np

from .grid import Scenario, load_scenario

CANONICAL_NAMES = ("open_corridor", "u_corridor", "loading_dock", "blind_corner")

_SIZE = 200  # cells per side at 0.1 m resolution


class _Canvas:
    """Character raster painter; coordinates in cell indices (ix, iy)."""

    def __init__(self, size: int = _SIZE) -> None:
        self.grid = np.full((size, size), ".", dtype="<U1")
        self.size = size

    def rect(self, x0: int, x1: int, y0: int, y1: int, ch: str) -> None:
        """Fill cells with ix in [x0, x1) and iy in [y0, y1)."""
        self.grid[max(y0, 0):min(y1, self.size), max(x0, 0):min(x1, self.size)] = ch

    def border(self, thickness: int = 2) -> None:
        t = thickness
        self.rect(0, self.size, 0, t, "#")
        self.rect(0, self.size, self.size - t, self.size, "#")
        self.rect(0, t, 0, self.size, "#")
        self.rect(self.size - t, self.size, 0, self.size, "#")

    def text(self, header: str) -> str:
        rows = ["".join(self.grid[iy]) for iy in range(self.size - 1, -1, -1)]
        return header + "\n" + "\n".join(rows) + "\n"


def _header(start, goal, seed: int) -> str:
    return (f"resolution 0.1\n"
            f"start {start[0]} {start[1]} {start[2]}\n"
            f"goal {goal[0]} {goal[1]}\n"
            f"tolerance 0.75\n"
            f"seed {seed}")


def open_corridor(seed: int = 0) -> str:
    c = _Canvas()
    c.border()
    c.rect(0, _SIZE, 0, 85, "#")     # below y = 8.5
    c.rect(0, _SIZE, 115, _SIZE, "#")  # above y = 11.5
    return c.text(_header((2.0, 10.0, 0.0), (11.0, 10.0), seed))


def u_corridor(seed: int = 0) -> str:
    """East corridor with a dead-end alcove straddling the straight line.

    The alcove opens west (mouth 2.8 m wide); 1.4 m corridor gaps remain on
    both sides, and the goal sits beyond the alcove's back wall, slightly
    north, so skirting the north gap shortens the distance monotonically.
    The goal stays within the planner's goal-bias cap of the whole corridor.
    """
    c = _Canvas()
    c.border()
    c.rect(0, _SIZE, 0, 70, "#")       # corridor south wall: y < 7
    c.rect(0, _SIZE, 130, _SIZE, "#")  # corridor north wall: y > 13
    # Alcove arms and back wall (opening faces west at x = 6).
    c.rect(60, 98, 114, 116, "#")      # north arm
    c.rect(60, 98, 84, 86, "#")        # south arm
    c.rect(96, 98, 84, 116, "#")       # back wall
    c.rect(60, 96, 86, 114, "D")       # labeled interior
    return c.text(_header((3.0, 10.0, 0.0), (12.0, 11.0), seed))


def loading_dock(seed: int = 0) -> str:
    """Open yard with a wide dock bay directly on the start-goal line."""
    c = _Canvas()
    c.border()
    c.rect(65, 102, 120, 122, "#")     # north arm
    c.rect(65, 102, 78, 80, "#")       # south arm
    c.rect(100, 102, 78, 122, "#")     # back wall
    c.rect(65, 100, 80, 120, "D")      # labeled interior
    c.rect(30, 33, 160, 163, "?")      # occluded vegetation patch, off the route
    return c.text(_header((3.0, 10.0, 0.0), (12.5, 10.5), seed))


def blind_corner(seed: int = 0) -> str:
    """L-corridor; the straight continuation past the bend is a labeled pocket."""
    c = _Canvas()
    c.rect(0, _SIZE, 0, _SIZE, "#")
    c.rect(2, 160, 85, 115, ".")       # horizontal corridor to x = 16
    c.rect(95, 125, 85, 160, ".")      # vertical corridor at the bend
    c.rect(125, 160, 85, 115, "D")     # pocket past the bend
    return c.text(_header((2.5, 10.0, 0.0), (11.0, 14.5), seed))


_BUILDERS = {
    "open_corridor": open_corridor,
    "u_corridor": u_corridor,
    "loading_dock": loading_dock,
    "blind_corner": blind_corner,
}


def document(name: str, seed: int = 0) -> str:
    if name not in _BUILDERS:
        raise KeyError(f"unknown scenario {name!r}; canonical names: {CANONICAL_NAMES}")
    return _BUILDERS[name](seed)


def build(name: str, seed: int = 0) -> Scenario:
    import warnings

    from .grid import LabelMismatchWarning

    with warnings.catch_warnings():
        # Canonical alcoves have multi-cell mouths the cell-level articulation
        # oracle cannot cut, so the authored labels intentionally differ.
        warnings.simplefilter("ignore", LabelMismatchWarning)
        return load_scenario(document(name, seed), name=name)


def write_all(directory, seed: int = 0) -> list[str]:
    """Write every canonical fixture as <name>.scn; returns the paths."""
    import os

    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in CANONICAL_NAMES:
        path = os.path.join(directory, f"{name}.scn")
        with open(path, "w", encoding="ascii") as fh:
            fh.write(document(name, seed))
        paths.append(path)
    return paths
