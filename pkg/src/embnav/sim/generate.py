"""Procedural room generation. Same (seed, config) -> bit-identical scene."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .types import (
    FREE, SURFACE, WALL, CELL_SIZE, SceneSpec, ObjectInstance,
    category_height, category_openable, cell_center,
)

__all__ = ["SimConfig", "generate_scene", "walkable_mask", "connected_free"]


@dataclass
class SimConfig:
    """Knobs for scene generation; validated on construction."""

    grid_height: int = 11
    grid_width: int = 11
    object_count: int = 8
    category_count: int = 12
    wall_count: int = 2
    surface_count: int = 2
    max_steps: int = 100

    def validate(self) -> None:
        if self.grid_height < 5 or self.grid_width < 5:
            raise ValueError("grid size must be at least 5x5")
        if self.object_count < 1:
            raise ValueError("object_count must be >= 1")
        if self.category_count < 2:
            raise ValueError("category_count must be >= 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        cells = self.grid_height * self.grid_width
        if self.object_count > cells // 2:
            raise ValueError(f"object_count {self.object_count} exceeds placeable cells")

    def to_dict(self) -> dict:
        return {
            "grid_height": self.grid_height, "grid_width": self.grid_width,
            "object_count": self.object_count, "category_count": self.category_count,
            "wall_count": self.wall_count, "surface_count": self.surface_count,
            "max_steps": self.max_steps,
        }


def walkable_mask(grid: np.ndarray, object_cells: set[tuple[int, int]]) -> np.ndarray:
    """Cells an agent may stand on: free type and not under an object."""
    mask = grid == FREE
    for (i, j) in object_cells:
        if 0 <= i < grid.shape[0] and 0 <= j < grid.shape[1]:
            mask[i, j] = False
    return mask


def connected_free(mask: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """BFS flood fill over a walkability mask from `start` (4-connected)."""
    seen = np.zeros_like(mask, dtype=bool)
    if not mask[start]:
        return seen
    q = deque([start])
    seen[start] = True
    h, w = mask.shape
    while q:
        i, j = q.popleft()
        for di, dj in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                seen[ni, nj] = True
                q.append((ni, nj))
    return seen


def _single_component(mask: np.ndarray) -> bool:
    idx = np.argwhere(mask)
    if len(idx) == 0:
        return False
    comp = connected_free(mask, tuple(idx[0]))
    return bool(comp.sum() == mask.sum())


def _objects_reachable(grid: np.ndarray, cells: list[tuple[int, int]]) -> bool:
    """Every object cell must touch the (single) walkable component."""
    mask = walkable_mask(grid, set(cells))
    if not _single_component(mask):
        return False
    h, w = grid.shape
    for (i, j) in cells:
        ok = False
        for di, dj in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and mask[ni, nj]:
                ok = True
                break
        if not ok:
            return False
    return True


def generate_scene(seed: int, config: SimConfig) -> SceneSpec:
    """Build a deterministic room: optional interior walls and surfaces,
    then objects on distinct cells, all reachable from the walkable region.
    """
    config.validate()
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    h, w = config.grid_height, config.grid_width
    grid = np.zeros((h, w), dtype=np.int8)

    # Interior wall segments; revert any that disconnect the free region.
    placed_walls = 0
    for _ in range(config.wall_count * 8):
        if placed_walls >= config.wall_count:
            break
        horizontal = bool(rng.integers(0, 2))
        span = int(rng.integers(2, max(3, (w if horizontal else h) // 2 + 1)))
        i = int(rng.integers(1, h - 1))
        j = int(rng.integers(1, w - 1))
        cells = []
        for k in range(span):
            ci, cj = (i, j + k) if horizontal else (i + k, j)
            if 0 < ci < h - 1 and 0 < cj < w - 1:
                cells.append((ci, cj))
        if not cells:
            continue
        before = grid[tuple(np.array(cells).T)].copy()
        for c in cells:
            grid[c] = WALL
        if not _single_component(grid == FREE):
            grid[tuple(np.array(cells).T)] = before
            continue
        placed_walls += 1

    # Raised surfaces: block walking, not sight.
    free_cells = [tuple(c) for c in np.argwhere(grid == FREE)]
    placed_surfaces = 0
    for _ in range(config.surface_count * 8):
        if placed_surfaces >= config.surface_count or not free_cells:
            break
        pick = free_cells[int(rng.integers(0, len(free_cells)))]
        grid[pick] = SURFACE
        if not _single_component(grid == FREE):
            grid[pick] = FREE
            continue
        free_cells.remove(pick)
        placed_surfaces += 1

    # Objects: distinct free/surface cells, each adjacent to the walkable
    # component so interaction is always possible.
    candidates = [tuple(c) for c in np.argwhere(grid != WALL)]
    if config.object_count > len(candidates):
        raise ValueError("object_count exceeds available cells")
    chosen: list[tuple[int, int]] = []
    order = rng.permutation(len(candidates))
    for idx in order:
        if len(chosen) >= config.object_count:
            break
        cell = candidates[int(idx)]
        if grid[cell] == SURFACE or _objects_reachable(grid, chosen + [cell]):
            # surface-placed objects never affect walkability
            if grid[cell] == SURFACE and not _objects_reachable(grid, chosen + [cell]):
                continue
            chosen.append(cell)
    if len(chosen) < config.object_count:
        raise ValueError("could not place all objects with connectivity intact")

    objects: list[ObjectInstance] = []
    openables: dict[int, bool] = {}
    for oid, cell in enumerate(chosen):
        cat = int(rng.integers(0, config.category_count))
        elev = 0.0 if grid[cell] == FREE else float(0.5)
        radius = float(rng.uniform(0.08, 0.14))
        objects.append(ObjectInstance(
            id=oid, category=cat, position=cell_center(cell),
            height=elev + category_height(cat), visible_radius=radius,
        ))
        if category_openable(cat):
            openables[oid] = bool(rng.integers(0, 2))

    return SceneSpec(seed=int(seed), grid=grid, objects=objects,
                     openables=openables, category_count=config.category_count)
