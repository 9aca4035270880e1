"""Grid raycast renderer.

Produces a 3x64x64 RGB frame plus a per-pixel semantic buffer holding the
object id visible at each pixel (-1 for background). Conventions:

- camera at CAMERA_HEIGHT above the floor, pinhole with 90 degree HFOV;
- object pixels are pure per-category albedo (saturation 1, unshaded) so
  categories are exactly distinguishable; walls/floor/surfaces are low
  saturation grays shaded by distance;
- out-of-bounds counts as wall; surfaces are half-height slabs that block
  walking but only occlude below their top edge;
- painter's order (far to near) resolves overlap between surfaces/objects.
"""

from __future__ import annotations

import math

import numpy as np

from .types import (
    CELL_SIZE, CAMERA_HEIGHT, HFOV_DEG, SURFACE_HEIGHT, WALL_HEIGHT,
    FREE, WALL, SURFACE, AgentPose, SceneSpec, category_albedo, category_height,
)

IMG = 64
FOCAL = (IMG / 2.0) / math.tan(math.radians(HFOV_DEG / 2.0))  # = 32.0

CEILING_RGB = np.array([0.16, 0.16, 0.18], dtype=np.float32)
WALL_TINT = np.array([0.85, 0.85, 0.85], dtype=np.float32)
FLOOR_TINT = np.array([0.55, 0.50, 0.45], dtype=np.float32)
SURFACE_TINT = np.array([0.62, 0.54, 0.40], dtype=np.float32)

# Column angular offsets, degrees; column 0 is the left edge of the view.
_COL_OFFSETS = HFOV_DEG / 2.0 - (np.arange(IMG) + 0.5) * (HFOV_DEG / IMG)


def wrap_angle(deg: float) -> float:
    """Wrap to [-180, 180)."""
    return (deg + 180.0) % 360.0 - 180.0


def _shade(dist: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + dist)


def cast_walls(scene: SceneSpec, pose: AgentPose):
    """Vectorized DDA over all columns.

    Returns (t_wall, surface_hits): t_wall is the euclidean distance in
    metres to the first wall (boundary included) per column; surface_hits
    is a list of (column, distance) for every surface cell crossed first.
    """
    grid = scene.grid
    h, w = grid.shape
    px = pose.position[0] / CELL_SIZE
    py = pose.position[1] / CELL_SIZE
    ang = np.radians(pose.heading + _COL_OFFSETS)
    dx, dy = np.cos(ang), np.sin(ang)

    ci = np.full(IMG, int(math.floor(py)), dtype=np.int64)
    cj = np.full(IMG, int(math.floor(px)), dtype=np.int64)
    step_j = np.where(dx > 0, 1, -1)
    step_i = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore"):
        tdx = np.abs(1.0 / dx)
        tdy = np.abs(1.0 / dy)
    tdx = np.where(np.abs(dx) < 1e-12, 1e30, tdx)
    tdy = np.where(np.abs(dy) < 1e-12, 1e30, tdy)
    tmx = np.where(dx > 0, (cj + 1 - px), (px - cj)) * tdx
    tmy = np.where(dy > 0, (ci + 1 - py), (py - ci)) * tdy

    t_wall = np.zeros(IMG)
    active = np.ones(IMG, dtype=bool)
    surface_hits: list[tuple[np.ndarray, np.ndarray]] = []
    for _ in range(h + w + 2):
        if not active.any():
            break
        take_x = tmx <= tmy
        t_cross = np.where(take_x, tmx, tmy)
        nj = cj + np.where(take_x, step_j, 0)
        ni = ci + np.where(take_x, 0, step_i)
        inside = (ni >= 0) & (ni < h) & (nj >= 0) & (nj < w)
        cell = np.full(IMG, WALL, dtype=np.int64)
        cell[inside] = grid[ni[inside], nj[inside]]
        hit_wall = active & (cell == WALL)
        t_wall[hit_wall] = t_cross[hit_wall]
        hit_surf = active & inside & (cell == SURFACE)
        if hit_surf.any():
            surface_hits.append((np.where(hit_surf)[0], t_cross[hit_surf] * CELL_SIZE))
        active = active & ~hit_wall
        adv = active
        cj = np.where(adv & take_x, nj, cj)
        ci = np.where(adv & ~take_x, ni, ci)
        tmx = np.where(adv & take_x, tmx + tdx, tmx)
        tmy = np.where(adv & ~take_x, tmy + tdy, tmy)
    t_wall[active] = (h + w + 2)  # unreachable; grid borders guarantee a hit
    return t_wall * CELL_SIZE, surface_hits


def _row(z: float, d_perp: float, tan_pitch: float) -> float:
    """Screen row (float, grows downward) of world height z at distance d."""
    return IMG / 2.0 + FOCAL * ((CAMERA_HEIGHT - z) / d_perp + tan_pitch)


def render(scene: SceneSpec, pose: AgentPose) -> tuple[np.ndarray, np.ndarray]:
    """Render the scene from a pose. Returns (rgb, semantic)."""
    return _render(scene, pose, want_rgb=True)


def render_semantic(scene: SceneSpec, pose: AgentPose) -> np.ndarray:
    """Just the per-pixel object-id buffer, identical to render()'s second
    output. Used by rollouts whose backbone never consumes RGB."""
    return _render(scene, pose, want_rgb=False)[1]


def _render(scene: SceneSpec, pose: AgentPose, want_rgb: bool):
    sem = np.full((IMG, IMG), -1, dtype=np.int16)
    tan_pitch = math.tan(math.radians(pose.horizon))
    horizon_center = IMG / 2.0 + FOCAL * tan_pitch

    t_wall, surface_hits = cast_walls(scene, pose)
    offsets_rad = np.radians(_COL_OFFSETS)
    d_perp_wall = t_wall * np.cos(offsets_rad)

    rgb = None
    if want_rgb:
        # Background: ceiling above the wall slab, shaded wall, shaded floor.
        rows = np.arange(IMG)
        denom = rows + 0.5 - horizon_center
        with np.errstate(divide="ignore"):
            d_floor = FOCAL * CAMERA_HEIGHT / denom
        floor_b = np.where(denom > 0, _shade(np.maximum(d_floor, 0.0)), 0.0)
        floor_rows = (floor_b[:, None] * FLOOR_TINT[None, :]).astype(np.float32)

        wall_top = IMG / 2.0 + FOCAL * ((CAMERA_HEIGHT - WALL_HEIGHT) / d_perp_wall
                                        + tan_pitch)
        wall_bot = IMG / 2.0 + FOCAL * (CAMERA_HEIGHT / d_perp_wall + tan_pitch)
        wall_b = _shade(t_wall)
        top_i = np.clip(np.floor(wall_top), 0, IMG).astype(np.int64)
        bot_i = np.clip(np.ceil(wall_bot), 0, IMG).astype(np.int64)
        rr = rows[:, None]
        ceil_m = rr < top_i[None, :]
        wall_m = (rr >= top_i[None, :]) & (rr < bot_i[None, :])
        floor_m = rr >= bot_i[None, :]
        rgb = (ceil_m[..., None] * CEILING_RGB[None, None, :]
               + wall_m[..., None] * (wall_b[None, :, None] * WALL_TINT[None, None, :])
               + floor_m[..., None] * floor_rows[:, None, :]).astype(np.float32)

    # Drawables: surface slabs and objects, far to near.
    draw: list[tuple[float, int, object]] = []   # (distance, kind, payload)
    for cols, dists in surface_hits:
        for c, t in zip(cols, dists):
            draw.append((float(t), 0, int(c)))
    ax, ay = pose.position
    for obj in scene.objects:
        t = math.hypot(obj.position[0] - ax, obj.position[1] - ay)
        if t < 1e-9:
            continue
        draw.append((float(t), 1, obj))
    draw.sort(key=lambda e: (-e[0], e[1]))

    for t, kind, payload in draw:
        if kind == 0:
            j = payload
            d_perp = t * math.cos(offsets_rad[j])
            top = int(math.floor(_row(SURFACE_HEIGHT, d_perp, tan_pitch)))
            bot = int(math.ceil(_row(0.0, d_perp, tan_pitch)))
            top, bot = max(0, top), min(IMG, bot)
            if bot > top:
                if want_rgb:
                    rgb[top:bot, j, :] = _shade(t) * SURFACE_TINT
                sem[top:bot, j] = -1
            continue

        obj = payload
        bearing = wrap_angle(math.degrees(math.atan2(obj.position[1] - ay,
                                                     obj.position[0] - ax)) - pose.heading)
        half = math.degrees(math.atan(obj.visible_radius / t))
        if abs(bearing) > HFOV_DEG / 2.0 + half:
            continue
        j_lo = (HFOV_DEG / 2.0 - (bearing + half)) * IMG / HFOV_DEG - 0.5
        j_hi = (HFOV_DEG / 2.0 - (bearing - half)) * IMG / HFOV_DEG - 0.5
        cols = np.arange(max(0, int(math.ceil(j_lo))), min(IMG - 1, int(math.floor(j_hi))) + 1)
        if len(cols) == 0:
            # thin/straddling object: fall back to its centre column
            jc = int(round((HFOV_DEG / 2.0 - bearing) * IMG / HFOV_DEG - 0.5))
            if 0 <= jc < IMG:
                cols = np.arange(jc, jc + 1)
            else:
                continue
        cols = cols[t <= t_wall[cols]]
        if len(cols) == 0:
            continue
        d_perp = t * math.cos(math.radians(bearing))
        elev = obj.base_elevation()
        top_f = _row(obj.height, d_perp, tan_pitch)
        bot_f = _row(elev, d_perp, tan_pitch)
        r0, r1 = int(math.floor(top_f)), int(math.ceil(bot_f))
        if r1 <= r0:
            r1 = r0 + 1
        rr0, rr1 = max(0, r0), min(IMG, r1)
        if rr1 <= rr0:
            continue
        sem[rr0:rr1, cols] = obj.id
        if want_rgb:
            albedo = np.array(category_albedo(obj.category, scene.category_count),
                              dtype=np.float32)
            rgb[rr0:rr1, cols] = albedo
            if scene.openables.get(obj.id, False):
                lo = max(rr0, (r0 + r1) // 2)
                if lo < rr1:
                    rgb[lo:rr1, cols] = albedo * 0.5

    if rgb is None:
        return None, sem
    return np.ascontiguousarray(rgb.transpose(2, 0, 1)), sem


def ray_clear(grid: np.ndarray, a: tuple[float, float], b: tuple[float, float]) -> bool:
    """True if the 2-D segment a->b crosses no wall cell (bounds are walls)."""
    ax, ay = a[0] / CELL_SIZE, a[1] / CELL_SIZE
    bx, by = b[0] / CELL_SIZE, b[1] / CELL_SIZE
    dist = math.hypot(bx - ax, by - ay)
    n = int(dist / 0.05) + 2
    s = np.linspace(0.0, 1.0, n + 1)
    jj = np.floor(ax + s * (bx - ax)).astype(np.int64)
    ii = np.floor(ay + s * (by - ay)).astype(np.int64)
    if (ii.min() < 0 or jj.min() < 0
            or ii.max() >= grid.shape[0] or jj.max() >= grid.shape[1]):
        return False
    return not (grid[ii, jj] == WALL).any()


def object_visible(scene: SceneSpec, pose: AgentPose, obj) -> bool:
    """Interaction visibility: within the horizontal FOV and a clear 2-D ray.

    Camera pitch does not enter; this is the success/interaction rule, not
    the rendered-pixel rule used for labels.
    """
    ax, ay = pose.position
    bearing = wrap_angle(math.degrees(math.atan2(obj.position[1] - ay,
                                                 obj.position[0] - ax)) - pose.heading)
    if abs(bearing) > HFOV_DEG / 2.0:
        return False
    return ray_clear(scene.grid, pose.position, obj.position)
