"""Procedural street scenes and camera trajectories.

World axes follow the camera convention: x right, y down, z forward along
the street. The camera rides at y = 0 with the road surface below it.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .camera import CameraPose, look_at
from .splat import SH_C0, GaussianCloud
from .volume import RadianceVolume, sample_field

VOXEL = 0.2
SURFACE_DENSITY = 25.0
ROAD_Y = 1.2
STREET_HALF_WIDTH = 3.0
SCENE_Z = (-2.0, 31.2)
FRAME_INTERVAL_US = 33_333


def _grid(lo, hi):
    n = np.round((np.array(hi) - np.array(lo)) / VOXEL).astype(int)
    centers = [lo[a] + (np.arange(n[a]) + 0.5) * VOXEL for a in range(3)]
    return n, np.meshgrid(*centers, indexing="ij")


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]


def street_volume(seed: int = 0) -> RadianceVolume:
    """Road with lane markings, two rows of windowed facades, lamp posts and a sky wall."""
    rng = np.random.default_rng(seed)
    lo = (-5.2, -3.2, SCENE_Z[0])
    hi = (5.2, 1.6, SCENE_Z[1])
    n, (X, Y, Z) = _grid(lo, hi)
    occ = np.zeros(tuple(n), dtype=bool)
    rgb = np.zeros(tuple(n) + (3,))

    # road slab with asphalt grain, dashed center line and sidewalks
    road = Y > ROAD_Y
    grain = rng.normal(0.0, 0.04, size=tuple(n))
    asphalt = np.clip(0.32 + grain, 0, 1)
    rgb[road] = asphalt[road][:, None]
    sidewalk = road & (np.abs(X) > STREET_HALF_WIDTH - 0.6)
    rgb[sidewalk] = np.clip(0.6 + grain[sidewalk], 0, 1)[:, None] * np.array([1.0, 0.95, 0.85])
    dash = road & (np.abs(X) < 0.2) & (np.mod(Z, 3.0) < 1.5)
    rgb[dash] = (0.95, 0.95, 0.9)
    occ |= road

    # facades: blocks of random length and hue with a window grid
    for side in (-1, 1):
        z = SCENE_Z[0]
        while z < SCENE_Z[1] - 2.0:
            length = rng.uniform(3.0, 6.0)
            top = -rng.uniform(1.6, 3.0)
            color = np.array(_hsv_to_rgb(rng.uniform(), rng.uniform(0.25, 0.6), rng.uniform(0.55, 0.9)))
            block = (side * X >= STREET_HALF_WIDTH) & (Z >= z) & (Z < z + length) & (Y >= top) & (Y <= ROAD_Y)
            rgb[block] = color
            iy = np.floor((Y - top) / VOXEL).astype(int)
            iz = np.floor((Z - z) / VOXEL).astype(int)
            window = block & (iy % 4 == 2) & (iz % 3 != 0) & (Y < ROAD_Y - 0.6)
            rgb[window] = (0.12, 0.16, 0.28)
            door = block & (Y > ROAD_Y - 0.8) & (np.abs(Z - (z + length / 2)) < 0.3)
            rgb[door] = color * 0.35
            occ |= block
            z += length + rng.uniform(0.0, 1.2)

    # lamp posts at the curb
    for side in (-1, 1):
        for zl in np.arange(2.0, SCENE_Z[1] - 3.0, 6.0):
            pole = (np.abs(X - side * (STREET_HALF_WIDTH - 0.3)) < VOXEL) & (np.abs(Z - zl) < VOXEL) & (Y > -2.2) & (Y <= ROAD_Y)
            rgb[pole] = (0.2, 0.2, 0.22)
            head = (np.abs(X - side * (STREET_HALF_WIDTH - 0.7)) < 0.3) & (np.abs(Z - zl) < VOXEL) & (np.abs(Y + 2.2) < VOXEL)
            rgb[head] = (1.0, 0.9, 0.55)
            occ |= pole | head

    # distant sky wall closing the street
    wall = Z > SCENE_Z[1] - 0.6
    sky = np.clip(0.55 + 0.12 * (Y + 3.2), 0, 1)
    rgb[wall] = np.stack([sky[wall] * 0.75, sky[wall] * 0.85, np.full(wall.sum(), 0.95)], axis=-1)
    occ |= wall

    # spread surface colors into empty neighbors so interpolation at edges keeps the hue
    _, (ii, jj, kk) = ndimage.distance_transform_edt(~occ, return_indices=True)
    rgb = rgb[ii, jj, kk]
    density = np.where(occ, SURFACE_DENSITY, 0.0)
    return RadianceVolume(np.clip(rgb, 0, 1), density, lo, hi)


def cloud_from_volume(vol: RadianceVolume, opacity: float = 0.95, scale: float = 0.6, stride: int = 1) -> GaussianCloud:
    """One isotropic degree-0 Gaussian per surface voxel, colored by the field."""
    occ = vol.density > 0
    interior = ndimage.binary_erosion(occ, structure=ndimage.generate_binary_structure(3, 1), border_value=0)
    surface = occ & ~interior
    idx = np.argwhere(surface)
    if stride > 1:
        idx = idx[::stride]
    centers = vol.aabb_min + (idx + 0.5) * vol.voxel_size
    colors, _ = sample_field(vol, centers)
    n = len(centers)
    sh = ((colors - 0.5) / SH_C0)[:, None, :]
    return GaussianCloud(
        centers,
        np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        np.full((n, 3), scale * float(vol.voxel_size.min())),
        np.full(n, opacity),
        sh,
    )


def street_trajectory(n_frames: int = 144, speed: float = 0.1, sway: float = 0.4) -> list[CameraPose]:
    """A drive down the street with a gentle lateral sway and matching heading."""
    poses = []
    for k in range(n_frames):
        z = k * speed
        phase = 2 * np.pi * k / max(n_frames, 48)
        x = sway * np.sin(phase)
        heading = 0.25 * sway * np.cos(phase)
        eye = np.array([x, 0.0, z])
        target = eye + np.array([np.sin(heading), 0.12, np.cos(heading)])
        poses.append(look_at(eye, target, timestamp=k * FRAME_INTERVAL_US))
    return poses
