"""
Cameras, rays and a voxel radiance field
========================================

Build the procedural street, fly a camera along it and render a few views by
marching rays through the voxel grid. Then corrupt the colors of a small
field and fit them back from rendered views.
"""

import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rfcodec.camera import CameraIntrinsics, Ray, generate_ray, look_at
from rfcodec.scene import street_trajectory, street_volume
from rfcodec.volume import RadianceVolume, fit_emission, render_image, render_ray, transmittance

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %% A pinhole camera with a 70 degree horizontal field of view.
cam = CameraIntrinsics.from_fov(320, 180, 70)
poses = street_trajectory(48)
ray = generate_ray(cam, poses[0], (160, 90))
print("center pixel ray direction:", np.round(ray.direction, 4))

# %% The street field: road, facades, lamp posts and a sky wall.
vol = street_volume(seed=0)
print("voxel grid", vol.resolution, "voxel size", vol.voxel_size)

fig, axes = plt.subplots(1, 3, figsize=(12, 2.6))
for ax, k in zip(axes, (0, 16, 40)):
    ax.imshow(render_image(vol, cam, poses[k], n_samples=64))
    ax.set_title(f"frame {k}")
    ax.axis("off")
fig.savefig(out / "street_views.png", dpi=80, bbox_inches="tight")

# %% A homogeneous red medium: compare against its closed form.
fog = RadianceVolume(np.broadcast_to([1.0, 0, 0], (4, 4, 4, 3)), np.ones((4, 4, 4)), (-1, -1, -1), (3, 3, 3))
probe = Ray(np.array([0.5, 0.5, 0.0]), np.array([0.0, 0.0, 1.0]), 0.0, 2.0)
print(f"red channel {render_ray(fog, probe, 1024)[0]:.6f} vs 1 - e^-2 = {1 - np.exp(-2):.6f}")
print(f"transmittance at t = 0.5: {transmittance(fog, probe, 0.5):.6f} vs e^-0.5 = {np.exp(-0.5):.6f}")

# %% Fit scrambled colors back from a handful of views.
rng = np.random.default_rng(1)
target = RadianceVolume(rng.uniform(0, 1, (6, 6, 6, 3)), np.full((6, 6, 6), 2.0), (0, 0, 0), (1, 1, 1))
small = CameraIntrinsics.from_fov(24, 24, 50)
c = np.full(3, 0.5)
views = []
for eye in ([0.5, 0.5, -2.5], [3, 0.5, 0.5], [0.5, -2.5, 0.5], [-2, 0.5, 0.5], [0.5, 0.5, 3.5]):
    # views along the y axis need a different up vector
    pose = look_at(np.array(eye), c, up=(0, 0, 1) if eye[1] != 0.5 else (0, -1, 0))
    views.append((small, pose, render_image(target, small, pose, 48)))
guess = RadianceVolume(np.full((6, 6, 6, 3), 0.5), target.density, (0, 0, 0), (1, 1, 1))
for rounds in (1, 10, 100):
    print(f"after {rounds:3d} more steps: loss {fit_emission(guess, views, iters=rounds, lr=0.05, n_samples=48):.4f}")
