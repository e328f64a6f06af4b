"""
Gaussian splatting
==================

Turn the street's surface voxels into isotropic Gaussians, rasterize them,
and look at how a single anisotropic splat projects to the image.
"""

import sys
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from rfcodec.camera import CameraIntrinsics, CameraPose
from rfcodec.scene import cloud_from_volume, street_trajectory, street_volume
from rfcodec.splat import SH_C0, Gaussian3D, GaussianCloud, gs_loss, project_gaussian, render_splats
from rfcodec.volume import render_image

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# %% One elongated Gaussian seen head-on, then rotated 45 degrees about the view axis.
cam = CameraIntrinsics(64, 64, 60.0, 60.0, 32.0, 32.0)
s = np.sin(np.pi / 8)
for q in ((1, 0, 0, 0), (np.cos(np.pi / 8), 0, 0, s)):
    g = Gaussian3D((0, 0, 3), q, (0.6, 0.15, 0.15), 0.9, ((np.array([0.9, 0.6, 0.2]) - 0.5) / SH_C0).reshape(1, 3))
    sp = project_gaussian(g, CameraPose(), cam)
    print("rotation", np.round(q, 3), "-> 2D covariance\n", np.round(sp.cov2d, 2))

# %% The street as a splat cloud, next to the voxel render of the same pose.
vol = street_volume(0)
cloud = cloud_from_volume(vol)
print(f"{len(cloud)} Gaussians")
cam = CameraIntrinsics.from_fov(320, 180, 70)
pose = street_trajectory(48)[10]
t0 = time.perf_counter()
splat_img = render_splats(cloud, pose, cam)
print(f"splat render {time.perf_counter() - t0:.2f}s")
vol_img = render_image(vol, cam, pose)
print(f"splat vs voxel loss (L1 / D-SSIM mix): {gs_loss(splat_img, vol_img):.4f}")

fig, axes = plt.subplots(1, 2, figsize=(10, 3))
for ax, img, name in zip(axes, (vol_img, splat_img), ("voxels", "splats")):
    ax.imshow(img)
    ax.set_title(name)
    ax.axis("off")
fig.savefig(out / "splat_vs_volume.png", dpi=80, bbox_inches="tight")

# %% Render order does not matter: shuffle the cloud and compare bit for bit.
perm = np.random.default_rng(0).permutation(len(cloud))
shuffled = GaussianCloud(cloud.mu[perm], cloud.rotation[perm], cloud.scale[perm], cloud.opacity[perm], cloud.sh[perm])
print("shuffled render identical:", np.array_equal(render_splats(shuffled, pose, cam), splat_img))
