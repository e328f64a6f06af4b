"""Pinhole cameras, rigid poses and ray generation.

Conventions: right-handed, the camera looks down +z, image x to the right and
image y down. Pixel (px, py) is sampled at its center (px + 0.5, py + 0.5).
A pose stores the camera-to-world rotation (unit quaternion w, x, y, z) and the
camera center in world coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, ManifestError

_DEGENERATE_QUAT_NORM = 1e-3


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < _DEGENERATE_QUAT_NORM:
        raise DomainError(f"degenerate quaternion {q.tolist()}")
    return q / n


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion. The input is normalized first."""
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise DomainError("image dimensions must be integers")
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise DomainError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float) -> "CameraIntrinsics":
        fx = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(width, height, fx, fx, width / 2, height / 2)

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Same field of view at another resolution."""
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(width, height, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


@dataclass(frozen=True)
class CameraPose:
    rotation: tuple = (1.0, 0.0, 0.0, 0.0)
    translation: tuple = (0.0, 0.0, 0.0)
    timestamp: int = 0  # microseconds

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(float(v) for v in quat_normalize(self.rotation)))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", tuple(float(v) for v in t))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @property
    def matrix(self) -> np.ndarray:
        """Camera-to-world rotation."""
        return quat_to_matrix(self.rotation)

    @property
    def center(self) -> np.ndarray:
        return np.array(self.translation)

    def world_to_camera_matrix(self) -> np.ndarray:
        """4x4 homogeneous world-to-camera transform."""
        R = self.matrix
        m = np.eye(4)
        m[:3, :3] = R.T
        m[:3, 3] = -R.T @ self.center
        return m


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        if not self.t_near < self.t_far:
            raise DomainError(f"ray bounds must satisfy t_near < t_far, got {self.t_near}, {self.t_far}")

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def _pixel_directions(intrinsics: CameraIntrinsics, px, py) -> np.ndarray:
    x = (np.asarray(px, dtype=np.float64) + 0.5 - intrinsics.cx) / intrinsics.fx
    y = (np.asarray(py, dtype=np.float64) + 0.5 - intrinsics.cy) / intrinsics.fy
    d = np.stack([x, y, np.ones_like(x)], axis=-1)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_ray(intrinsics: CameraIntrinsics, pose: CameraPose, px, bounds=(0.0, 1.0)) -> Ray:
    """Ray through the center of pixel ``px = (column, row)``."""
    col, row = px
    if not (0 <= col < intrinsics.width and 0 <= row < intrinsics.height):
        raise DomainError(f"pixel {tuple(px)} outside {intrinsics.width}x{intrinsics.height} image")
    d_cam = _pixel_directions(intrinsics, col, row)
    d = pose.matrix @ d_cam
    d = d / np.linalg.norm(d)
    return Ray(pose.center.copy(), d, float(bounds[0]), float(bounds[1]))


def generate_rays(intrinsics: CameraIntrinsics, pose: CameraPose):
    """Origins and unit directions for every pixel, each shaped (H, W, 3)."""
    rows, cols = np.mgrid[0 : intrinsics.height, 0 : intrinsics.width]
    d_cam = _pixel_directions(intrinsics, cols, rows)
    d = d_cam @ pose.matrix.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(pose.center, d.shape).copy()
    return o, d


def world_to_camera(pose: CameraPose, point) -> np.ndarray:
    """R^T (p - t); accepts a single point or an (N, 3) array."""
    p = np.asarray(point, dtype=np.float64)
    return (p - pose.center) @ pose.matrix


def camera_to_world(pose: CameraPose, point) -> np.ndarray:
    p = np.asarray(point, dtype=np.float64)
    return p @ pose.matrix.T + pose.center


def look_at(eye, target, up=(0.0, -1.0, 0.0), timestamp: int = 0) -> CameraPose:
    """Pose at ``eye`` looking toward ``target``. ``up`` is world up (-y with image y down)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    if np.linalg.norm(forward) < 1e-12:
        raise DomainError("eye and target coincide")
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(-up, forward)  # camera +x
    if np.linalg.norm(right) < 1e-9 * np.linalg.norm(up):
        raise DomainError("view direction is parallel to up; pass another up vector")
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)  # camera +y
    R = np.stack([right, down, forward], axis=1)
    return CameraPose(matrix_to_quat(R), eye, timestamp)


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


@dataclass
class ManifestEntry:
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: str = field(default="")

    def __iter__(self):
        return iter((self.intrinsics, self.pose, self.image))


_MANIFEST_KEYS = ("image", "width", "height", "fx", "fy", "cx", "cy", "q", "t", "timestamp_us")


def load_pose_manifest(path) -> list[ManifestEntry]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise ManifestError(f"{path}: manifest must be a JSON array")
    entries = []
    for i, obj in enumerate(raw):
        label = f"entry {i}" + (f" ({obj.get('image')!r})" if isinstance(obj, dict) and "image" in obj else "")
        try:
            missing = [k for k in _MANIFEST_KEYS if k not in obj]
            if missing:
                raise ManifestError(f"missing keys {missing}")
            intr = CameraIntrinsics(
                int(obj["width"]), int(obj["height"]),
                float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]),
            )
            if len(obj["q"]) != 4 or len(obj["t"]) != 3:
                raise ManifestError("q must have 4 and t 3 components")
            pose = CameraPose(tuple(obj["q"]), tuple(obj["t"]), int(obj["timestamp_us"]))
        except (DomainError, ManifestError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: {label}: {exc}") from exc
        entries.append(ManifestEntry(intr, pose, str(obj["image"])))
    return entries


def save_pose_manifest(path, entries: Sequence) -> None:
    out = []
    for intr, pose, image in entries:
        out.append(
            {
                "image": image,
                "width": intr.width,
                "height": intr.height,
                "fx": intr.fx,
                "fy": intr.fy,
                "cx": intr.cx,
                "cy": intr.cy,
                "q": list(pose.rotation),
                "t": list(pose.translation),
                "timestamp_us": pose.timestamp,
            }
        )
    Path(path).write_text(json.dumps(out, indent=1))
