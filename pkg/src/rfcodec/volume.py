"""Explicit voxel radiance field with quadrature volume rendering.

The field stores a Lambertian emission color and a density per voxel; values
between voxel centers are trilinearly interpolated. Rendering integrates
transmittance-weighted emission along each ray with uniform midpoint samples.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import sparse

from .camera import CameraIntrinsics, CameraPose, Ray, generate_rays
from .errors import DomainError

MAGIC = b"RFVL"
VERSION = 1
_HEADER = struct.Struct("<4sBIII6f")

# samples per chunk when marching many rays at once
_CHUNK_SAMPLES = 1 << 18


@dataclass
class RadianceVolume:
    """Dense voxel grid. ``emission`` is (nx, ny, nz, 3), ``density`` is (nx, ny, nz)."""

    emission: np.ndarray
    density: np.ndarray
    aabb_min: np.ndarray = field(default_factory=lambda: np.zeros(3))
    aabb_max: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        self.emission = np.ascontiguousarray(self.emission, dtype=np.float32)
        self.density = np.ascontiguousarray(self.density, dtype=np.float32)
        # bounds live in f32 on the wire, so keep them f32-exact in memory
        self.aabb_min = np.asarray(self.aabb_min, dtype=np.float32).astype(np.float64).reshape(3)
        self.aabb_max = np.asarray(self.aabb_max, dtype=np.float32).astype(np.float64).reshape(3)
        if self.density.ndim != 3 or self.emission.shape != self.density.shape + (3,):
            raise DomainError("emission must be (nx, ny, nz, 3) and density (nx, ny, nz)")
        if min(self.density.shape) < 1:
            raise DomainError("resolution must be at least 1 in every axis")
        if np.any(self.density < 0) or not np.all(np.isfinite(self.density)):
            raise DomainError("densities must be finite and non-negative")
        if np.any(self.emission < 0) or np.any(self.emission > 1):
            raise DomainError("emission must lie in [0, 1]")
        if np.any(self.aabb_max <= self.aabb_min):
            raise DomainError("aabb_max must exceed aabb_min on every axis")
        self._packed = None

    @classmethod
    def empty(cls, resolution, aabb_min=(0, 0, 0), aabb_max=(1, 1, 1)) -> "RadianceVolume":
        nx, ny, nz = resolution
        return cls(np.zeros((nx, ny, nz, 3)), np.zeros((nx, ny, nz)), aabb_min, aabb_max)

    @property
    def resolution(self) -> tuple:
        return self.density.shape

    @property
    def voxel_size(self) -> np.ndarray:
        return (self.aabb_max - self.aabb_min) / np.array(self.resolution)

    def voxel_center(self, i, j, k) -> np.ndarray:
        return self.aabb_min + (np.array([i, j, k]) + 0.5) * self.voxel_size

    def invalidate(self):
        """Drop cached lookups after mutating ``emission`` or ``density`` in place."""
        self._packed = None

    def packed(self) -> np.ndarray:
        """(nx*ny*nz, 4) table of (r, g, b, sigma) in x-fastest order."""
        if self._packed is None:
            rgba = np.concatenate([self.emission, self.density[..., None]], axis=-1)
            self._packed = np.ascontiguousarray(rgba.transpose(2, 1, 0, 3).reshape(-1, 4), dtype=np.float64)
        return self._packed

    def to_bytes(self) -> bytes:
        nx, ny, nz = self.resolution
        header = _HEADER.pack(MAGIC, VERSION, nx, ny, nz, *self.aabb_min, *self.aabb_max)
        rgba = np.concatenate([self.emission, self.density[..., None]], axis=-1)
        return header + rgba.transpose(2, 1, 0, 3).astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "RadianceVolume":
        if len(data) < _HEADER.size:
            raise DomainError("volume payload shorter than its header")
        magic, version, nx, ny, nz, *box = _HEADER.unpack_from(data)
        if magic != MAGIC or version != VERSION:
            raise DomainError(f"not an RFVL v{VERSION} payload")
        n = nx * ny * nz * 4
        if len(data) != _HEADER.size + 4 * n:
            raise DomainError("volume payload size does not match its header")
        body = np.frombuffer(data, dtype="<f4", count=n, offset=_HEADER.size)
        rgba = body.reshape(nz, ny, nx, 4).transpose(2, 1, 0, 3)
        return cls(rgba[..., :3], rgba[..., 3], box[:3], box[3:])


def _corner_weights(vol: RadianceVolume, x: np.ndarray):
    """Flat indices (N, 8) and trilinear weights (N, 8); weights are zero outside the box."""
    res = np.array(vol.resolution)
    u = (x - vol.aabb_min) / vol.voxel_size - 0.5
    inside = np.all((x >= vol.aabb_min) & (x <= vol.aabb_max), axis=-1)
    u = np.clip(u, 0, res - 1)
    i0 = np.minimum(np.floor(u).astype(np.int64), np.maximum(res - 2, 0))
    f = u - i0
    i1 = np.minimum(i0 + 1, res - 1)
    nx, ny = res[0], res[1]
    idx = np.empty(x.shape[:-1] + (8,), dtype=np.int64)
    w = np.empty(x.shape[:-1] + (8,), dtype=np.float64)
    c = 0
    for dz in (0, 1):
        kz = i1[..., 2] if dz else i0[..., 2]
        wz = f[..., 2] if dz else 1 - f[..., 2]
        for dy in (0, 1):
            jy = i1[..., 1] if dy else i0[..., 1]
            wy = f[..., 1] if dy else 1 - f[..., 1]
            for dx in (0, 1):
                ix = i1[..., 0] if dx else i0[..., 0]
                wx = f[..., 0] if dx else 1 - f[..., 0]
                idx[..., c] = (kz * ny + jy) * nx + ix
                w[..., c] = wx * wy * wz
                c += 1
    w *= inside[..., None]
    return idx, w


def sample_field(vol: RadianceVolume, x):
    """Trilinear (rgb, sigma) at world point(s) ``x``; empty space outside the box."""
    x = np.asarray(x, dtype=np.float64)
    idx, w = _corner_weights(vol, x.reshape(-1, 3))
    vals = np.einsum("nc,ncd->nd", w, vol.packed()[idx])
    vals = vals.reshape(x.shape[:-1] + (4,))
    return vals[..., :3], vals[..., 3]


def _march(vol, origins, dirs, t_near, t_far, n_samples, want_weights=False):
    """Composite a batch of rays. Returns rgb (N, 3) and optionally the per-sample
    compositing weights T_i * alpha_i with the sample corner indices/weights."""
    n_rays = len(origins)
    delta = (t_far - t_near) / n_samples
    ts = t_near[:, None] + (np.arange(n_samples) + 0.5) * delta[:, None]
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    idx, cw = _corner_weights(vol, pts)
    vals = np.einsum("nsc,nscd->nsd", cw, vol.packed()[idx])
    sigma = np.maximum(vals[..., 3], 0.0)
    alpha = 1.0 - np.exp(-sigma * delta[:, None])
    trans = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((n_rays, 1)), trans[:, :-1]], axis=1)
    weights = trans * alpha
    rgb = np.einsum("ns,nsd->nd", weights, vals[..., :3])
    rgb = np.clip(rgb, 0.0, 1.0)
    if want_weights:
        return rgb, weights, idx, cw
    return rgb


def render_ray(vol: RadianceVolume, ray: Ray, n_samples: int) -> np.ndarray:
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    rgb = _march(
        vol, ray.origin[None], ray.direction[None],
        np.array([ray.t_near]), np.array([ray.t_far]), n_samples,
    )
    return rgb[0]


def transmittance(vol: RadianceVolume, ray: Ray, t: float, n_samples: int = 1024) -> float:
    """T(t): probability the ray travels from t_near to ``t`` unoccluded."""
    if t <= ray.t_near:
        return 1.0
    delta = (t - ray.t_near) / n_samples
    ts = ray.t_near + (np.arange(n_samples) + 0.5) * delta
    _, sigma = sample_field(vol, ray.at(ts))
    return float(np.prod(1.0 - (1.0 - np.exp(-sigma * delta))))


def clip_to_aabb(vol: RadianceVolume, origins, dirs, t_near, t_far):
    """Intersect ray intervals with the volume box. Returns (t0, t1, hit mask)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        a = (vol.aabb_min - origins) * inv
        b = (vol.aabb_max - origins) * inv
        lo, hi = np.minimum(a, b), np.maximum(a, b)
    # 0 * inf on an axis-parallel ray lying in a slab plane: treat as unbounded
    lo = np.where(np.isnan(lo), -np.inf, lo).max(axis=-1)
    hi = np.where(np.isnan(hi), np.inf, hi).min(axis=-1)
    t0 = np.maximum(lo, t_near)
    t1 = np.minimum(hi, t_far)
    return t0, t1, t1 > t0


@numba.njit(cache=True, inline="always")
def _axis(x, lo, size, n):
    u = (x - lo) / size - 0.5
    u = min(max(u, 0.0), n - 1.0)
    k = min(int(np.floor(u)), max(n - 2, 0))
    return k, min(k + 1, n - 1), u - k


@numba.njit(cache=True)
def _march_kernel(table, res, lo, size, origins, dirs, t_near, t_far, n_samples, out):
    # same arithmetic as _march, one ray at a time
    nx, ny, nz = res[0], res[1], res[2]
    hx, hy, hz = lo[0] + size[0] * nx, lo[1] + size[1] * ny, lo[2] + size[2] * nz
    for r in range(origins.shape[0]):
        delta = (t_far[r] - t_near[r]) / n_samples
        T = 1.0
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for s in range(n_samples):
            t = t_near[r] + (s + 0.5) * delta
            x = origins[r, 0] + t * dirs[r, 0]
            y = origins[r, 1] + t * dirs[r, 1]
            z = origins[r, 2] + t * dirs[r, 2]
            if x < lo[0] or x > hx or y < lo[1] or y > hy or z < lo[2] or z > hz:
                continue
            x0, x1, fx = _axis(x, lo[0], size[0], nx)
            y0, y1, fy = _axis(y, lo[1], size[1], ny)
            z0, z1, fz = _axis(z, lo[2], size[2], nz)
            v0 = 0.0
            v1 = 0.0
            v2 = 0.0
            v3 = 0.0
            for dz in range(2):
                kz = z1 if dz else z0
                wz = fz if dz else 1.0 - fz
                for dy in range(2):
                    jy = y1 if dy else y0
                    wy = fy if dy else 1.0 - fy
                    for dx in range(2):
                        ix = x1 if dx else x0
                        wx = fx if dx else 1.0 - fx
                        w = wx * wy * wz
                        idx = (kz * ny + jy) * nx + ix
                        v0 += w * table[idx, 0]
                        v1 += w * table[idx, 1]
                        v2 += w * table[idx, 2]
                        v3 += w * table[idx, 3]
            alpha = 1.0 - np.exp(-max(v3, 0.0) * delta)
            wgt = T * alpha
            acc0 += wgt * v0
            acc1 += wgt * v1
            acc2 += wgt * v2
            T *= 1.0 - alpha
        out[r, 0] = min(max(acc0, 0.0), 1.0)
        out[r, 1] = min(max(acc1, 0.0), 1.0)
        out[r, 2] = min(max(acc2, 0.0), 1.0)


def render_rays(vol, origins, dirs, t_near, t_far, n_samples):
    """Render many rays with per-ray bounds (compiled path)."""
    out = np.zeros((len(origins), 3))
    _march_kernel(
        vol.packed(), np.array(vol.resolution, dtype=np.int64), vol.aabb_min, vol.voxel_size,
        np.ascontiguousarray(origins, dtype=np.float64), np.ascontiguousarray(dirs, dtype=np.float64),
        np.ascontiguousarray(t_near, dtype=np.float64), np.ascontiguousarray(t_far, dtype=np.float64),
        int(n_samples), out,
    )
    return out


def render_rays_reference(vol, origins, dirs, t_near, t_far, n_samples):
    """Vectorized numpy path, chunked to bound memory."""
    out = np.zeros((len(origins), 3))
    step = max(1, _CHUNK_SAMPLES // n_samples)
    for s in range(0, len(origins), step):
        sl = slice(s, s + step)
        out[sl] = _march(vol, origins[sl], dirs[sl], t_near[sl], t_far[sl], n_samples)
    return out


def render_image(
    vol: RadianceVolume,
    intrinsics: CameraIntrinsics,
    pose: CameraPose,
    n_samples: int = 64,
    bounds=(0.05, 1e3),
) -> np.ndarray:
    """Render an (H, W, 3) image in [0, 1].

    Each pixel ray is clipped to the volume box before the ``n_samples``
    uniform samples are placed, so samples are never wasted on empty space.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    o, d = generate_rays(intrinsics, pose)
    o, d = o.reshape(-1, 3), d.reshape(-1, 3)
    t0, t1, hit = clip_to_aabb(vol, o, d, bounds[0], bounds[1])
    rgb = np.zeros((len(o), 3))
    if hit.any():
        rgb[hit] = render_rays(vol, o[hit], d[hit], t0[hit], t1[hit], n_samples)
    return rgb.reshape(intrinsics.height, intrinsics.width, 3)


def nerf_loss(rendered, ground_truth) -> float:
    """Summed squared color error over a batch of rays."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(ground_truth, dtype=np.float64)
    if a.shape != b.shape or a.size == 0:
        raise DomainError(f"batch shapes differ or are empty: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def emission_operator(vol: RadianceVolume, views, n_samples: int = 64, bounds=(0.05, 1e3)):
    """Sparse map A with rendered colors = A @ emission (per channel), plus the
    stacked target colors. Densities are treated as constants."""
    n_vox = int(np.prod(vol.resolution))
    rows, cols, vals, targets = [], [], [], []
    offset = 0
    for intr, pose, image in views:
        o, d = generate_rays(intr, pose)
        o, d = o.reshape(-1, 3), d.reshape(-1, 3)
        t0, t1, hit = clip_to_aabb(vol, o, d, bounds[0], bounds[1])
        ray_ids = np.nonzero(hit)[0]
        if len(ray_ids):
            _, w, idx, cw = _march(vol, o[hit], d[hit], t0[hit], t1[hit], n_samples, want_weights=True)
            contrib = w[..., None] * cw  # (rays, samples, 8)
            rows.append(np.broadcast_to((offset + ray_ids)[:, None, None], idx.shape).ravel())
            cols.append(idx.ravel())
            vals.append(contrib.ravel())
        targets.append(np.asarray(image, dtype=np.float64).reshape(-1, 3))
        offset += len(o)
    if rows:
        A = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(offset, n_vox)
        ).tocsr()
    else:
        A = sparse.csr_matrix((offset, n_vox))
    return A, np.concatenate(targets, axis=0)


def _flat_emission(vol):
    return vol.emission.transpose(2, 1, 0, 3).reshape(-1, 3).astype(np.float64)


def _set_flat_emission(vol, flat):
    nx, ny, nz = vol.resolution
    vol.emission = np.ascontiguousarray(flat.reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3), dtype=np.float32)
    vol.invalidate()


def emission_loss_and_grad(vol: RadianceVolume, views, n_samples: int = 64, emission=None):
    """Loss and its exact gradient w.r.t. the flat (x-fastest) emission table."""
    A, target = emission_operator(vol, views, n_samples)
    E = _flat_emission(vol) if emission is None else emission
    resid = A @ E - target
    return float(np.sum(resid**2)), 2.0 * (A.T @ resid)


def fit_emission(vol: RadianceVolume, views, iters: int = 100, lr: float = 0.1, n_samples: int = 64) -> float:
    """Projected gradient descent on voxel colors with densities fixed.

    Rendered color is linear in the emissions, so the gradient is exact. The
    volume is updated in place; the loss after the final step is returned.
    """
    if iters < 1 or lr <= 0 or not views:
        raise DomainError("need iters >= 1, lr > 0 and at least one view")
    A, target = emission_operator(vol, views, n_samples)
    E = _flat_emission(vol)
    if A.nnz == 0:
        warnings.warn("no view covers any voxel; volume left unchanged", RuntimeWarning, stacklevel=2)
        return float(np.sum((A @ E - target) ** 2))
    At = A.T.tocsr()
    for _ in range(iters):
        E = np.clip(E - lr * 2.0 * (At @ (A @ E - target)), 0.0, 1.0)
    # store at f32 like the rest of the field, then report the loss of what is stored
    _set_flat_emission(vol, E)
    E = _flat_emission(vol)
    return float(np.sum((A @ E - target) ** 2))
