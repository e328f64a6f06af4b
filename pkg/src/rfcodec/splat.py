"""Forward 3D Gaussian splatting.

Each Gaussian has a mean, a rotation quaternion, per-axis standard deviations,
an opacity and real spherical-harmonic color coefficients. Rendering projects
the covariance through the local affine approximation of the pinhole camera,
sorts front to back, and alpha-composites Gaussian-weighted opacities inside a
3-sigma pixel footprint.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numba
import numpy as np

from .camera import CameraIntrinsics, CameraPose, quat_normalize, quat_to_matrix
from .errors import DomainError

MAGIC = b"RFGS"
VERSION = 1
_HEADER = struct.Struct("<4sBIB")

NEAR_LIMIT = 0.2
COV2D_DILATION = 0.3
FOOTPRINT_SIGMAS = 3.0
FRUSTUM_MARGIN = 1.3
DEFAULT_LAMBDA = 0.2

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
SH_C3 = (
    -0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
    -0.4570457994644658, 1.445305721320277, -0.5900435899266435,
)


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


@dataclass(frozen=True)
class Gaussian3D:
    mu: tuple
    rotation: tuple
    scale: tuple
    opacity: float
    sh: np.ndarray  # (K, 3), K = (degree + 1)^2

    def __post_init__(self):
        object.__setattr__(self, "rotation", tuple(quat_normalize(self.rotation)))
        sh = np.asarray(self.sh, dtype=np.float64).reshape(-1, 3)
        if sh.shape[0] not in (1, 4, 9, 16):
            raise DomainError(f"{sh.shape[0]} SH coefficients per channel is not a degree 0-3 count")
        object.__setattr__(self, "sh", sh)
        if np.any(np.asarray(self.scale) <= 0):
            raise DomainError("scales must be positive")
        if not 0 < self.opacity <= 1:
            raise DomainError("opacity must lie in (0, 1]")

    @property
    def degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[0]))) - 1


class GaussianCloud:
    """Structure-of-arrays Gaussian set."""

    def __init__(self, mu, rotation, scale, opacity, sh):
        self.mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
        n = len(self.mu)
        q = np.asarray(rotation, dtype=np.float64).reshape(n, 4)
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        if np.any(norms < 1e-3):
            raise DomainError("degenerate rotation quaternion")
        # renormalizing a unit quaternion can move its last bit; leave those alone
        self.rotation = np.where(np.abs(norms - 1.0) < 1e-12, q, q / norms)
        self.scale = np.asarray(scale, dtype=np.float64).reshape(n, 3)
        self.opacity = np.asarray(opacity, dtype=np.float64).reshape(n)
        self.sh = np.asarray(sh, dtype=np.float64)
        if self.sh.ndim != 3:
            self.sh = self.sh.reshape(n, -1, 3)
        if self.sh.shape[1] not in (1, 4, 9, 16):
            raise DomainError("SH coefficient count must be 1, 4, 9 or 16")
        if np.any(self.scale <= 0):
            raise DomainError("scales must be positive")
        if np.any((self.opacity <= 0) | (self.opacity > 1)):
            raise DomainError("opacity must lie in (0, 1]")

    @classmethod
    def from_gaussians(cls, gaussians, degree: int = 0) -> "GaussianCloud":
        k = sh_coeff_count(degree)
        if not gaussians:
            return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)))
        if any(g.sh.shape[0] != k for g in gaussians):
            raise DomainError("all Gaussians in a cloud share one SH degree")
        return cls(
            [g.mu for g in gaussians], [g.rotation for g in gaussians], [g.scale for g in gaussians],
            [g.opacity for g in gaussians], [g.sh for g in gaussians],
        )

    def __len__(self):
        return len(self.mu)

    def __getitem__(self, i) -> Gaussian3D:
        return Gaussian3D(tuple(self.mu[i]), tuple(self.rotation[i]), tuple(self.scale[i]), float(self.opacity[i]), self.sh[i])

    def subset(self, idx) -> "GaussianCloud":
        return GaussianCloud(self.mu[idx], self.rotation[idx], self.scale[idx], self.opacity[idx], self.sh[idx])

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    def to_bytes(self) -> bytes:
        head = _HEADER.pack(MAGIC, VERSION, len(self), self.sh_degree)
        body = np.concatenate(
            [self.mu, self.rotation, self.scale, self.opacity[:, None], self.sh.transpose(0, 2, 1).reshape(len(self), -1)],
            axis=1,
        )
        return head + body.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GaussianCloud":
        if len(data) < _HEADER.size:
            raise DomainError("cloud payload shorter than its header")
        magic, version, count, degree = _HEADER.unpack_from(data)
        if magic != MAGIC or version != VERSION or degree > 3:
            raise DomainError(f"not an RFGS v{VERSION} payload")
        k = sh_coeff_count(degree)
        width = 11 + 3 * k
        if len(data) != _HEADER.size + 4 * width * count:
            raise DomainError("cloud payload size does not match its header")
        body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(count, width).astype(np.float64)
        sh = body[:, 11:].reshape(count, 3, k).transpose(0, 2, 1)
        return cls(body[:, 0:3], body[:, 3:7], body[:, 7:10], body[:, 10], sh)


@dataclass(frozen=True)
class Splat2D:
    center: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float


def covariance_from_rs(rotation, scale) -> np.ndarray:
    """R S S^T R^T with S = diag(standard deviations)."""
    s = np.asarray(scale, dtype=np.float64)
    if np.any(s <= 0):
        raise DomainError("scales must be positive")
    M = quat_to_matrix(rotation) * s  # R @ diag(s)
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


def _bmm(a, b):
    """Batched a @ b with a fixed summation order per element.

    Batched matmul may round a row differently depending on where it sits in
    the batch; this keeps renders exactly invariant to cloud order.
    """
    out = a[..., :, 0, None] * b[..., None, 0, :]
    for k in range(1, a.shape[-1]):
        out = out + a[..., :, k, None] * b[..., None, k, :]
    return out


def _batch_covariances(rotation, scale):
    w, x, y, z = rotation.T
    R = np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=1,
    )
    M = R * scale[:, None, :]
    return _bmm(M, M.transpose(0, 2, 1))


def evaluate_gaussian(cov, x) -> float:
    """exp(-x^T cov^-1 x / 2) for an offset ``x`` from the mean."""
    cov = np.asarray(cov, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DomainError("covariance is not positive definite") from exc
    return float(np.exp(-0.5 * x @ np.linalg.solve(cov, x)))


def _sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values (N, (degree+1)^2) in the usual splatting sign convention."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    cols = [np.full_like(x, SH_C0)]
    if degree >= 1:
        cols += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz, xy, yz, xz = x * x, y * y, z * z, x * y, y * z, x * z
        cols += [
            SH_C2[0] * xy, SH_C2[1] * yz, SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * xz, SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        cols += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * xy * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(cols, axis=-1)


def eval_sh_raw(sh, view_dir, degree: int) -> np.ndarray:
    """SH color before the offset and clamp."""
    sh = np.asarray(sh, dtype=np.float64).reshape(-1, 3)
    if sh.shape[0] != sh_coeff_count(degree):
        raise DomainError(f"degree {degree} needs {sh_coeff_count(degree)} coefficients, got {sh.shape[0]}")
    d = np.asarray(view_dir, dtype=np.float64).reshape(1, 3)
    return _sh_basis(d, degree)[0] @ sh


def eval_sh(sh, view_dir, degree: int) -> np.ndarray:
    return np.clip(0.5 + eval_sh_raw(sh, view_dir, degree), 0.0, 1.0)


def _camera_space(cloud: GaussianCloud, pose: CameraPose, intrinsics: CameraIntrinsics):
    Rwc = pose.matrix.T  # world -> camera rotation
    rel = cloud.mu - pose.center
    t = rel[:, 0, None] * Rwc[:, 0] + rel[:, 1, None] * Rwc[:, 1] + rel[:, 2, None] * Rwc[:, 2]
    x, y, z = t[:, 0], t[:, 1], t[:, 2]
    zs = np.where(z > 0, z, 1.0)
    fx, fy = intrinsics.fx, intrinsics.fy
    # linearize at most slightly outside the frustum, or near-plane splats off to the side explode
    lim_x = FRUSTUM_MARGIN * max(intrinsics.cx, intrinsics.width - intrinsics.cx) / fx
    lim_y = FRUSTUM_MARGIN * max(intrinsics.cy, intrinsics.height - intrinsics.cy) / fy
    jx = np.clip(x / zs, -lim_x, lim_x) * zs
    jy = np.clip(y / zs, -lim_y, lim_y) * zs
    J = np.zeros((len(z), 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * jx / zs**2
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * jy / zs**2
    T = _bmm(J, np.broadcast_to(Rwc, (len(z), 3, 3)))
    cov3 = _batch_covariances(cloud.rotation, cloud.scale)
    cov2 = _bmm(_bmm(T, cov3), T.transpose(0, 2, 1))
    cov2 = 0.5 * (cov2 + cov2.transpose(0, 2, 1))
    centers = np.stack([fx * x / zs + intrinsics.cx, fy * y / zs + intrinsics.cy], axis=-1)
    dirs = cloud.mu - pose.center
    dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
    basis = _sh_basis(dirs, cloud.sh_degree)
    raw = basis[:, 0, None] * cloud.sh[:, 0]
    for k in range(1, basis.shape[1]):
        raw = raw + basis[:, k, None] * cloud.sh[:, k]
    colors = np.clip(0.5 + raw, 0.0, 1.0)
    return centers, cov2, z, colors


def project_gaussian(g: Gaussian3D, pose: CameraPose, intrinsics: CameraIntrinsics, near: float = NEAR_LIMIT):
    """Splat2D for ``g`` or None when its mean is at or in front of the near limit."""
    cloud = GaussianCloud.from_gaussians([g], g.degree)
    centers, cov2, z, colors = _camera_space(cloud, pose, intrinsics)
    if z[0] <= near:
        return None
    return Splat2D(centers[0], cov2[0], float(z[0]), colors[0], g.opacity)


def project_cloud(cloud: GaussianCloud, pose: CameraPose, intrinsics: CameraIntrinsics, near: float = NEAR_LIMIT):
    """Visible splats in canonical front-to-back order.

    Returns (order, centers, cov2d, depths, colors, opacities). Ties in depth
    are broken by the Gaussian parameters themselves and only then by index,
    so a permuted cloud sorts identically.
    """
    if len(cloud) == 0:
        e = np.zeros((0,))
        return e.astype(np.int64), np.zeros((0, 2)), np.zeros((0, 2, 2)), e, np.zeros((0, 3)), e
    centers, cov2, z, colors = _camera_space(cloud, pose, intrinsics)
    keys = [np.arange(len(cloud)), cloud.opacity, *cloud.scale.T[::-1], *cloud.mu.T[::-1], z]
    order = np.lexsort(keys)
    order = order[z[order] > near]
    return order, centers[order], cov2[order], z[order], colors[order], cloud.opacity[order]


def footprint_radius(cov2d) -> np.ndarray:
    """Pixel radius covering 3 standard deviations of the dilated covariance."""
    cov = np.asarray(cov2d) + COV2D_DILATION * np.eye(2)
    a, b, c = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    return np.ceil(FOOTPRINT_SIGMAS * np.sqrt(lam))


def _conics(cov2d):
    cov = cov2d + COV2D_DILATION * np.eye(2)
    a, b, c = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=-1)


@numba.njit(cache=True)
def _composite(width, height, centers, conics, radii, colors, opacities, image, trans):
    for g in range(centers.shape[0]):
        u, v, r = centers[g, 0], centers[g, 1], radii[g]
        # pixels whose centers fall inside [u - r, u + r] x [v - r, v + r]
        x0 = max(int(np.ceil(u - r - 0.5)), 0)
        x1 = min(int(np.floor(u + r - 0.5)), width - 1)
        y0 = max(int(np.ceil(v - r - 0.5)), 0)
        y1 = min(int(np.floor(v + r - 0.5)), height - 1)
        ca, cb, cc = conics[g, 0], conics[g, 1], conics[g, 2]
        for py in range(y0, y1 + 1):
            dy = py + 0.5 - v
            for px in range(x0, x1 + 1):
                dx = px + 0.5 - u
                power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
                alpha = opacities[g] * np.exp(power)
                t = trans[py, px]
                for ch in range(3):
                    image[py, px, ch] += t * alpha * colors[g, ch]
                trans[py, px] = t * (1.0 - alpha)


def render_splats(cloud: GaussianCloud, pose: CameraPose, intrinsics: CameraIntrinsics, return_alpha: bool = False):
    """Front-to-back composite of the cloud; black where nothing is hit."""
    w, h = intrinsics.width, intrinsics.height
    image = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    _, centers, cov2, _, colors, opac = project_cloud(cloud, pose, intrinsics)
    if len(centers):
        _composite(
            w, h, np.ascontiguousarray(centers), np.ascontiguousarray(_conics(cov2)),
            footprint_radius(cov2), np.ascontiguousarray(colors), np.ascontiguousarray(opac), image, trans,
        )
    image = np.clip(image, 0.0, 1.0)
    if return_alpha:
        return image, 1.0 - trans
    return image


def dssim_loss(a, b) -> float:
    from .metrics import ssim

    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    return (1.0 - ssim(a, b)) / 2.0


def gs_loss(rendered, gt, lam: float = DEFAULT_LAMBDA) -> float:
    """(1 - lam) * mean absolute error + lam * D-SSIM."""
    a = np.asarray(rendered, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"image shapes differ: {a.shape} vs {b.shape}")
    if not 0.0 <= lam <= 1.0:
        raise DomainError("lambda must lie in [0, 1]")
    l1 = float(np.mean(np.abs(a - b)))
    if lam == 0.0:
        return l1
    return (1.0 - lam) * l1 + lam * dssim_loss(a, b)
