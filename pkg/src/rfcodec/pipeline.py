"""Radiance-field encoder/decoder streams and their wire packets.

Sender and receiver hold byte-identical copies of a radiance field. For each
frame the sender renders the field at the frame's pose and sends only the
pose plus the coded residual between the real frame and that render. The
receiver renders the same view and adds the residual back.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from .camera import CameraIntrinsics, CameraPose, quat_from_axis_angle, quat_multiply
from .codec import (
    CodecConfig,
    DeltaFrame,
    compression_savings,
    decode_delta,
    decode_key,
    encode_delta,
    encode_key,
    quantize_image,
)
from .errors import BackendMismatchError, CodecError, DomainError, PacketError
from .metrics import psnr, ssim
from .splat import GaussianCloud, render_splats
from .volume import RadianceVolume, render_image

log = logging.getLogger(__name__)

PACKET_MAGIC = b"RFPK"
PACKET_VERSION = 1
_PACKET_HEAD = struct.Struct("<4sBQQ4d3d8sI")
_CRC = struct.Struct("<I")


@dataclass
class RfBackend:
    """A renderable radiance field plus the parameters that fix its output.

    ``camera`` sets the field of view; frames of other sizes use it rescaled.
    ``blur_sigma`` low-pass filters every render (a stand-in for a field that
    lost high-frequency detail). Set ``cache`` to a dict to memoize renders.
    """

    model: RadianceVolume | GaussianCloud
    camera: CameraIntrinsics
    n_samples: int = 64
    blur_sigma: float = 0.0
    cache: dict | None = field(default=None, repr=False, compare=False)

    @property
    def kind(self) -> str:
        return "volume" if isinstance(self.model, RadianceVolume) else "splat"

    def intrinsics_for(self, width: int, height: int) -> CameraIntrinsics:
        if (width, height) == (self.camera.width, self.camera.height):
            return self.camera
        return self.camera.scaled(width, height)

    def render(self, pose: CameraPose, width: int | None = None, height: int | None = None) -> np.ndarray:
        width = self.camera.width if width is None else width
        height = self.camera.height if height is None else height
        key = (pose.rotation, pose.translation, width, height)
        if self.cache is not None and key in self.cache:
            return self.cache[key]
        intr = self.intrinsics_for(width, height)
        if self.kind == "volume":
            img = render_image(self.model, intr, pose, self.n_samples)
        else:
            img = render_splats(self.model, pose, intr)
        if self.blur_sigma > 0:
            img = gaussian_filter(img, sigma=(self.blur_sigma, self.blur_sigma, 0), mode="nearest")
        if self.cache is not None:
            self.cache[key] = img
        return img

    def params_bytes(self) -> bytes:
        c = self.camera
        params = {
            "kind": self.kind,
            "camera": [c.width, c.height, c.fx, c.fy, c.cx, c.cy],
            "n_samples": self.n_samples,
            "blur_sigma": self.blur_sigma,
        }
        return json.dumps(params, sort_keys=True).encode()

    def to_bytes(self) -> bytes:
        return self.params_bytes() + b"\0" + self.model.to_bytes()

    def digest(self) -> bytes:
        """8-byte fingerprint carried in every packet."""
        return hashlib.sha256(self.to_bytes()).digest()[:8]


@dataclass(frozen=True)
class RfPacket:
    frame_id: int
    pose: CameraPose
    delta: DeltaFrame
    backend_digest: bytes

    def to_bytes(self) -> bytes:
        head = _PACKET_HEAD.pack(
            PACKET_MAGIC, PACKET_VERSION, self.frame_id, self.pose.timestamp,
            *self.pose.rotation, *self.pose.translation, self.backend_digest, len(self.delta.payload),
        )
        body = head + self.delta.payload
        return body + _CRC.pack(zlib.crc32(body))

    @property
    def size_bytes(self) -> int:
        return _PACKET_HEAD.size + len(self.delta.payload) + _CRC.size

    @classmethod
    def from_bytes(cls, data: bytes) -> "RfPacket":
        if len(data) < _PACKET_HEAD.size + _CRC.size:
            raise PacketError(f"packet of {len(data)} bytes is shorter than its framing")
        (crc,) = _CRC.unpack_from(data, len(data) - _CRC.size)
        if zlib.crc32(data[: -_CRC.size]) != crc:
            raise PacketError("crc32 mismatch")
        magic, version, frame_id, ts, *rest = _PACKET_HEAD.unpack_from(data)
        if magic != PACKET_MAGIC or version != PACKET_VERSION:
            raise PacketError("not an RFPK v1 packet")
        q, t, digest, n = rest[0:4], rest[4:7], rest[7], rest[8]
        if _PACKET_HEAD.size + n + _CRC.size != len(data):
            raise PacketError("delta length disagrees with packet size")
        payload = data[_PACKET_HEAD.size : _PACKET_HEAD.size + n]
        width, height = struct.unpack_from("<HH", payload, 8) if len(payload) >= 12 else (0, 0)
        return cls(frame_id, CameraPose(q, t, ts), DeltaFrame(width, height, payload), digest)


def perturb_pose(pose: CameraPose, rng: np.random.Generator, translation_std: float, rotation_std: float) -> CameraPose:
    """Gaussian jitter of the camera center and a small random rotation (radians)."""
    t = np.asarray(pose.translation) + rng.normal(0.0, translation_std, 3)
    axis = rng.normal(size=3)
    dq = quat_from_axis_angle(axis, rng.normal(0.0, rotation_std)) if rotation_std > 0 else np.array([1.0, 0, 0, 0])
    return CameraPose(quat_multiply(pose.rotation, dq), t, pose.timestamp)


def rf_encode_stream(
    frames,
    backend: RfBackend,
    cfg: CodecConfig,
    *,
    first_id: int = 0,
    errors: list | None = None,
    pose_noise: tuple | None = None,
    rng: np.random.Generator | None = None,
) -> list[RfPacket]:
    """Packets for ``frames``, a sequence of (image, pose) pairs.

    Render failures skip the frame and are appended to ``errors`` as
    (frame_id, exception). ``pose_noise = (translation_std, rotation_std)``
    makes the sender render and transmit a jittered pose.
    """
    frames = list(frames)
    if not frames:
        raise DomainError("cannot encode an empty frame list")
    if pose_noise is not None and rng is None:
        raise DomainError("pose_noise needs an rng")
    digest = backend.digest()
    packets = []
    for i, (image, pose) in enumerate(frames):
        frame_id = first_id + i
        if pose_noise is not None:
            pose = perturb_pose(pose, rng, *pose_noise)
        h, w = np.shape(image)[:2]
        try:
            reference = backend.render(pose, w, h)
        except Exception as exc:  # noqa: BLE001 - any render failure drops just this frame
            log.warning("frame %d: render failed: %s", frame_id, exc)
            if errors is not None:
                errors.append((frame_id, exc))
            continue
        delta = encode_delta(image, reference, cfg)
        packets.append(RfPacket(frame_id, pose, delta, digest))
    return packets


def rf_decode_stream(
    packets,
    backend: RfBackend,
    cfg: CodecConfig,
    *,
    strict: bool = True,
    diagnostics: list | None = None,
) -> list:
    """Reconstruct frames from packets (objects or wire bytes).

    A packet failing its checksum or payload decode yields ``None`` in its
    slot and a note in ``diagnostics``. A packet made against another radiance
    field raises BackendMismatchError unless ``strict`` is False, in which case
    it decodes against the local field with a warning.
    """
    digest = backend.digest()
    out = []
    for k, pkt in enumerate(packets):
        try:
            if not isinstance(pkt, RfPacket):
                pkt = RfPacket.from_bytes(bytes(pkt))
        except PacketError as exc:
            log.warning("packet %d rejected: %s", k, exc)
            if diagnostics is not None:
                diagnostics.append((k, str(exc)))
            out.append(None)
            continue
        if pkt.backend_digest != digest:
            msg = f"frame {pkt.frame_id}: packet built against field {pkt.backend_digest.hex()}, local field is {digest.hex()}"
            if strict:
                raise BackendMismatchError(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
        try:
            reference = backend.render(pkt.pose, pkt.delta.width, pkt.delta.height)
            out.append(decode_delta(pkt.delta, reference, cfg))
        except (CodecError, DomainError) as exc:
            log.warning("frame %d rejected: %s", pkt.frame_id, exc)
            if diagnostics is not None:
                diagnostics.append((k, str(exc)))
            out.append(None)
    return out


def baseline_ip_sizes(frames, cfg: CodecConfig) -> list[tuple]:
    """(I, P) byte sizes for consecutive pairs: frame k as key, k+1 coded against its decode."""
    frames = list(frames)
    if len(frames) < 2:
        raise DomainError("need at least two frames to form an I/P pair")
    pairs = []
    for a, b in zip(frames[:-1], frames[1:]):
        key = encode_key(a, cfg)
        p = encode_delta(b, decode_key(key, cfg), cfg)
        pairs.append((key.size_bytes, p.size_bytes))
    return pairs


def per_frame_baselines(frames, cfg: CodecConfig) -> list[tuple]:
    """(I, P) sizes with frame k as the key frame of its pair.

    Frame k pairs with k+1; the last frame pairs with the one before it.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise DomainError("need at least two frames to form an I/P pair")
    keys = [encode_key(f, cfg) for f in frames]
    out = []
    for k, key in enumerate(keys):
        nxt = frames[k + 1] if k + 1 < len(frames) else frames[k - 1]
        p = encode_delta(nxt, decode_key(key, cfg), cfg)
        out.append((key.size_bytes, p.size_bytes))
    return out


@dataclass
class FrameStats:
    frame_id: int
    delta_bytes: int
    packet_bytes: int
    i_bytes: int
    p_bytes: int
    savings: float
    psnr_db: float
    ssim: float


@dataclass
class StreamStats:
    frames: list

    @property
    def mean_savings(self) -> float:
        return float(np.mean([f.savings for f in self.frames]))

    @property
    def mean_psnr(self) -> float:
        vals = [f.psnr_db for f in self.frames if math.isfinite(f.psnr_db)]
        return float(np.mean(vals)) if vals else math.inf

    @property
    def mean_ssim(self) -> float:
        return float(np.nanmean([f.ssim for f in self.frames]))


def stream_report(packets, decoded, reals, baselines) -> StreamStats:
    """Per-frame sizes, savings against the key-frame baseline, and fidelity.

    The residual takes the P-frame's place in the savings formula: savings is
    compression_savings(baseline I bytes, residual bytes).
    """
    packets, decoded, reals, baselines = list(packets), list(decoded), list(reals), list(baselines)
    if not len(packets) == len(decoded) == len(reals) == len(baselines):
        raise DomainError("packets, decoded frames, real frames and baselines must align")
    rows = []
    for pkt, dec, real, (i_size, p_size) in zip(packets, decoded, reals, baselines):
        if dec is None:
            q, s = math.nan, math.nan
        else:
            ref = quantize_image(real)
            q = psnr(ref, dec)
            s = ssim(ref, dec) if min(ref.shape[:2]) >= 11 else math.nan
        rows.append(
            FrameStats(
                pkt.frame_id, pkt.delta.size_bytes, pkt.size_bytes, i_size, p_size,
                compression_savings(i_size, pkt.delta.size_bytes), q, s,
            )
        )
    return StreamStats(rows)
