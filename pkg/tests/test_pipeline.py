import math
import struct
import sys
import zlib
from pathlib import Path

import numpy as np
import pytest

from rfcodec.camera import CameraIntrinsics, CameraPose, look_at
from rfcodec.codec import LOSSLESS, CodecConfig, encode_delta, encode_key, quantize_image
from rfcodec.errors import BackendMismatchError, DomainError
from rfcodec.pipeline import (
    RfBackend,
    RfPacket,
    baseline_ip_sizes,
    per_frame_baselines,
    perturb_pose,
    rf_decode_stream,
    rf_encode_stream,
    stream_report,
)
from rfcodec.splat import SH_C0, GaussianCloud
from rfcodec.volume import RadianceVolume

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(FIXTURES))
import make_fixtures  # noqa: E402

W, H = 32, 24


def small_volume(seed=0):
    rng = np.random.default_rng(seed)
    return RadianceVolume(rng.uniform(0, 1, (6, 6, 6, 3)), rng.uniform(0, 6, (6, 6, 6)), (-1, -1, -1), (1, 1, 1))


def small_cloud(seed=0):
    rng = np.random.default_rng(seed)
    n = 40
    colors = rng.uniform(0, 1, (n, 3))
    return GaussianCloud(
        rng.uniform(-1, 1, (n, 3)), rng.normal(size=(n, 4)), rng.uniform(0.05, 0.3, (n, 3)), rng.uniform(0.4, 1, n), ((colors - 0.5) / SH_C0)[:, None]
    )


def backend(kind, seed=0, **kw):
    model = small_volume(seed) if kind == "volume" else small_cloud(seed)
    return RfBackend(model, CameraIntrinsics.from_fov(W, H, 60), n_samples=24, **kw)


def poses(n=5):
    return [look_at([0.3 * np.sin(k), 0.1 * k, -3.0], [0, 0, 0], timestamp=k * 33_333) for k in range(n)]


def real_frames(be, n=5, sprite=0):
    out = []
    for p in poses(n):
        img = quantize_image(be.render(p, W, H)).copy()
        if sprite:
            img[4 : 4 + sprite, 8 : 8 + sprite] = [1.0, 0.0, 0.5]
        out.append((img, p))
    return out


@pytest.mark.parametrize("kind", ["volume", "splat"])
def test_lossless_end_to_end_identity(kind):
    be = backend(kind)
    frames = real_frames(backend(kind, seed=1))  # content the field does not explain
    packets = rf_encode_stream(frames, be, LOSSLESS)
    decoded = rf_decode_stream([p.to_bytes() for p in packets], be, LOSSLESS)
    for (img, _), dec in zip(frames, decoded):
        assert np.array_equal(dec, img)
    ids = [p.frame_id for p in packets]
    assert ids == sorted(set(ids))
    # only residual payloads ever cross the link
    assert all(p.delta.payload[5] == 1 for p in packets)


@pytest.mark.parametrize("kind", ["volume", "splat"])
def test_perfect_field_gives_minimal_deltas(kind):
    be = backend(kind)
    cfg = CodecConfig(23)
    frames = real_frames(be)
    for pkt, (img, _) in zip(rf_encode_stream(frames, be, cfg), frames):
        assert pkt.delta.size_bytes == encode_delta(img, img, cfg).size_bytes


def test_sprite_size_grows_with_area():
    be = backend("volume")
    cfg = CodecConfig(23)
    sizes = [np.mean([p.delta.size_bytes for p in rf_encode_stream(real_frames(be, 3, s), be, cfg)]) for s in (0, 4, 8, 16)]
    assert sizes == sorted(sizes) and sizes[-1] > 2 * sizes[1]


def test_empty_stream_rejected():
    with pytest.raises(DomainError):
        rf_encode_stream([], backend("volume"), LOSSLESS)


class FlakyBackend(RfBackend):
    def render(self, pose, width=None, height=None):
        if pose.timestamp == 33_333:
            raise RuntimeError("renderer fault")
        return super().render(pose, width, height)


def test_render_failure_skips_frame():
    be = FlakyBackend(small_volume(), CameraIntrinsics.from_fov(W, H, 60), 24)
    errors = []
    packets = rf_encode_stream(real_frames(backend("volume"), 4), be, LOSSLESS, errors=errors)
    assert [p.frame_id for p in packets] == [0, 2, 3]
    assert errors[0][0] == 1 and "renderer fault" in str(errors[0][1])


def test_corrupted_packet_rejected_and_stream_continues():
    be = backend("volume")
    packets = [p.to_bytes() for p in rf_encode_stream(real_frames(be, 3), be, LOSSLESS)]
    bad = bytearray(packets[1])
    bad[-1] ^= 0x01
    diag = []
    out = rf_decode_stream([packets[0], bytes(bad), packets[2]], be, LOSSLESS, diagnostics=diag)
    assert out[0] is not None and out[1] is None and out[2] is not None
    assert diag and diag[0][0] == 1 and "crc" in diag[0][1]


def test_mismatched_field_detected():
    enc, dec = backend("splat", 0), backend("splat", 2)
    cfg = CodecConfig(23)
    frames = real_frames(backend("splat", 5))
    packets = rf_encode_stream(frames, enc, cfg)
    with pytest.raises(BackendMismatchError):
        rf_decode_stream(packets, dec, cfg)
    reals = [f for f, _ in frames]
    base = per_frame_baselines(reals, cfg)
    good = stream_report(packets, rf_decode_stream(packets, enc, cfg), reals, base)
    with pytest.warns(RuntimeWarning):
        wrong = rf_decode_stream(packets, dec, cfg, strict=False)
    bad = stream_report(packets, wrong, reals, base)
    assert bad.mean_psnr < good.mean_psnr - 3


def test_sharper_field_saves_more_than_blurred():
    sharp, blurred = backend("splat"), backend("splat", blur_sigma=1.5)
    cfg = CodecConfig(23)
    frames = real_frames(sharp)
    reals = [f for f, _ in frames]
    base = per_frame_baselines(reals, cfg)
    s1 = stream_report(p := rf_encode_stream(frames, sharp, cfg), rf_decode_stream(p, sharp, cfg), reals, base)
    s2 = stream_report(q := rf_encode_stream(frames, blurred, cfg), rf_decode_stream(q, blurred, cfg), reals, base)
    assert s1.mean_savings >= s2.mean_savings


def test_stream_report_consistency():
    be = backend("volume")
    frames = real_frames(be)
    reals = [f for f, _ in frames]
    packets = rf_encode_stream(frames, be, LOSSLESS)
    decoded = rf_decode_stream(packets, be, LOSSLESS)
    base = per_frame_baselines(reals, LOSSLESS)
    stats = stream_report(packets, decoded, reals, base)
    for fs, pkt, (i, p) in zip(stats.frames, packets, base):
        assert fs.savings == 100.0 * i / (i + pkt.delta.size_bytes)
        assert fs.psnr_db == math.inf and fs.packet_bytes == len(pkt.to_bytes())
    assert stats.mean_savings > 80
    with pytest.raises(DomainError):
        stream_report(packets, decoded[:-1], reals, base)


def test_baselines():
    rng = np.random.default_rng(0)
    cfg = CodecConfig(23)
    img = rng.uniform(0, 1, (24, 32, 3))
    (i, _), = baseline_ip_sizes([img, img], cfg)
    assert i == encode_key(img, cfg).size_bytes
    # P is coded against the decoded key frame, so the minimum needs an exact key decode
    q = quantize_image(img)
    (_, p), = baseline_ip_sizes([img, img], LOSSLESS)
    assert p == encode_delta(q, q, LOSSLESS).size_bytes
    flat = np.full((24, 32, 3), 0.4)
    (_, p), = baseline_ip_sizes([flat, flat], cfg)
    assert p == encode_delta(flat, flat, cfg).size_bytes
    frames = [rng.uniform(0, 1, (24, 32, 3)) for _ in range(4)]
    pairs = baseline_ip_sizes(frames, cfg)
    assert len(pairs) == 3
    assert all(0.5 * i <= p <= 2 * i for i, p in pairs)
    assert len(per_frame_baselines(frames, cfg)) == 4
    with pytest.raises(DomainError):
        baseline_ip_sizes(frames[:1], cfg)


def test_packet_round_trip_and_layout():
    be = backend("volume")
    pkt = rf_encode_stream(real_frames(be, 1), be, CodecConfig(18), first_id=7)[0]
    data = pkt.to_bytes()
    assert len(data) == pkt.size_bytes == 4 + 1 + 8 + 8 + 32 + 24 + 8 + 4 + pkt.delta.size_bytes + 4
    back = RfPacket.from_bytes(data)
    assert back == pkt
    assert back.to_bytes() == data
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    assert crc == zlib.crc32(data[:-4])


def test_packet_golden_bytes():
    data = (FIXTURES / "packet.bin").read_bytes()
    assert make_fixtures.build()["packet.bin"] == data
    pkt = RfPacket.from_bytes(data)
    assert pkt.frame_id == 42 and pkt.pose.timestamp == 1_234_567 and pkt.backend_digest == bytes(range(8))
    assert pkt.delta.payload == (FIXTURES / "delta_crf23_medium.bin").read_bytes()


def test_digest_tracks_field_and_parameters():
    a, b = backend("volume"), backend("volume")
    assert a.digest() == b.digest() and len(a.digest()) == 8
    assert backend("volume", blur_sigma=1.0).digest() != a.digest()
    assert backend("volume", seed=3).digest() != a.digest()


def test_render_cache_returns_same_image():
    be = backend("splat", cache={})
    p = poses(1)[0]
    assert be.render(p, W, H) is be.render(p, W, H)


def test_pose_noise_is_seeded():
    p = poses(1)[0]
    a = perturb_pose(p, np.random.default_rng(1), 0.01, 0.01)
    b = perturb_pose(p, np.random.default_rng(1), 0.01, 0.01)
    assert a == b and a != p and a.timestamp == p.timestamp
