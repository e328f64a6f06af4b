"""Block-transform residual codec with key (intra) and delta (residual) frames.

Pixels are coded as 8-bit integers per RGB channel. Every 8x8 block goes
through an orthonormal 2D DCT-II, a CRF-scaled quantizer, zigzag ordering and
a run/level symbol stream. Symbols are written as LEB128 varints and the
stream is deflated. Runs of all-zero blocks collapse into single skip
symbols; how far a skip may reach depends on the preset.

CRF 0 is lossless: the quantizer step is 1 and an integer correction layer
stores whatever rounding the inverse transform leaves, so decoding is exact.

Symbol layout per section (one section of coefficient blocks, plus a
correction section in lossless mode), blocks in channel/row/column order::

    2k                          k consecutive all-zero blocks (k >= 1)
    2n+1, zz(DC), (run, zz(level)) * n
                                a coded block with n nonzero AC coefficients

where ``run`` counts zeros skipped in zigzag order and ``zz`` maps signed to
unsigned integers (0, -1, 1, -2, ... -> 0, 1, 2, 3, ...).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numba
import numpy as np
from scipy.fft import dctn, idctn

from .errors import CodecError, DomainError

BLOCK = 8
MAGIC = b"RFDX"
VERSION = 1
KIND_KEY = 0
KIND_DELTA = 1
LOSSLESS_CRF = 0
_HEADER = struct.Struct("<4sBBBBHHBB")
HEADER_SIZE = _HEADER.size

PRESETS = ("veryfast", "medium", "veryslow")
_ZLIB_LEVEL = {"veryfast": 1, "medium": 6, "veryslow": 9}

# JPEG Annex K luminance table; the key table uses half of it with a fine DC step
_JPEG_LUMA = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
KEY_TABLE = np.maximum(_JPEG_LUMA * 0.5, 1.0)
KEY_TABLE[0, 0] = 2.0
_uv = np.add.outer(np.arange(BLOCK), np.arange(BLOCK)).astype(np.float64)
# residuals are zero-centered with little low-frequency energy, so the table is flatter
DELTA_TABLE = 2.0 + 1.5 * _uv


def _zigzag_order(n=BLOCK):
    idx = sorted(((u, v) for u in range(n) for v in range(n)), key=lambda p: (p[0] + p[1], p[1] if (p[0] + p[1]) % 2 == 0 else p[0]))
    return np.array([u * n + v for u, v in idx])


ZIGZAG = _zigzag_order()
UNZIGZAG = np.argsort(ZIGZAG)


@dataclass(frozen=True)
class CodecConfig:
    crf: int = 23
    preset: str = "medium"

    def __post_init__(self):
        if int(self.crf) != self.crf or not 0 <= self.crf <= 51:
            raise DomainError(f"crf must be an integer in [0, 51], got {self.crf}")
        if self.preset not in PRESETS:
            raise DomainError(f"preset must be one of {PRESETS}, got {self.preset!r}")

    @property
    def lossless(self) -> bool:
        return self.crf == LOSSLESS_CRF

    @property
    def preset_id(self) -> int:
        return PRESETS.index(self.preset)

    def step_scale(self) -> float:
        return 2.0 ** ((self.crf - 18) / 6.0)

    def table(self, kind: int) -> np.ndarray:
        if self.lossless:
            return np.ones((BLOCK, BLOCK))
        base = KEY_TABLE if kind == KIND_KEY else DELTA_TABLE
        return base * self.step_scale()


LOSSLESS = CodecConfig(crf=LOSSLESS_CRF, preset="veryfast")


@dataclass(frozen=True)
class KeyFrame:
    width: int
    height: int
    payload: bytes

    @property
    def size_bytes(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class DeltaFrame:
    width: int
    height: int
    payload: bytes

    @property
    def size_bytes(self) -> int:
        return len(self.payload)

    @property
    def lossless(self) -> bool:
        return len(self.payload) > 7 and self.payload[6] == LOSSLESS_CRF


# ---------------------------------------------------------------------------
# pixel domain


def to_codes(img) -> np.ndarray:
    """8-bit integer samples (H, W, 3) as int64."""
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DomainError(f"expected an (H, W, 3) image, got shape {a.shape}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise DomainError("image has a zero dimension")
    if a.dtype == np.uint8:
        return a.astype(np.int64)
    return np.rint(np.clip(a.astype(np.float64), 0.0, 1.0) * 255.0).astype(np.int64)


def from_codes(codes) -> np.ndarray:
    return np.asarray(codes, dtype=np.float64) / 255.0


def quantize_image(img) -> np.ndarray:
    """Snap an image to the 8-bit grid the codec works on."""
    return from_codes(to_codes(img))


def _pad(codes):
    h, w, _ = codes.shape
    py, px = (-h) % BLOCK, (-w) % BLOCK
    if py or px:
        codes = np.pad(codes, ((0, py), (0, px), (0, 0)), mode="edge")
    return codes, px, py


def _to_blocks(plane):
    """(H, W, 3) -> (3 * by * bx, 8, 8) in channel, row, column order."""
    h, w, c = plane.shape
    b = plane.transpose(2, 0, 1).reshape(c, h // BLOCK, BLOCK, w // BLOCK, BLOCK)
    return b.transpose(0, 1, 3, 2, 4).reshape(-1, BLOCK, BLOCK)


def _from_blocks(blocks, h, w):
    c = blocks.shape[0] // ((h // BLOCK) * (w // BLOCK))
    b = blocks.reshape(c, h // BLOCK, w // BLOCK, BLOCK, BLOCK).transpose(0, 1, 3, 2, 4)
    return b.reshape(c, h, w).transpose(1, 2, 0)


def dct2(blocks):
    return dctn(blocks, type=2, axes=(-2, -1), norm="ortho")


def idct2(coeffs):
    return idctn(coeffs, type=2, axes=(-2, -1), norm="ortho")


def _quantize(blocks, table):
    return np.rint(dct2(blocks) / table).astype(np.int64)


def _reconstruct(q, table):
    return np.rint(idct2(q * table)).astype(np.int64)


# ---------------------------------------------------------------------------
# symbol stream


def _zz(v):
    return np.where(v >= 0, 2 * v, -2 * v - 1)


def _unzz(u):
    return np.where(u & 1, -((u + 1) >> 1), u >> 1)


def _group_breaks(n_blocks, bx, by, preset):
    """Blocks at which a zero-block run must restart."""
    b = np.arange(n_blocks)
    if preset == "veryfast":
        return np.ones(n_blocks, dtype=bool)
    if preset == "medium":
        return b % bx == 0
    return b == 0


def _section_symbols(zq, bx, by, preset):
    """Symbol array for (n_blocks, 64) zigzag-ordered integer blocks."""
    nb = len(zq)
    nonzero = zq != 0
    coded = nonzero.any(axis=1)
    zero = ~coded
    breaks = _group_breaks(nb, bx, by, preset)
    prev_zero = np.concatenate([[False], zero[:-1]])
    skip_start = zero & (~prev_zero | breaks)
    nnz_ac = nonzero[:, 1:].sum(axis=1)
    count = np.where(coded, 2 + 2 * nnz_ac, np.where(skip_start, 1, 0))
    start = np.concatenate([[0], np.cumsum(count)[:-1]])
    out = np.empty(int(count.sum()), dtype=np.int64)

    gid = np.cumsum(skip_start) - 1
    lengths = np.bincount(gid[zero], minlength=int(skip_start.sum())) if zero.any() else np.zeros(0, int)
    out[start[skip_start]] = 2 * lengths
    cb = np.nonzero(coded)[0]
    out[start[cb]] = 2 * nnz_ac[cb] + 1
    out[start[cb] + 1] = _zz(zq[cb, 0])

    bi, pos = np.nonzero(nonzero[:, 1:])
    if len(bi):
        first = np.concatenate([[True], bi[1:] != bi[:-1]])
        prev = np.concatenate([[-1], pos[:-1]])
        prev[first] = -1
        run = pos - prev - 1
        block_first = np.maximum.accumulate(np.where(first, np.arange(len(bi)), 0))
        rank = np.arange(len(bi)) - block_first
        slot = start[bi] + 2 + 2 * rank
        out[slot] = run
        out[slot + 1] = _zz(zq[bi, pos + 1])
    return out


def _varint_encode(values) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    if len(v) == 0:
        return b""
    nbytes = np.ones(len(v), dtype=np.int64)
    for k in range(1, 10):
        nbytes += v >= np.uint64(1) << np.uint64(7 * k)
    total = int(nbytes.sum())
    starts = np.concatenate([[0], np.cumsum(nbytes)[:-1]])
    owner = np.repeat(np.arange(len(v)), nbytes)
    j = np.arange(total) - starts[owner]
    chunk = (v[owner] >> (np.uint64(7) * j.astype(np.uint64))) & np.uint64(0x7F)
    cont = (j < nbytes[owner] - 1).astype(np.uint64) << np.uint64(7)
    return (chunk | cont).astype(np.uint8).tobytes()


def _varint_decode(data: bytes):
    """Symbols and the byte offset at which each begins."""
    b = np.frombuffer(data, dtype=np.uint8)
    if len(b) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    end = (b & 0x80) == 0
    if not end[-1]:
        last_end = np.nonzero(end)[0]
        off = int(last_end[-1]) + 1 if len(last_end) else 0
        raise CodecError("truncated varint in symbol stream", off)
    ends = np.nonzero(end)[0]
    starts = np.concatenate([[0], ends[:-1] + 1])
    lengths = ends - starts + 1
    if lengths.max() > 9:
        bad = int(starts[np.argmax(lengths > 9)])
        raise CodecError("oversized varint in symbol stream", bad)
    owner = np.repeat(np.arange(len(starts)), lengths)
    j = (np.arange(len(b)) - starts[owner]).astype(np.uint64)
    contrib = (b.astype(np.uint64) & np.uint64(0x7F)) << (np.uint64(7) * j)
    vals = np.add.reduceat(contrib, starts)
    return vals.astype(np.int64), starts


@numba.njit(cache=True)
def _parse_section(sym, p, n_blocks, out):
    """Fill ``out`` (n_blocks, 64, zigzag order). Returns (status, symbol index)."""
    n = sym.shape[0]
    b = 0
    while b < n_blocks:
        if p >= n:
            return 1, p
        h = sym[p]
        if h % 2 == 0:
            k = h // 2
            if k < 1 or b + k > n_blocks:
                return 2, p
            b += k
            p += 1
            continue
        nnz = (h - 1) // 2
        if p + 2 + 2 * nnz > n:
            return 1, p
        if nnz > 63:
            return 3, p
        u = sym[p + 1]
        out[b, 0] = -((u + 1) >> 1) if u & 1 else u >> 1
        pos = 0
        for r in range(nnz):
            pos += sym[p + 2 + 2 * r] + 1
            if pos > 63:
                return 3, p + 2 + 2 * r
            u = sym[p + 3 + 2 * r]
            out[b, pos] = -((u + 1) >> 1) if u & 1 else u >> 1
        p += 2 + 2 * nnz
        b += 1
    return 0, p


_PARSE_ERRORS = {1: "symbol stream ends inside a block", 2: "zero-block run overruns the frame", 3: "coefficient index past the block end"}


# ---------------------------------------------------------------------------
# container


def _pack(kind, cfg, width, height, px, py, sections, nbx, nby) -> bytes:
    syms = np.concatenate([_section_symbols(zq, nbx, nby, cfg.preset) for zq in sections])
    coded = zlib.compress(_varint_encode(syms), _ZLIB_LEVEL[cfg.preset])
    head = _HEADER.pack(MAGIC, VERSION, kind, cfg.crf, cfg.preset_id, width, height, px, py)
    return head + coded


def _unpack(payload: bytes, kind: int, cfg: CodecConfig):
    if len(payload) < HEADER_SIZE:
        raise CodecError("payload shorter than the container header", len(payload))
    magic, version, pkind, crf, preset, w, h, px, py = _HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise CodecError("bad magic", 0)
    if version != VERSION:
        raise CodecError(f"unsupported version {version}", 4)
    if pkind != kind:
        raise CodecError(f"expected frame kind {kind}, payload holds kind {pkind}", 5)
    if preset >= len(PRESETS):
        raise CodecError(f"unknown preset id {preset}", 7)
    if crf != cfg.crf or PRESETS[preset] != cfg.preset:
        raise CodecError(
            f"payload coded with crf={crf} preset={PRESETS[preset]}, decoder configured for crf={cfg.crf} preset={cfg.preset}", 6
        )
    if w == 0 or h == 0 or px >= BLOCK or py >= BLOCK or (w + px) % BLOCK or (h + py) % BLOCK:
        raise CodecError("inconsistent frame geometry in header", 8)
    try:
        raw = zlib.decompress(payload[HEADER_SIZE:])
    except zlib.error as exc:
        raise CodecError(f"coded stream is corrupt or truncated ({exc})", HEADER_SIZE) from exc
    try:
        syms, offsets = _varint_decode(raw)
    except CodecError as exc:
        raise CodecError(f"{exc} in decompressed stream") from exc
    hp, wp = h + py, w + px
    nb = 3 * (hp // BLOCK) * (wp // BLOCK)
    n_sections = 2 if cfg.lossless else 1
    sections = []
    p = 0
    for _ in range(n_sections):
        zq = np.zeros((nb, BLOCK * BLOCK), dtype=np.int64)
        status, p = _parse_section(syms, p, nb, zq)
        if status:
            off = int(offsets[p]) if p < len(offsets) else len(raw)
            raise CodecError(_PARSE_ERRORS[status] + " (decompressed stream)", off)
        sections.append(zq)
    if p != len(syms):
        raise CodecError("trailing symbols after the last block (decompressed stream)", int(offsets[p]))
    return w, h, px, py, sections


def _zig(blocks):
    return blocks.reshape(len(blocks), -1)[:, ZIGZAG]


def _unzig(zq):
    return zq[:, UNZIGZAG].reshape(-1, BLOCK, BLOCK)


def _encode_plane(plane, cfg, kind):
    """Quantized (and, if lossless, correction) zigzag sections for integer samples."""
    table = cfg.table(kind)
    blocks = _to_blocks(plane)
    q = _quantize(blocks, table)
    sections = [_zig(q)]
    if cfg.lossless:
        sections.append(_zig(blocks - _reconstruct(q, table)))
    return sections


def _decode_plane(sections, cfg, kind, hp, wp):
    table = cfg.table(kind)
    rec = _reconstruct(_unzig(sections[0]), table)
    if cfg.lossless:
        rec = rec + _unzig(sections[1])
    return _from_blocks(rec, hp, wp)


def encode_key(img, cfg: CodecConfig) -> KeyFrame:
    codes = to_codes(img)
    h, w, _ = codes.shape
    padded, px, py = _pad(codes)
    sections = _encode_plane(padded - 128, cfg, KIND_KEY)
    payload = _pack(KIND_KEY, cfg, w, h, px, py, sections, padded.shape[1] // BLOCK, padded.shape[0] // BLOCK)
    return KeyFrame(w, h, payload)


def decode_key(kf, cfg: CodecConfig) -> np.ndarray:
    payload = kf.payload if isinstance(kf, KeyFrame) else bytes(kf)
    w, h, px, py, sections = _unpack(payload, KIND_KEY, cfg)
    plane = _decode_plane(sections, cfg, KIND_KEY, h + py, w + px) + 128
    return from_codes(np.clip(plane[:h, :w], 0, 255))


def encode_delta(real, reference, cfg: CodecConfig) -> DeltaFrame:
    """Code ``real - reference`` in the 8-bit domain."""
    r, ref = to_codes(real), to_codes(reference)
    if r.shape != ref.shape:
        raise DomainError(f"frame {r.shape} and reference {ref.shape} differ in shape")
    h, w, _ = r.shape
    rp, px, py = _pad(r)
    refp, _, _ = _pad(ref)
    sections = _encode_plane(rp - refp, cfg, KIND_DELTA)
    payload = _pack(KIND_DELTA, cfg, w, h, px, py, sections, rp.shape[1] // BLOCK, rp.shape[0] // BLOCK)
    return DeltaFrame(w, h, payload)


def decode_delta(df, reference, cfg: CodecConfig) -> np.ndarray:
    payload = df.payload if isinstance(df, DeltaFrame) else bytes(df)
    w, h, px, py, sections = _unpack(payload, KIND_DELTA, cfg)
    ref = to_codes(reference)
    if ref.shape != (h, w, 3):
        raise DomainError(f"reference shape {ref.shape} does not match coded frame {(h, w, 3)}")
    refp, _, _ = _pad(ref)
    res = _decode_plane(sections, cfg, KIND_DELTA, h + py, w + px)
    return from_codes(np.clip(refp + res, 0, 255)[:h, :w])


def coded_blocks(frame, cfg: CodecConfig) -> np.ndarray:
    """Quantized coefficients of a coded frame, shaped (3, blocks_y, blocks_x, 8, 8)."""
    kind = KIND_KEY if isinstance(frame, KeyFrame) else KIND_DELTA
    w, h, px, py, sections = _unpack(frame.payload, kind, cfg)
    q = _unzig(sections[0])
    return q.reshape(3, (h + py) // BLOCK, (w + px) // BLOCK, BLOCK, BLOCK)


def compression_savings(i_size, p_size) -> float:
    """Percent of a key/residual pair's bytes avoided by not sending the key frame."""
    if i_size < 0 or p_size < 0:
        raise DomainError("sizes must be non-negative")
    if i_size + p_size <= 0:
        raise DomainError("at least one frame must have a nonzero size")
    return 100.0 * i_size / (i_size + p_size)
