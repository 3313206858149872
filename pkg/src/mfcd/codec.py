"""Toy GOP-based, block-motion-compensated, lossless-residual video codec.

Frames are uint8 numpy arrays of shape (H, W, C), channel-last; raw videos
are (F, H, W, C).  Each GOP stores a verbatim I-frame followed by P-frames
holding a per-block motion field and an exact int16 residual, so
``decode(encode(v))`` reproduces the input bit for bit.

Defaults: block size B=8, search range S=7, GOP length K=12.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Gop",
    "CompressedStream",
    "StreamParseError",
    "block_match",
    "warp",
    "encode",
    "decode",
    "serialize",
    "parse",
    "write_raw_video",
    "read_raw_video",
    "serialize_raw_video",
    "parse_raw_video",
    "DEFAULT_BLOCK",
    "DEFAULT_SEARCH",
    "DEFAULT_GOP",
]

DEFAULT_BLOCK = 8
DEFAULT_SEARCH = 7
DEFAULT_GOP = 12

STREAM_MAGIC = b"MFCS"
STREAM_VERSION = 1
RAW_MAGIC = b"MFRV"
RAW_VERSION = 1


class StreamParseError(ValueError):
    """Malformed byte stream; message carries the byte offset."""


@dataclass
class Gop:
    """One I-frame plus (K-1) P-frames of (motion field, residual)."""
    iframe: np.ndarray                      # (H, W, C) uint8
    pframes: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    # motion: (H/B, W/B, 2) int (dy, dx); residual: (H, W, C) int16

    @property
    def num_frames(self) -> int:
        return 1 + len(self.pframes)


@dataclass
class CompressedStream:
    width: int
    height: int
    channels: int
    block: int
    search: int
    gops: list[Gop] = field(default_factory=list)

    @property
    def num_frames(self) -> int:
        return sum(g.num_frames for g in self.gops)


def _check_frame(frame: np.ndarray, name: str = "frame") -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] not in (1, 3):
        raise ValueError(f"{name}: expected (H, W, C) with C in (1, 3), got {frame.shape}")
    if frame.dtype != np.uint8:
        raise ValueError(f"{name}: expected uint8 pixels, got {frame.dtype}")
    return frame


# Clamped warp/search coordinate tables, cached per geometry.
_COORD_CACHE: dict[tuple[int, int, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _search_coords(h: int, w: int, s: int):
    key = (h, w, s)
    hit = _COORD_CACHE.get(key)
    if hit is not None:
        return hit
    disps = [(dy, dx) for dy in range(-s, s + 1) for dx in range(-s, s + 1)]
    # Tie-break order: smallest |dy|+|dx|, then dy, then dx.  Stable argmin
    # over this ordering implements the rule.
    disps.sort(key=lambda d: (abs(d[0]) + abs(d[1]), d[0], d[1]))
    darr = np.array(disps, dtype=np.int64)
    ys = np.clip(np.arange(h)[None, :] + darr[:, 0:1], 0, h - 1)
    xs = np.clip(np.arange(w)[None, :] + darr[:, 1:2], 0, w - 1)
    _COORD_CACHE[key] = (darr, ys, xs)
    return _COORD_CACHE[key]


def block_match(reference: np.ndarray, target: np.ndarray,
                block: int = DEFAULT_BLOCK, search: int = DEFAULT_SEARCH) -> np.ndarray:
    """Exhaustive SAD block matching with edge-clamped reference reads.

    Returns per-block integer displacements (dy, dx), shape (H/B, W/B, 2),
    each in [-S, S].  Ties broken by smallest |dy|+|dx|, then dy, then dx.
    """
    reference = _check_frame(reference, "reference")
    target = _check_frame(target, "target")
    if reference.shape != target.shape:
        raise ValueError(
            f"block_match: frame shapes differ, {reference.shape} vs {target.shape}")
    h, w, c = target.shape
    if h % block or w % block:
        raise ValueError(f"block_match: block {block} must divide H={h} and W={w}")
    if search < 0:
        raise ValueError(f"block_match: search range must be >= 0, got {search}")
    disps, ys, xs = _search_coords(h, w, search)
    nd = disps.shape[0]
    warped = reference[ys[:, :, None], xs[:, None, :]]        # (D, H, W, C)
    diff = np.abs(warped.astype(np.int32) - target.astype(np.int32)[None])
    sad = diff.reshape(nd, h // block, block, w // block, block, c)
    sad = sad.sum(axis=(2, 4, 5))
    best = sad.argmin(axis=0)                                 # first occurrence wins
    return disps[best]


def warp(reference: np.ndarray, motion: np.ndarray,
         block: int = DEFAULT_BLOCK) -> np.ndarray:
    """Copy each block from the displaced reference location, edge-clamped."""
    reference = _check_frame(reference, "reference")
    h, w, _ = reference.shape
    motion = np.asarray(motion)
    if motion.shape != (h // block, w // block, 2):
        raise ValueError(
            f"warp: motion grid {motion.shape} does not match frame {reference.shape} "
            f"with block {block}")
    dy = np.repeat(np.repeat(motion[:, :, 0], block, axis=0), block, axis=1)
    dx = np.repeat(np.repeat(motion[:, :, 1], block, axis=0), block, axis=1)
    ys = np.clip(np.arange(h)[:, None] + dy, 0, h - 1)
    xs = np.clip(np.arange(w)[None, :] + dx, 0, w - 1)
    return reference[ys, xs]


def encode(video: np.ndarray, block: int = DEFAULT_BLOCK,
           search: int = DEFAULT_SEARCH, gop_len: int = DEFAULT_GOP) -> CompressedStream:
    """Encode a raw video into GOPs of I-frame + motion/residual P-frames.

    Residuals are stored losslessly so decoding is exact.  A final partial
    GOP is emitted when the length is not a multiple of the GOP size.
    """
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] < 1:
        raise ValueError(f"encode: expected (F, H, W, C) with F >= 1, got {video.shape}")
    if video.dtype != np.uint8:
        raise ValueError(f"encode: expected uint8 video, got {video.dtype}")
    f, h, w, c = video.shape
    if h % block or w % block:
        raise ValueError(f"encode: block {block} must divide H={h} and W={w}")
    if gop_len < 1:
        raise ValueError(f"encode: gop length must be >= 1, got {gop_len}")
    stream = CompressedStream(width=w, height=h, channels=c, block=block, search=search)
    for start in range(0, f, gop_len):
        frames = video[start:start + gop_len]
        gop = Gop(iframe=frames[0].copy())
        prev = frames[0]
        for k in range(1, frames.shape[0]):
            mv = block_match(prev, frames[k], block, search)
            pred = warp(prev, mv, block)
            resid = frames[k].astype(np.int16) - pred.astype(np.int16)
            gop.pframes.append((mv, resid))
            prev = frames[k]   # residual is lossless, reconstruction == original
        stream.gops.append(gop)
    return stream


def decode_gop(gop: Gop, block: int) -> np.ndarray:
    """Decode one GOP to (K, H, W, C) uint8."""
    frames = [gop.iframe]
    prev = gop.iframe
    for mv, resid in gop.pframes:
        pred = warp(prev, mv, block).astype(np.int16)
        frame = np.clip(pred + resid, 0, 255).astype(np.uint8)
        frames.append(frame)
        prev = frame
    return np.stack(frames)


def decode(stream: CompressedStream) -> np.ndarray:
    """Inverse of encode; exact because residuals are lossless."""
    if not stream.gops:
        raise ValueError("decode: stream holds no GOPs")
    return np.concatenate([decode_gop(g, stream.block) for g in stream.gops])


# ---------------------------------------------------------------------------
# byte-level stream format

def serialize(stream: CompressedStream) -> bytes:
    """Little-endian stream format, see parse() for the inverse.

    Layout: magic "MFCS", version u16, W u16, H u16, C u8, B u8, S u8,
    gop_count u32; per GOP: frame_count u8, I-frame raw pixels, then per
    P-frame the motion field as (dy, dx) i8 pairs in block row-major order
    and the residual as i16 per pixel, row-major channel-last.
    """
    out = [STREAM_MAGIC,
           struct.pack("<HHHBBBI", STREAM_VERSION, stream.width, stream.height,
                       stream.channels, stream.block, stream.search,
                       len(stream.gops))]
    for gop in stream.gops:
        out.append(struct.pack("<B", gop.num_frames))
        out.append(gop.iframe.tobytes())
        for mv, resid in gop.pframes:
            out.append(mv.astype("<i1").tobytes())
            out.append(resid.astype("<i2").tobytes())
    return b"".join(out)


def parse(blob: bytes) -> CompressedStream:
    """Parse and validate a serialized stream; errors carry byte offsets."""
    if blob[:4] != STREAM_MAGIC:
        raise StreamParseError(f"bad magic {blob[:4]!r} at offset 0")
    header_len = 4 + struct.calcsize("<HHHBBBI")
    if len(blob) < header_len:
        raise StreamParseError(f"truncated header at offset {len(blob)}")
    version, w, h, c, block, search, n_gops = struct.unpack_from("<HHHBBBI", blob, 4)
    if version != STREAM_VERSION:
        raise StreamParseError(f"unsupported version {version} at offset 4")
    if c not in (1, 3):
        raise StreamParseError(f"bad channel count {c} at offset 10")
    if block < 1 or h % block or w % block:
        raise StreamParseError(f"block size {block} incompatible with {h}x{w} at offset 11")
    off = header_len
    stream = CompressedStream(width=w, height=h, channels=c, block=block, search=search)
    npix = h * w * c
    nblocks = (h // block) * (w // block)
    for gi in range(n_gops):
        if off + 1 > len(blob):
            raise StreamParseError(f"missing frame count for GOP {gi} at offset {off}")
        (k,) = struct.unpack_from("<B", blob, off)
        off += 1
        if k < 1:
            raise StreamParseError(f"GOP {gi} frame count 0 at offset {off - 1}")
        if off + npix > len(blob):
            raise StreamParseError(f"truncated I-frame of GOP {gi} at offset {off}")
        iframe = np.frombuffer(blob, dtype=np.uint8, count=npix, offset=off)
        iframe = iframe.reshape(h, w, c).copy()
        off += npix
        gop = Gop(iframe=iframe)
        for pi in range(k - 1):
            if off + 2 * nblocks > len(blob):
                raise StreamParseError(
                    f"truncated motion field (GOP {gi}, P-frame {pi}) at offset {off}")
            mv = np.frombuffer(blob, dtype="<i1", count=2 * nblocks, offset=off)
            mv = mv.astype(np.int64).reshape(h // block, w // block, 2)
            if np.any(np.abs(mv) > search):
                bad = int(np.argmax(np.abs(mv.reshape(-1)) > search))
                raise StreamParseError(
                    f"motion value exceeds search range {search} at offset {off + bad}")
            off += 2 * nblocks
            if off + 2 * npix > len(blob):
                raise StreamParseError(
                    f"truncated residual (GOP {gi}, P-frame {pi}) at offset {off}")
            resid = np.frombuffer(blob, dtype="<i2", count=npix, offset=off)
            resid = resid.astype(np.int16).reshape(h, w, c)
            if np.any(resid < -255) or np.any(resid > 255):
                bad = int(np.argmax((resid.reshape(-1) < -255) | (resid.reshape(-1) > 255)))
                raise StreamParseError(
                    f"residual value out of [-255, 255] at offset {off + 2 * bad}")
            off += 2 * npix
            gop.pframes.append((mv, resid))
        stream.gops.append(gop)
    if off != len(blob):
        raise StreamParseError(f"{len(blob) - off} trailing bytes at offset {off}")
    return stream


# ---------------------------------------------------------------------------
# raw video container

def serialize_raw_video(video: np.ndarray) -> bytes:
    """Raw container: magic "MFRV", version u16, frame_count u32, W u16,
    H u16, C u8, then frames as raw bytes."""
    video = np.asarray(video)
    if video.ndim != 4 or video.dtype != np.uint8:
        raise ValueError(f"expected uint8 (F, H, W, C) video, got {video.shape} {video.dtype}")
    f, h, w, c = video.shape
    return (RAW_MAGIC + struct.pack("<HIHHB", RAW_VERSION, f, w, h, c)
            + video.tobytes())


def parse_raw_video(blob: bytes) -> np.ndarray:
    if blob[:4] != RAW_MAGIC:
        raise StreamParseError(f"bad magic {blob[:4]!r} at offset 0")
    header_len = 4 + struct.calcsize("<HIHHB")
    if len(blob) < header_len:
        raise StreamParseError(f"truncated header at offset {len(blob)}")
    version, f, w, h, c = struct.unpack_from("<HIHHB", blob, 4)
    if version != RAW_VERSION:
        raise StreamParseError(f"unsupported version {version} at offset 4")
    need = f * h * w * c
    if len(blob) != header_len + need:
        raise StreamParseError(
            f"payload length {len(blob) - header_len} != expected {need} at offset {header_len}")
    return np.frombuffer(blob, dtype=np.uint8, offset=header_len).reshape(f, h, w, c).copy()


def write_raw_video(path, video: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_raw_video(video))


def read_raw_video(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_raw_video(fh.read())
