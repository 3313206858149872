"""Compressed-domain data modeling.

Back-traces block motion to the I-frame, accumulates residuals so every
P-frame references the I-frame directly, forms augmented residuals
(accumulated residual averaged with the I-frame), and assembles
network-ready clips in four formats:

- FULL:       [U0/255, Rhat_1, ..., Rhat_{K-1}] with Rhat = (Rbar + U0)/(2*255)
- I_PLUS_RES: [U0/255, Rbar_1/255, ..., Rbar_{K-1}/255]
- RES_ONLY:   [Rbar_1/255, Rbar_1/255, Rbar_2/255, ..., Rbar_{K-1}/255]
- RAW:        [X_0/255, ..., X_{K-1}/255]

The accumulation recursion is validated by an exact per-pixel identity:
reconstructing each frame as I-frame content fetched through the
accumulated displacement plus the accumulated residual must reproduce the
decoder's output bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .codec import Gop, StreamParseError

__all__ = [
    "FULL",
    "I_PLUS_RES",
    "RES_ONLY",
    "RAW",
    "CLIP_FORMATS",
    "AccumulatedGop",
    "accumulate",
    "augment_residuals",
    "assemble_clip",
    "reconstruct",
    "serialize_clip",
    "parse_clip",
    "write_clip",
    "read_clip",
]

FULL = "full"
I_PLUS_RES = "ires"
RES_ONLY = "res"
RAW = "raw"
CLIP_FORMATS = (FULL, I_PLUS_RES, RES_ONLY, RAW)

CLIP_MAGIC = b"MFCT"
CLIP_VERSION = 1
_FORMAT_TAGS = {FULL: 0, I_PLUS_RES: 1, RES_ONLY: 2, RAW: 3}
_TAG_FORMATS = {v: k for k, v in _FORMAT_TAGS.items()}


@dataclass
class AccumulatedGop:
    """I-frame plus per-step accumulated displacement and residual.

    disp[k-1] holds the per-pixel integer (dy, dx) such that the source
    pixel in the I-frame for step k is (y - dy, x - dx); resid[k-1] holds
    the accumulated residual, each value in [-255, 255].
    """
    iframe: np.ndarray            # (H, W, C) uint8
    disp: np.ndarray              # (K-1, H, W, 2) int64
    resid: np.ndarray             # (K-1, H, W, C) int16

    @property
    def num_frames(self) -> int:
        return 1 + self.disp.shape[0]


def accumulate(gop: Gop, block: int) -> AccumulatedGop:
    """Compose block motion and residuals back to the I-frame.

    Per-pixel recursion (coordinates clamped exactly as the codec's warp):
    the source map of step k is the step-(k-1) source map sampled at the
    motion-displaced location, and the accumulated residual is the
    previous accumulated residual sampled the same way plus the step
    residual.  Step 1 therefore equals the raw step-1 fields.
    """
    h, w, c = gop.iframe.shape
    k1 = len(gop.pframes)
    yy, xx = np.mgrid[0:h, 0:w]
    src_y, src_x = yy.copy(), xx.copy()     # accumulated source map into the I-frame
    rbar = np.zeros((h, w, c), dtype=np.int32)
    disp = np.zeros((k1, h, w, 2), dtype=np.int64)
    resid = np.zeros((k1, h, w, c), dtype=np.int16)
    for k, (mv, r) in enumerate(gop.pframes):
        if mv.shape != (h // block, w // block, 2):
            raise ValueError(
                f"accumulate: motion grid {mv.shape} does not match "
                f"{h}x{w} frame with block {block}")
        dy = np.repeat(np.repeat(mv[:, :, 0], block, axis=0), block, axis=1)
        dx = np.repeat(np.repeat(mv[:, :, 1], block, axis=0), block, axis=1)
        sy = np.clip(yy + dy, 0, h - 1)
        sx = np.clip(xx + dx, 0, w - 1)
        src_y, src_x = src_y[sy, sx], src_x[sy, sx]
        rbar = rbar[sy, sx] + r
        disp[k, :, :, 0] = yy - src_y
        disp[k, :, :, 1] = xx - src_x
        resid[k] = rbar
    return AccumulatedGop(iframe=gop.iframe, disp=disp, resid=resid)


def reconstruct(acc: AccumulatedGop) -> np.ndarray:
    """Rebuild every frame directly from the I-frame via the accumulated
    fields; must equal the decoder's output bit-exactly."""
    h, w, _ = acc.iframe.shape
    yy, xx = np.mgrid[0:h, 0:w]
    frames = [acc.iframe]
    for k in range(acc.disp.shape[0]):
        sy = yy - acc.disp[k, :, :, 0]
        sx = xx - acc.disp[k, :, :, 1]
        frame = acc.iframe[sy, sx].astype(np.int32) + acc.resid[k]
        frames.append(np.clip(frame, 0, 255).astype(np.uint8))
    return np.stack(frames)


def augment_residuals(acc: AccumulatedGop) -> np.ndarray:
    """(Rbar/255 + U0/255) / 2 per pixel, no clamping; shape (K-1, H, W, C).

    Output range is within [-0.5, 1.0]."""
    u0 = acc.iframe.astype(np.float64) / 255.0
    rbar = acc.resid.astype(np.float64) / 255.0
    return (rbar + u0[None]) / 2.0


def assemble_clip(gop: Gop, clip_format: str, block: int,
                  raw: np.ndarray | None = None) -> np.ndarray:
    """Assemble a (C, K, H, W) float clip in the requested format.

    RAW requires the source raw video; RES_ONLY duplicates the first
    accumulated residual so the time length stays K.
    """
    if clip_format not in CLIP_FORMATS:
        raise ValueError(f"unknown clip format {clip_format!r}; expected one of {CLIP_FORMATS}")
    k = gop.num_frames
    if clip_format == RAW:
        if raw is None:
            raise ValueError("RAW clip format requires the raw video")
        raw = np.asarray(raw)
        if raw.shape[0] != k or raw.shape[1:] != gop.iframe.shape:
            raise ValueError(
                f"raw video shape {raw.shape} does not match GOP "
                f"({k} frames of {gop.iframe.shape})")
        frames = raw.astype(np.float64) / 255.0
        return np.ascontiguousarray(frames.transpose(3, 0, 1, 2))

    acc = accumulate(gop, block)
    u0 = gop.iframe.astype(np.float64) / 255.0
    if clip_format == FULL:
        frames = np.concatenate([u0[None], augment_residuals(acc)])
    elif clip_format == I_PLUS_RES:
        rbar = acc.resid.astype(np.float64) / 255.0
        frames = np.concatenate([u0[None], rbar])
    else:  # RES_ONLY
        if acc.disp.shape[0] == 0:
            raise ValueError("RES_ONLY requires at least one P-frame")
        rbar = acc.resid.astype(np.float64) / 255.0
        frames = np.concatenate([rbar[0:1], rbar])
    return np.ascontiguousarray(frames.transpose(3, 0, 1, 2))


# ---------------------------------------------------------------------------
# clip export for debugging

def serialize_clip(clip: np.ndarray, clip_format: str) -> bytes:
    """Clip container: magic "MFCT", version u16, format tag u8, C u8,
    K u8, H u16, W u16, float32 little-endian values row-major."""
    if clip_format not in _FORMAT_TAGS:
        raise ValueError(f"unknown clip format {clip_format!r}")
    clip = np.asarray(clip)
    if clip.ndim != 4:
        raise ValueError(f"expected (C, K, H, W) clip, got {clip.shape}")
    c, k, h, w = clip.shape
    return (CLIP_MAGIC
            + struct.pack("<HBBBHH", CLIP_VERSION, _FORMAT_TAGS[clip_format], c, k, h, w)
            + np.ascontiguousarray(clip, dtype="<f4").tobytes())


def parse_clip(blob: bytes) -> tuple[np.ndarray, str]:
    if blob[:4] != CLIP_MAGIC:
        raise StreamParseError(f"bad magic {blob[:4]!r} at offset 0")
    header_len = 4 + struct.calcsize("<HBBBHH")
    if len(blob) < header_len:
        raise StreamParseError(f"truncated header at offset {len(blob)}")
    version, tag, c, k, h, w = struct.unpack_from("<HBBBHH", blob, 4)
    if version != CLIP_VERSION:
        raise StreamParseError(f"unsupported version {version} at offset 4")
    if tag not in _TAG_FORMATS:
        raise StreamParseError(f"unknown format tag {tag} at offset 6")
    need = 4 * c * k * h * w
    if len(blob) != header_len + need:
        raise StreamParseError(
            f"payload length {len(blob) - header_len} != expected {need} at offset {header_len}")
    clip = np.frombuffer(blob, dtype="<f4", offset=header_len).reshape(c, k, h, w)
    return clip.astype(np.float64), _TAG_FORMATS[tag]


def write_clip(path, clip: np.ndarray, clip_format: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_clip(clip, clip_format))


def read_clip(path) -> tuple[np.ndarray, str]:
    with open(path, "rb") as fh:
        return parse_clip(fh.read())
