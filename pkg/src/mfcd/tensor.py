"""Minimal dense tensor with reverse-mode automatic differentiation.

Provides exactly the layer operations the video models need: grouped 3-D
convolution, ReLU, global average pooling, affine (linear) layers,
log-softmax, per-channel normalization, and a handful of elementwise
helpers for building loss functions.  Tensors wrap row-major numpy arrays
(float64 by default, float32 allowed for training) and record operations
on a tape so that ``backward`` can fill in leaf gradients.

No broadcasting beyond bias-add: shape mismatches are hard errors.
Every forward and backward result is checked for NaN/Inf.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from itertools import product
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "Tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "exp",
    "sum_all",
    "relu",
    "conv3d",
    "conv3d_direct",
    "global_avg_pool",
    "linear",
    "log_softmax",
    "channel_norm",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

_FLOAT_TYPES = (np.float32, np.float64)

# When False (inside no_grad()), ops do not record tape entries.
_grad_enabled = True


@contextmanager
def no_grad():
    """Context manager disabling tape recording (e.g. teacher forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op}: non-finite value produced")


class Tensor:
    """Dense n-dimensional tensor node on an autodiff tape.

    Parameters are leaves created with ``requires_grad=True``; their
    ``grad`` buffer is zero-initialized and accumulated into by
    ``backward``.  Data is immutable by convention after construction
    (optimizers update parameter ``data`` in place between tapes).
    """

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _bwd: Optional[Callable] = None, _op: str = "leaf"):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        _check_finite(arr, _op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(arr) if self.requires_grad and _bwd is None else None
        )
        self._parents = _parents
        self._bwd = _bwd
        self._op = _op
        self._backward_done = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """New leaf sharing this tensor's values, cut off from the tape."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)
        self._backward_done = False

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad leaf.

        The tensor must be scalar.  Calling backward twice on the same
        tensor without a reset is an error.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError("backward already called on this tensor; reset first")
        self._backward_done = True

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._bwd is None:
                if node.requires_grad:
                    node.grad += g
                continue
            parent_grads = node._bwd(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                _check_finite(pg, f"{node._op}.backward")
                key = id(parent)
                if key in grads:
                    grads[key] += pg
                else:
                    grads[key] = pg


def _topo_order(root: Tensor) -> list:
    """Iterative post-order over the tape; inputs precede their consumers."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _result(data: np.ndarray, parents: tuple, bwd: Callable, op: str) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _bwd=bwd, _op=op)
    return Tensor(data, _op=op)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise / reduction helpers

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b),
                   lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.asarray(a.data.sum(dtype=a.data.dtype))
    return _result(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")


def relu(x: Tensor) -> Tensor:
    """Elementwise max(x, 0); subgradient at 0 is 0."""
    x = _as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,),
                   lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------------------
# layer operations

def _conv_out_len(n: int, k: int, pad: int, stride: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 ints, got {v!r}")
    return t


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride=(1, 1, 1), padding=(0, 0, 0), groups: int = 1) -> Tensor:
    """Grouped 3-D convolution (cross-correlation) over [N,Cin,T,H,W].

    Output channel o reads only input-channel group floor(o / (Cout/g)).
    Vectorized fast path; ``conv3d_direct`` is the loop reference it must
    agree with.
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    stride, padding = _triple(stride), _triple(padding)
    if any(s < 1 for s in stride):
        raise ValueError(f"conv3d: stride must be >= 1 per axis, got {stride}")
    if x.data.ndim != 5:
        raise ValueError(f"conv3d: input must be 5-D [N,Cin,T,H,W], got {x.shape}")
    if weight.data.ndim != 5:
        raise ValueError(f"conv3d: weight must be 5-D [Cout,Cin/g,kt,kh,kw], got {weight.shape}")
    n, cin, t, h, w = x.shape
    cout, cin_g, kt, kh, kw = weight.shape
    if groups < 1 or cin % groups != 0 or cout % groups != 0:
        raise ValueError(
            f"conv3d: groups={groups} must divide Cin={cin} and Cout={cout}")
    if cin_g != cin // groups:
        raise ValueError(
            f"conv3d: weight expects Cin/g={cin_g} input channels per group, "
            f"but Cin={cin} with groups={groups} gives {cin // groups}")
    to = _conv_out_len(t, kt, padding[0], stride[0])
    ho = _conv_out_len(h, kh, padding[1], stride[1])
    wo = _conv_out_len(w, kw, padding[2], stride[2])
    if to < 1 or ho < 1 or wo < 1:
        raise ValueError(
            f"conv3d: kernel {(kt, kh, kw)} with padding {padding} does not fit "
            f"input {(t, h, w)}")
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (cout,):
            raise ValueError(f"conv3d: bias shape {bias.shape} != ({cout},)")

    g = groups
    cout_g = cout // g
    pt, ph, pw = padding
    st, sh, sw = stride
    nk = kt * kh * kw
    offsets = list(product(range(kt), range(kh), range(kw)))
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))

    if nk > 1:
        # Spatial kernel: compiled loop kernels beat im2col here because the
        # patch gather dominates (27 strided copies of the whole activation).
        bias_vec = bias.data if bias is not None else np.zeros(cout, dtype=x.dtype)
        out = np.empty((n, cout, to, ho, wo), dtype=x.dtype)
        _kernels.conv3d_forward(xp, weight.data, bias_vec, out,
                                st, sh, sw, cout_g, cin_g)

        def bwd_k(gout: np.ndarray):
            gout = np.ascontiguousarray(gout)
            gxp = np.zeros_like(xp)
            _kernels.conv3d_backward_input(gxp, weight.data, gout,
                                           st, sh, sw, cout_g, cin_g)
            gx = np.ascontiguousarray(gxp[:, :, pt:pt + t, ph:ph + h, pw:pw + w])
            gw = np.zeros_like(weight.data)
            _kernels.conv3d_backward_weight(gw, xp, gout,
                                            st, sh, sw, cout_g, cin_g)
            grads = [gx, gw]
            if bias is not None:
                grads.append(gout.sum(axis=(0, 2, 3, 4)))
            return tuple(grads)

        parents = (x, weight) if bias is None else (x, weight, bias)
        return _result(out, parents, bwd_k, "conv3d")

    # Channels-last padded copy: offset slices then have a contiguous
    # channel axis, so gathering patch columns is cheap and the per-group
    # contraction becomes a single BLAS matmul.
    xl = np.ascontiguousarray(xp.transpose(0, 2, 3, 4, 1))

    def _gather_cols() -> np.ndarray:
        cols = np.empty((n, to, ho, wo, g, nk, cin_g), dtype=x.dtype)
        for idx, (i, j, k) in enumerate(offsets):
            xs = xl[:,
                    i:i + (to - 1) * st + 1:st,
                    j:j + (ho - 1) * sh + 1:sh,
                    k:k + (wo - 1) * sw + 1:sw, :]
            cols[:, :, :, :, :, idx, :] = xs.reshape(n, to, ho, wo, g, cin_g)
        return cols

    # weight as per-group (nk*cin_g, cout_g) matrices, offset-major rows
    wmat = np.ascontiguousarray(
        weight.data.reshape(g, cout_g, cin_g, nk)
        .transpose(0, 3, 2, 1)).reshape(g, nk * cin_g, cout_g)

    cols = _gather_cols()
    out_l = np.empty((n, to, ho, wo, g, cout_g), dtype=x.dtype)
    flat = cols.reshape(n * to * ho * wo, g, nk * cin_g)
    for gi in range(g):
        out_l[..., gi, :] = (flat[:, gi] @ wmat[gi]).reshape(n, to, ho, wo, cout_g)
    del cols, flat
    out = np.ascontiguousarray(
        out_l.reshape(n, to, ho, wo, cout).transpose(0, 4, 1, 2, 3))
    if bias is not None:
        out += bias.data.reshape(1, cout, 1, 1, 1)

    def bwd(gout: np.ndarray):
        gol = np.ascontiguousarray(gout.transpose(0, 2, 3, 4, 1))
        gol = gol.reshape(n * to * ho * wo, g, cout_g)
        cols = _gather_cols()
        cflat = cols.reshape(n * to * ho * wo, g, nk * cin_g)
        gw = np.empty_like(wmat)
        gcols = np.empty_like(cols)
        gcflat = gcols.reshape(n * to * ho * wo, g, nk * cin_g)
        for gi in range(g):
            gw[gi] = cflat[:, gi].T @ gol[:, gi]
            gcflat[:, gi] = gol[:, gi] @ wmat[gi].T
        del cols, cflat
        # col2im: scatter the patch gradients back through each offset
        gxl = np.zeros_like(xl)
        gxl_g = gxl.reshape(n, *xl.shape[1:4], g, cin_g)
        for idx, (i, j, k) in enumerate(offsets):
            gxl_g[:,
                  i:i + (to - 1) * st + 1:st,
                  j:j + (ho - 1) * sh + 1:sh,
                  k:k + (wo - 1) * sw + 1:sw] += gcols[:, :, :, :, :, idx, :]
        gx = gxl[:, pt:pt + t, ph:ph + h, pw:pw + w, :]
        gx = np.ascontiguousarray(gx.transpose(0, 4, 1, 2, 3))
        gwt = gw.reshape(g, nk, cin_g, cout_g).transpose(0, 3, 2, 1)
        gwt = gwt.reshape(cout, cin_g, nk).reshape(cout, cin_g, kt, kh, kw)
        grads = [gx, np.ascontiguousarray(gwt)]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3, 4)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bwd, "conv3d")


def conv3d_direct(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray],
                  stride=(1, 1, 1), padding=(0, 0, 0), groups: int = 1) -> np.ndarray:
    """Direct nested-loop 3-D convolution reference (forward only).

    Slow; used to validate the vectorized path.
    """
    stride, padding = _triple(stride), _triple(padding)
    n, cin, t, h, w = x.shape
    cout, cin_g, kt, kh, kw = weight.shape
    to = _conv_out_len(t, kt, padding[0], stride[0])
    ho = _conv_out_len(h, kh, padding[1], stride[1])
    wo = _conv_out_len(w, kw, padding[2], stride[2])
    cout_g = cout // groups
    xp = np.pad(x, ((0, 0), (0, 0), (padding[0],) * 2, (padding[1],) * 2,
                    (padding[2],) * 2))
    out = np.zeros((n, cout, to, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for o in range(cout):
            gi = o // cout_g
            c0 = gi * cin_g
            for ti in range(to):
                for hi in range(ho):
                    for wi in range(wo):
                        acc = 0.0
                        for c in range(cin_g):
                            for i in range(kt):
                                for j in range(kh):
                                    for k in range(kw):
                                        acc += (xp[ni, c0 + c,
                                                   ti * stride[0] + i,
                                                   hi * stride[1] + j,
                                                   wi * stride[2] + k]
                                                * weight[o, c, i, j, k])
                        out[ni, o, ti, hi, wi] = acc
    if bias is not None:
        out += bias.reshape(1, cout, 1, 1, 1)
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over (T, H, W): [N,C,T,H,W] -> [N,C]."""
    x = _as_tensor(x)
    if x.data.ndim != 5:
        raise ValueError(f"global_avg_pool: expected 5-D input, got {x.shape}")
    n, c, t, h, w = x.shape
    m = t * h * w
    out = x.data.mean(axis=(2, 3, 4))

    def bwd(g):
        return (np.broadcast_to(g.reshape(n, c, 1, 1, 1) / m, x.shape).copy(),)

    return _result(out, (x,), bwd, "global_avg_pool")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map x @ W.T + b with x [N,Din], W [Dout,Din], b [Dout]."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ValueError(
            f"linear: expected 2-D x and weight, got {x.shape} and {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"linear: inner dimensions disagree, x {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        bias = _as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
        out = out + bias.data

    def bwd(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, bwd, "linear")


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax over the last axis of [N,D]."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"log_softmax: expected 2-D input, got {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bwd(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), bwd, "log_softmax")


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor,
                 batch_stats: bool = False, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization with affine scale/shift over [N,C,T,H,W].

    Default mode keeps statistics frozen at identity (mean 0, variance 1),
    so the layer is a pure per-channel affine map — deterministic for
    evaluation.  ``batch_stats=True`` normalizes by the batch mean/variance
    per channel before the affine map.
    """
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if x.data.ndim != 5:
        raise ValueError(f"channel_norm: expected 5-D input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"channel_norm: gamma/beta must have shape ({c},), got "
            f"{gamma.shape} and {beta.shape}")
    axes = (0, 2, 3, 4)
    gsh = (1, c, 1, 1, 1)

    if not batch_stats:
        out = x.data * gamma.data.reshape(gsh) + beta.data.reshape(gsh)

        def bwd(g):
            return (g * gamma.data.reshape(gsh),
                    (g * x.data).sum(axis=axes),
                    g.sum(axis=axes))

        return _result(out, (x, gamma, beta), bwd, "channel_norm")

    m = x.data.size // c
    mu = x.data.mean(axis=axes, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    istd = 1.0 / np.sqrt(var + eps)
    xhat = xc * istd
    out = xhat * gamma.data.reshape(gsh) + beta.data.reshape(gsh)

    def bwd(g):
        gxhat = g * gamma.data.reshape(gsh)
        # standard batch-norm input gradient
        gx = (istd / m) * (
            m * gxhat
            - gxhat.sum(axis=axes, keepdims=True)
            - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True))
        return (gx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

    return _result(out, (x, gamma, beta), bwd, "channel_norm")


# ---------------------------------------------------------------------------
# parameter checkpoint format

CHECKPOINT_MAGIC = b"MFCDW"
CHECKPOINT_VERSION = 1


def save_checkpoint(params: Iterable[tuple[str, np.ndarray]]) -> bytes:
    """Serialize named parameters (stored as little-endian float32).

    Layout: magic "MFCDW", version u16, count u32, then per parameter:
    name length u16 + UTF-8 name, rank u8, extents u32 each, raw values.
    """
    items = list(params)
    chunks = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(items))]
    for name, arr in items:
        raw = np.ascontiguousarray(arr, dtype="<f4")
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", raw.ndim))
        chunks.append(struct.pack(f"<{raw.ndim}I", *raw.shape))
        chunks.append(raw.tobytes())
    return b"".join(chunks)


def load_checkpoint(blob: bytes) -> dict[str, np.ndarray]:
    """Inverse of save_checkpoint; bit-exact on float32 values."""
    if blob[:5] != CHECKPOINT_MAGIC:
        raise ValueError(f"checkpoint: bad magic {blob[:5]!r} at offset 0")
    off = 5
    version, count = struct.unpack_from("<HI", blob, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint: unsupported version {version}")
    off += 6
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        n = int(np.prod(shape)) if rank else 1
        end = off + 4 * n
        if end > len(blob):
            raise ValueError(f"checkpoint: truncated data for {name!r} at offset {off}")
        out[name] = np.frombuffer(blob[off:end], dtype="<f4").reshape(shape).copy()
        off = end
    if off != len(blob):
        raise ValueError(f"checkpoint: {len(blob) - off} trailing bytes at offset {off}")
    return out
