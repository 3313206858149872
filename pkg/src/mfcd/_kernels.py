"""Compiled inner loops for the grouped 3-D convolution.

Plain nested loops, JIT-compiled with numba (``fastmath`` off, so the
accumulation order is fixed and results are bitwise reproducible).  The
``tensor`` module routes spatial kernels here and keeps 1x1x1 kernels on
the BLAS matmul path, where im2col is free.
"""
from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["conv3d_forward", "conv3d_backward_input", "conv3d_backward_weight"]


@njit(cache=True)
def conv3d_forward(xp, weight, bias, out, st, sh, sw, cout_g, cin_g):
    """out[n,o] = sum_{c,i,j,k} xp[n, group(o)+c, strided+offset] * w[o,c,i,j,k].

    ``xp`` is the already padded input [N,Cin,Tp,Hp,Wp]; ``out`` is written
    in place.  ``bias`` must be a length-Cout array (zeros when unused).
    """
    cout, _, kt, kh, kw = weight.shape
    n, _, to, ho, wo = out.shape
    for ni in range(n):
        for o in range(cout):
            c0 = (o // cout_g) * cin_g
            for ti in range(to):
                for hi in range(ho):
                    row = np.full(wo, bias[o], dtype=xp.dtype)
                    for c in range(cin_g):
                        for i in range(kt):
                            for j in range(kh):
                                xrow = xp[ni, c0 + c, ti * st + i, hi * sh + j]
                                for k in range(kw):
                                    wv = weight[o, c, i, j, k]
                                    for wi in range(wo):
                                        row[wi] += wv * xrow[wi * sw + k]
                    out[ni, o, ti, hi] = row


@njit(cache=True)
def conv3d_backward_input(gxp, weight, gout, st, sh, sw, cout_g, cin_g):
    """Accumulate d(loss)/d(padded input) into ``gxp`` (zero-initialised)."""
    cout, _, kt, kh, kw = weight.shape
    n, _, to, ho, wo = gout.shape
    for ni in range(n):
        for o in range(cout):
            c0 = (o // cout_g) * cin_g
            for ti in range(to):
                for hi in range(ho):
                    grow = gout[ni, o, ti, hi]
                    for c in range(cin_g):
                        for i in range(kt):
                            for j in range(kh):
                                xrow = gxp[ni, c0 + c, ti * st + i, hi * sh + j]
                                for k in range(kw):
                                    wv = weight[o, c, i, j, k]
                                    for wi in range(wo):
                                        xrow[wi * sw + k] += wv * grow[wi]


@njit(cache=True)
def conv3d_backward_weight(gw, xp, gout, st, sh, sw, cout_g, cin_g):
    """Accumulate d(loss)/d(weight) into ``gw`` (zero-initialised)."""
    cout, _, kt, kh, kw = gw.shape
    n, _, to, ho, wo = gout.shape
    for o in range(cout):
        c0 = (o // cout_g) * cin_g
        for ni in range(n):
            for ti in range(to):
                for hi in range(ho):
                    grow = gout[ni, o, ti, hi]
                    for c in range(cin_g):
                        for i in range(kt):
                            for j in range(kh):
                                xrow = xp[ni, c0 + c, ti * st + i, hi * sh + j]
                                for k in range(kw):
                                    acc = 0.0
                                    for wi in range(wo):
                                        acc += grow[wi] * xrow[wi * sw + k]
                                    gw[o, c, i, j, k] += acc
