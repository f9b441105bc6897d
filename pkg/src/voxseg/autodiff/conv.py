"""3D convolution and trilinear upsampling, differentiable.

Layout is channels-last throughout: activations (H, W, D, C), kernels
(kh, kw, kd, Cin, Cout). The shipped conv3d lowers patch extraction to a
single GEMM (im2col); ``conv3d_reference`` is the direct-loop oracle the
fast path is validated against (agreement within 1e-5 relative).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import (
    InvalidAxisError,
    ShapeMismatchError,
    Tensor,
    _check_inputs,
    _make,
)


def _triple(v, name):
    if isinstance(v, (int, np.integer)):
        v = (v, v, v)
    v = tuple(int(x) for x in v)
    if len(v) != 3 or any(x < 0 for x in v):
        raise InvalidAxisError(f"{name}: need three non-negative integers, got {v}")
    return v


def _conv_out_dims(in_dims, kdims, stride, padding):
    out = []
    for n, k, s, p in zip(in_dims, kdims, stride, padding):
        span = n + 2 * p - k
        if span < 0 or s < 1:
            raise ShapeMismatchError(
                f"conv3d: kernel {kdims} with padding {padding} exceeds input {in_dims}"
            )
        out.append(span // s + 1)
    return tuple(out)


def _pad_spatial(x, padding):
    ph, pw, pd = padding
    if ph == pw == pd == 0:
        return x
    return np.pad(x, ((ph, ph), (pw, pw), (pd, pd), (0, 0)))


def _im2col(xp, kdims, stride, out_dims):
    """(Hp, Wp, Dp, Ci) -> (Ho*Wo*Do, kh*kw*kd*Ci) patch matrix."""
    kh, kw, kd = kdims
    sh, sw, sd = stride
    win = sliding_window_view(xp, (kh, kw, kd), axis=(0, 1, 2))
    win = win[::sh, ::sw, ::sd]  # (Ho, Wo, Do, Ci, kh, kw, kd)
    cols = win.transpose(0, 1, 2, 4, 5, 6, 3)  # kernel taps before channels
    n = out_dims[0] * out_dims[1] * out_dims[2]
    return np.ascontiguousarray(cols).reshape(n, -1)


def conv3d(x, w, stride=1, padding=0):
    """Strided 3D convolution (cross-correlation), channels-last.

    x: (H, W, D, Cin); w: (kh, kw, kd, Cin, Cout). Output dims follow the
    floor convention (H + 2p - k) // s + 1.
    """
    _check_inputs("conv3d", x, w)
    if x.data.ndim != 4 or w.data.ndim != 5:
        raise ShapeMismatchError(
            f"conv3d: expected rank-4 input and rank-5 kernel, got {x.data.ndim}/{w.data.ndim}"
        )
    if x.data.shape[3] != w.data.shape[3]:
        raise ShapeMismatchError(
            f"conv3d: input channels {x.data.shape[3]} != kernel channels {w.data.shape[3]}"
        )
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    if any(s < 1 for s in stride):
        raise InvalidAxisError("conv3d: stride components must be >= 1")
    kdims = w.data.shape[:3]
    cout = w.data.shape[4]
    out_dims = _conv_out_dims(x.data.shape[:3], kdims, stride, padding)

    xp = _pad_spatial(x.data, padding)
    cols = _im2col(xp, kdims, stride, out_dims)
    wmat = w.data.reshape(-1, cout)
    data = (cols @ wmat).reshape(out_dims + (cout,))

    def bw(g):
        gmat = g.reshape(-1, cout)
        if w.requires_grad:
            # im2col is recomputed from the cached padded input: trades one
            # patch-copy for not holding the (N, K) matrix across the step.
            cols_b = _im2col(xp, kdims, stride, out_dims)
            w._accum((cols_b.T @ gmat).reshape(w.data.shape))
        if x.requires_grad:
            gx = np.zeros_like(xp)
            gout = g  # (Ho, Wo, Do, Cout)
            sh, sw, sd = stride
            ho, wo, do = out_dims
            for i in range(kdims[0]):
                for j in range(kdims[1]):
                    for k in range(kdims[2]):
                        contrib = gout @ w.data[i, j, k].T  # (Ho, Wo, Do, Cin)
                        gx[
                            i : i + sh * ho : sh,
                            j : j + sw * wo : sw,
                            k : k + sd * do : sd,
                        ] += contrib
            ph, pw, pd = padding
            h, wdt, d = x.data.shape[:3]
            x._accum(gx[ph : ph + h, pw : pw + wdt, pd : pd + d])

    return _make(data, (x, w), bw)


def conv3d_reference(x, w, stride=1, padding=0):
    """Direct-loop forward oracle over plain arrays; small inputs only."""
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    x = np.asarray(x)
    w = np.asarray(w)
    kh, kw, kd = w.shape[:3]
    cin, cout = w.shape[3], w.shape[4]
    assert x.shape[3] == cin
    out_dims = _conv_out_dims(x.shape[:3], (kh, kw, kd), stride, padding)
    xp = _pad_spatial(x, padding)
    out = np.zeros(out_dims + (cout,), dtype=x.dtype)
    sh, sw, sd = stride
    for a in range(out_dims[0]):
        for b in range(out_dims[1]):
            for c in range(out_dims[2]):
                for i in range(kh):
                    for j in range(kw):
                        for k in range(kd):
                            px = xp[a * sh + i, b * sw + j, c * sd + k]  # (Cin,)
                            out[a, b, c] += px @ w[i, j, k]
    return out


def _interp_weights(n_in, factor):
    """(n_in*factor, n_in) row-stochastic linear interpolation matrix.

    Output sample o reads source coordinate (o + 0.5)/factor − 0.5, clamped
    at the ends (half-pixel-center convention).
    """
    n_out = n_in * factor
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        src = (o + 0.5) / factor - 0.5
        i0 = int(np.floor(src))
        frac = src - i0
        i0c = min(max(i0, 0), n_in - 1)
        i1c = min(max(i0 + 1, 0), n_in - 1)
        mat[o, i0c] += 1.0 - frac
        mat[o, i1c] += frac
    return mat


def _apply_axis(mat, arr, axis):
    moved = np.moveaxis(arr, axis, 0)
    flat = mat @ moved.reshape(moved.shape[0], -1)
    flat = flat.reshape((mat.shape[0],) + moved.shape[1:])
    return np.moveaxis(flat, 0, axis)


def trilinear_upsample(x, factor):
    """Upsample (H, W, D, C) by integer per-axis factors, trilinear."""
    _check_inputs("trilinear_upsample", x)
    if x.data.ndim != 4:
        raise ShapeMismatchError("trilinear_upsample: expected rank-4 input")
    fh, fw, fd = _triple(factor, "factor")
    if min(fh, fw, fd) < 1:
        raise InvalidAxisError("trilinear_upsample: factors must be >= 1")
    dtype = x.data.dtype
    mats = [
        _interp_weights(x.data.shape[i], f).astype(dtype)
        for i, f in enumerate((fh, fw, fd))
    ]
    data = x.data
    for axis, mat in enumerate(mats):
        if mat.shape[0] != mat.shape[1]:
            data = _apply_axis(mat, data, axis)
    data = data.copy() if data is x.data else np.ascontiguousarray(data)

    def bw(g):
        gx = g
        for axis, mat in enumerate(mats):
            if mat.shape[0] != mat.shape[1]:
                gx = _apply_axis(mat.T, gx, axis)
        x._accum(np.ascontiguousarray(gx))

    return _make(data, (x,), bw)
