"""Independent reference implementations used as test oracles.

Everything here is written as plain scalar loops (or the obvious closed
form) so it shares no code path with the package under test.  Slow is fine;
inputs stay tiny.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_direct(x, w, b=None, padding="same", stride=1):
    """Direct six-loop convolution of [N,Cin,H,W] with [Cout,Cin,kH,kW]."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    if padding == "same":
        ph, pw = kh // 2, kw // 2
    else:
        ph = pw = 0
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (wd + 2 * pw - kw) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for co in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ci in range(cin):
                        for i in range(kh):
                            for j in range(kw):
                                yy = y * stride + i - ph
                                xj = xx * stride + j - pw
                                if 0 <= yy < h and 0 <= xj < wd:
                                    acc += x[ni, ci, yy, xj] * w[co, ci, i, j]
                    out[ni, co, y, xx] = acc + (b[co] if b is not None else 0.0)
    return out


def conv2d_transpose_direct(x, w, stride=1, padding="same"):
    """Expand-then-sum transposed convolution of [N,Cin,H,W] with [Cin,Cout,kH,kW].

    Every input value is stamped into the output through the kernel at
    stride offsets; this is the scatter view of the adjoint convolution.
    """
    n, cin, h, wd = x.shape
    _, cout, kh, kw = w.shape
    if padding == "same":
        ph, pw = (kh - stride) // 2, (kw - stride) // 2
        oh, ow = h * stride, wd * stride
    else:
        ph = pw = 0
        oh, ow = (h - 1) * stride + kh, (wd - 1) * stride + kw
    out = np.zeros((n, cout, oh, ow))
    for ni in range(n):
        for ci in range(cin):
            for y in range(h):
                for xx in range(wd):
                    for co in range(cout):
                        for i in range(kh):
                            for j in range(kw):
                                oy = y * stride + i - ph
                                ox = xx * stride + j - pw
                                if 0 <= oy < oh and 0 <= ox < ow:
                                    out[ni, co, oy, ox] += x[ni, ci, y, xx] * w[ci, co, i, j]
    return out


def _apply_activation(v, kind):
    if kind == "sigmoid":
        return 1.0 / (1.0 + math.exp(-v))
    if kind == "tanh":
        return math.tanh(v)
    if kind == "relu":
        return max(v, 0.0)
    if kind == "identity":
        return v
    raise ValueError(kind)


def ldc_direct(x, w, b, w1, w2, activation="identity"):
    """Scalar-loop transcription of the location-dependent convolution,
    A(conv(x) + b + W1'(y,x) + W2'(y,x)) with the maps shared over channels."""
    pre = conv2d_direct(x, w, b, padding="same")
    n, cout, oh, ow = pre.shape
    out = np.zeros_like(pre)
    for ni in range(n):
        for co in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    out[ni, co, y, xx] = _apply_activation(
                        pre[ni, co, y, xx] + w1[y, xx] + w2[y, xx], activation
                    )
    return out


def ldcai_direct(x, w, b, w1, w2, lx, ly, activation="identity"):
    """Scalar-loop transcription of the combined variant,
    A(conv(x) + b + (Lx + W1') + (Ly + W2'))."""
    pre = conv2d_direct(x, w, b, padding="same")
    n, cout, oh, ow = pre.shape
    out = np.zeros_like(pre)
    for ni in range(n):
        for co in range(cout):
            for y in range(oh):
                for xx in range(ow):
                    out[ni, co, y, xx] = _apply_activation(
                        pre[ni, co, y, xx]
                        + (lx[y, xx] + w1[y, xx])
                        + (ly[y, xx] + w2[y, xx]),
                        activation,
                    )
    return out


def bce_direct(pred, target, eps=1e-7):
    """Scalar-loop BCE: per-sequence pixel sum, mean over the batch axis."""
    n = pred.shape[0]
    pf = pred.reshape(n, -1)
    tf = target.reshape(n, -1)
    total = 0.0
    for ni in range(n):
        s = 0.0
        for k in range(pf.shape[1]):
            p = min(max(pf[ni, k], eps), 1.0 - eps)
            t = tf[ni, k]
            s -= t * math.log(p) + (1.0 - t) * math.log(1.0 - p)
        total += s
    return total / n


def finite_difference(loss_fn, array, step=1e-5):
    """Central-difference gradient of loss_fn() w.r.t. every element of array.

    loss_fn must re-evaluate the full forward pass; array is mutated in
    place element by element and restored.
    """
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + step
        hi = loss_fn()
        array[idx] = orig - step
        lo = loss_fn()
        array[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad


def max_rel_err(analytic, numeric):
    """max |a-n| / max(1, |a|, |n|), elementwise."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom))


def simulate_motion_scalar(pos, vel, inset, size, extent, steps):
    """Pure-scalar bounce simulation; returns positions and per-axis sign
    flip counts.  Mirrors sit at `inset` from each border; the bounding box
    [pos, pos+extent) reflects off them."""
    x, y = pos
    vx, vy = vel
    lo_x, hi_x = float(inset), float(size[1] - inset - extent[1])
    lo_y, hi_y = float(inset), float(size[0] - inset - extent[0])
    flips = [0, 0]
    trace = [(x, y)]
    for _ in range(steps):
        x += vx
        if x < lo_x:
            x = 2 * lo_x - x
            vx = -vx
            flips[0] += 1
        elif x > hi_x:
            x = 2 * hi_x - x
            vx = -vx
            flips[0] += 1
        y += vy
        if y < lo_y:
            y = 2 * lo_y - y
            vy = -vy
            flips[1] += 1
        elif y > hi_y:
            y = 2 * hi_y - y
            vy = -vy
            flips[1] += 1
        trace.append((x, y))
    return trace, flips
