"""Differentiable ops on :class:`Tensor`.

Layout convention for sequence data is channel-first ``[batch, channels, time]``.
Elementwise binary ops require identical shapes; the only broadcast allowed
is a per-channel bias (``add_bias``) and per-channel gains inside layers.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, make_output

_LN10 = np.log(10.0)


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return make_output(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return make_output(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_output(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return make_output(a.data * c, (a,), lambda g: (g * c,))


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """Add a ``[C]`` bias along axis 1 of ``x``."""
    if bias.ndim != 1 or bias.shape[0] != x.shape[1]:
        raise ValueError(f"add_bias: bias {bias.shape} does not match channels of {x.shape}")
    shape = (1, -1) + (1,) * (x.ndim - 2)
    red = tuple(i for i in range(x.ndim) if i != 1)
    return make_output(x.data + bias.data.reshape(shape), (x, bias),
                       lambda g: (g, g.sum(axis=red)))


def absolute(x: Tensor) -> Tensor:
    xd = x.data
    return make_output(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return make_output(np.where(pos, x.data, 0.0).astype(x.dtype), (x,),
                       lambda g: (g * pos,))


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """PReLU with a single shared slope (shape ``[1]``) or one per channel."""
    xd, a = x.data, slope.data
    if a.ndim != 1 or a.shape[0] not in (1, x.shape[1]):
        raise ValueError(f"prelu: slope shape {a.shape} incompatible with {x.shape}")
    shape = (1, -1) + (1,) * (x.ndim - 2)
    ab = a.reshape(shape)
    pos = xd > 0
    out = np.where(pos, xd, ab * xd)

    def back(g):
        gx = np.where(pos, g, g * ab)
        ga = np.where(pos, 0.0, g * xd)
        if a.shape[0] == 1:
            ga = np.array([ga.sum()], dtype=a.dtype)
        else:
            ga = ga.sum(axis=tuple(i for i in range(xd.ndim) if i != 1))
        return gx, ga

    return make_output(out, (x, slope), back)


def _sigmoid(v):
    # split by sign so exp never overflows
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return make_output(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return make_output(t, (x,), lambda g: (g * (1.0 - t * t),))


def glu(x: Tensor, axis: int = 1) -> Tensor:
    """Gated linear unit: first half times sigmoid of the second half."""
    c = x.shape[axis]
    if c % 2:
        raise ValueError(f"glu needs an even size along axis {axis}, got {c}")
    a, b = np.split(x.data, 2, axis=axis)
    s = _sigmoid(b)

    def back(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=axis),)

    return make_output(a * s, (x,), back)


# --------------------------------------------------------------------------
# reductions and reshaping
# --------------------------------------------------------------------------

def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return make_output(np.asarray(x.data.sum()), (x,),
                       lambda g: (np.broadcast_to(g, shape).astype(x.dtype),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    shape = x.shape
    return make_output(np.asarray(x.data.mean()), (x,),
                       lambda g: (np.full(shape, g / n, dtype=x.dtype),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_output(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return make_output(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def concat(xs, axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make_output(np.concatenate([x.data for x in xs], axis=axis), xs,
                       lambda g: tuple(np.split(g, cuts, axis=axis)))


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Slice ``[start, stop)`` along ``axis``."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.shape

    def back(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return make_output(x.data[idx], (x,), back)


def pad_time(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    if left == 0 and right == 0:
        return x
    width = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    n = x.shape[-1]
    return make_output(np.pad(x.data, width), (x,), lambda g: (g[..., left:left + n],))


# --------------------------------------------------------------------------
# convolutions
# --------------------------------------------------------------------------

def conv1d_output_length(length, kernel, stride=1, dilation=1, padding=0):
    return (length + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def _conv_dense(xp, w, stride, dilation, lout):
    # windows: [B, Cin, Lout, K]
    k = w.shape[2]
    win = sliding_window_view(xp, dilation * (k - 1) + 1, axis=2)[:, :, ::stride, ::dilation][:, :, :lout]
    out = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # [B, Lout, Cout]
    return out.transpose(0, 2, 1), win


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           dilation: int = 1, groups: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x[B, Cin, L]`` with ``weight[Cout, Cin/groups, K]``."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects 3-d input and weight, got {x.shape}, {weight.shape}")
    b, cin, length = x.shape
    cout, cig, k = weight.shape
    if cin % groups or cout % groups or cig * groups != cin:
        raise ValueError(f"conv1d: {cin} input channels incompatible with weight {weight.shape}, groups={groups}")
    lout = conv1d_output_length(length, k, stride, dilation, padding)
    if lout < 1:
        raise ValueError(f"conv1d: input length {length} too short for kernel {k} (dilation {dilation})")
    xd, w = x.data, weight.data
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    span = stride * (lout - 1) + 1
    og = cout // groups

    if k == 1 and stride == 1 and groups == 1:
        out = np.matmul(w[:, :, 0], xp)
        kind = "pointwise"
    elif groups == cin and cig == 1 and og == 1:
        out = np.zeros((b, cout, lout), dtype=np.result_type(xd, w))
        for j in range(k):
            out += w[None, :, 0, j, None] * xp[:, :, j * dilation:j * dilation + span:stride]
        kind = "depthwise"
    else:
        outs, wins = [], []
        for gi in range(groups):
            o, win = _conv_dense(xp[:, gi * cig:(gi + 1) * cig], w[gi * og:(gi + 1) * og], stride, dilation, lout)
            outs.append(o)
            wins.append(win)
        out = np.concatenate(outs, axis=1) if groups > 1 else outs[0]
        kind = "dense"

    def back(g):
        dxp = np.zeros_like(xp)
        if kind == "pointwise":
            dw = np.tensordot(g, xp, axes=([0, 2], [0, 2]))[:, :, None]
            dxp = np.matmul(w[:, :, 0].T, g)
        elif kind == "depthwise":
            dw = np.zeros_like(w)
            for j in range(k):
                sl = slice(j * dilation, j * dilation + span, stride)
                dw[:, 0, j] = (g * xp[:, :, sl]).sum(axis=(0, 2))
                dxp[:, :, sl] += g * w[None, :, 0, j, None]
        else:
            dw = np.zeros_like(w)
            for gi in range(groups):
                gg = g[:, gi * og:(gi + 1) * og]
                wg = w[gi * og:(gi + 1) * og]
                dw[gi * og:(gi + 1) * og] = np.tensordot(gg, wins[gi], axes=([0, 2], [0, 2]))
                dwin = np.tensordot(gg, wg, axes=([1], [0]))  # [B, Lout, Cig, K]
                for j in range(k):
                    dxp[:, gi * cig:(gi + 1) * cig, j * dilation:j * dilation + span:stride] += \
                        dwin[:, :, :, j].transpose(0, 2, 1)
        dx = dxp[:, :, padding:padding + length] if padding else dxp
        return dx, dw

    y = make_output(out, (x, weight), back)
    return add_bias(y, bias) if bias is not None else y


def conv_transpose1d_output_length(length, kernel, stride=1, padding=0):
    return (length - 1) * stride + kernel - 2 * padding


def conv1d_transpose(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed convolution of ``x[B, Cin, L]`` with ``weight[Cin, Cout, K]``.

    With the same weight array this is the adjoint of :func:`conv1d` mapping
    ``Cout -> Cin`` channels at the same stride and padding.
    """
    if x.ndim != 3 or weight.ndim != 3 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"conv1d_transpose: input {x.shape} incompatible with weight {weight.shape}")
    b, cin, length = x.shape
    _, cout, k = weight.shape
    lfull = (length - 1) * stride + k
    lout = lfull - 2 * padding
    if lout < 1:
        raise ValueError("conv1d_transpose: padding removes the whole output")
    xd, w = x.data, weight.data
    cols = np.tensordot(xd, w, axes=([1], [0]))  # [B, L, Cout, K]
    full = np.zeros((b, cout, lfull), dtype=cols.dtype)
    span = stride * (length - 1) + 1
    for j in range(k):
        full[:, :, j:j + span:stride] += cols[:, :, :, j].transpose(0, 2, 1)
    out = full[:, :, padding:padding + lout]

    def back(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
        dcols = sliding_window_view(gfull, k, axis=2)[:, :, ::stride][:, :, :length]  # [B, Cout, L, K]
        dx = np.tensordot(dcols, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
        dw = np.tensordot(xd, dcols, axes=([0, 2], [0, 2]))
        return dx, dw

    y = make_output(out, (x, weight), back)
    return add_bias(y, bias) if bias is not None else y


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over axis 1: ``[B, in]`` or ``[B, in, L]`` with ``weight[out, in]``."""
    if weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, w = x.data, weight.data
    if x.ndim == 2:
        out = xd @ w.T

        def back(g):
            return g @ w, g.T @ xd
    elif x.ndim == 3:
        out = np.matmul(w, xd)

        def back(g):
            return np.matmul(w.T, g), np.tensordot(g, xd, axes=([0, 2], [0, 2]))
    else:
        raise ValueError(f"linear: unsupported input rank {x.ndim}")
    y = make_output(out, (x, weight), back)
    return add_bias(y, bias) if bias is not None else y


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

def global_layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-8) -> Tensor:
    """Normalize each batch item over (channel, time), then per-channel affine."""
    xd = x.data
    if xd.ndim != 3 or gain.shape != (xd.shape[1],) or bias.shape != (xd.shape[1],):
        raise ValueError(f"global_layer_norm: bad shapes {x.shape}, {gain.shape}, {bias.shape}")
    mu = xd.mean(axis=(1, 2), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data[None, :, None]
    out = gd * xhat + bias.data[None, :, None]

    def back(g):
        dgain = (g * xhat).sum(axis=(0, 2))
        dbias = g.sum(axis=(0, 2))
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=(1, 2), keepdims=True)
                    - xhat * (gx * xhat).mean(axis=(1, 2), keepdims=True))
        return dx, dgain, dbias

    return make_output(out, (x, gain, bias), back)


# --------------------------------------------------------------------------
# recurrent
# --------------------------------------------------------------------------

def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over ``x[B, I, T]`` returning ``h[B, H, T]``.

    Gate rows of the weights are ordered input, forget, cell, output. Zero
    initial state. ``reverse`` runs the recurrence from the last step back.
    """
    xd = x.data
    b, nin, steps = xd.shape
    h4 = w_ih.shape[0]
    hid = h4 // 4
    if w_ih.shape != (h4, nin) or w_hh.shape != (h4, hid) or bias.shape != (h4,) or h4 % 4:
        raise ValueError(f"lstm: weights {w_ih.shape}, {w_hh.shape}, {bias.shape} do not fit input {x.shape}")
    wi, wh = w_ih.data, w_hh.data
    dtype = np.result_type(xd, wi)
    pre = np.matmul(wi, xd).transpose(2, 0, 1) + bias.data  # [T, B, 4H]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h = np.zeros((b, hid), dtype=dtype)
    c = np.zeros((b, hid), dtype=dtype)
    hs = np.zeros((steps, b, hid), dtype=dtype)
    cache = {}
    for t in order:
        a = pre[t] + h @ wh.T
        ig = _sigmoid(a[:, :hid])
        fg = _sigmoid(a[:, hid:2 * hid])
        gg = np.tanh(a[:, 2 * hid:3 * hid])
        og = _sigmoid(a[:, 3 * hid:])
        c_prev, h_prev = c, h
        c = fg * c_prev + ig * gg
        tc = np.tanh(c)
        h = og * tc
        hs[t] = h
        cache[t] = (ig, fg, gg, og, c_prev, h_prev, tc)
    out = hs.transpose(1, 2, 0)

    def back(g):
        gt = g.transpose(2, 0, 1)  # [T, B, H]
        dpre = np.zeros((steps, b, h4), dtype=dtype)
        dwh = np.zeros_like(wh)
        dh_next = np.zeros((b, hid), dtype=dtype)
        dc_next = np.zeros((b, hid), dtype=dtype)
        for t in reversed(list(order)):
            ig, fg, gg, og, c_prev, h_prev, tc = cache[t]
            dh = gt[t] + dh_next
            dc = dh * og * (1.0 - tc * tc) + dc_next
            da = np.concatenate([
                dc * gg * ig * (1.0 - ig),
                dc * c_prev * fg * (1.0 - fg),
                dc * ig * (1.0 - gg * gg),
                dh * tc * og * (1.0 - og),
            ], axis=1)
            dpre[t] = da
            dwh += da.T @ h_prev
            dh_next = da @ wh
            dc_next = dc * fg
        dpre_b = dpre.transpose(1, 2, 0)  # [B, 4H, T]
        dx = np.matmul(wi.T, dpre_b)
        dwi = np.tensordot(dpre_b, xd, axes=([0, 2], [0, 2]))
        db = dpre.sum(axis=(0, 1))
        return dx, dwi, dwh, db

    return make_output(out, (x, w_ih, w_hh, bias), back)


def bilstm(x: Tensor, layers) -> Tensor:
    """Stacked bidirectional LSTM.

    ``layers`` is a sequence of ``(forward_params, backward_params)`` where each
    params entry is a ``(w_ih, w_hh, bias)`` triple. Output has ``2*H`` channels.
    """
    for fwd, bwd in layers:
        x = concat([lstm(x, *fwd), lstm(x, *bwd, reverse=True)], axis=1)
    return x


# --------------------------------------------------------------------------
# losses
# --------------------------------------------------------------------------

def neg_si_snr(estimate: Tensor, target, clamp_db: float = 60.0, eps: float = 1e-8) -> Tensor:
    """Mean over rows of the negated scale-invariant SNR in dB.

    ``estimate`` is ``[B, L]`` (or ``[L]``); ``target`` is a constant array of
    the same shape. Rows with an all-zero target contribute the energy
    penalty ``10*log10(|estimate|^2 + eps)`` instead. Each row's value is
    clamped to ``[-clamp_db, clamp_db]`` with zero gradient when clamped.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if estimate.shape != t.shape:
        raise ValueError(f"neg_si_snr: shape mismatch {estimate.shape} vs {t.shape}")
    x = estimate.data.reshape(-1, estimate.shape[-1])
    t2 = t.reshape(x.shape).astype(x.dtype)
    rows = x.shape[0]
    vals = np.zeros(rows)
    grad = np.zeros_like(x)
    k = 10.0 / _LN10
    hi = 10.0 ** (clamp_db / 10.0)
    for r in range(rows):
        xr, tr = x[r], t2[r]
        tt = float(tr @ tr)
        if tt == 0.0:
            en = float(xr @ xr) + eps
            vals[r] = min(max(k * np.log(en), -clamp_db), clamp_db)
            if -clamp_db < k * np.log(en) < clamp_db:
                grad[r] = k * 2.0 * xr / en
            continue
        alpha = float(xr @ tr) / tt
        st = alpha * tr
        e = xr - st
        p = float(st @ st)
        q = float(e @ e)
        if q <= p / hi:
            vals[r] = -clamp_db
        elif p <= q / hi:
            vals[r] = clamp_db
        else:
            vals[r] = -k * (np.log(p) - np.log(q))
            grad[r] = -k * (2.0 * st / p - 2.0 * e / q)
    grad = (grad / rows).reshape(estimate.shape)
    return make_output(np.asarray(vals.mean(), dtype=x.dtype), (estimate,),
                       lambda g: (g * grad,))


def l1(estimate: Tensor, target) -> Tensor:
    """Mean absolute error against a constant target."""
    return mean(absolute(sub(estimate, as_tensor(target))))
