"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports and ``CRAN_NUMBA`` is not set to
``0``/``false``/``off``.  Both paths expose identical signatures through the
``numpy_kernels`` and ``numba_kernels`` namespaces; the module-level functions
dispatch to whichever is active.

All kernels take and return float64 C-contiguous arrays.
"""
import contextlib
import math
import os
from types import SimpleNamespace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _env_wants_numba():
    return os.environ.get("CRAN_NUMBA", "1").strip().lower() not in ("0", "false", "off", "no")


# ---------------------------------------------------------------------------
# Shared-source kernels: written in the numpy subset numba understands, so the
# same function body is the fallback and (after njit) the accelerated path.
# ---------------------------------------------------------------------------

def _lstm_forward(x, Wt, Ut, b):
    """One LSTM direction over x (T x D).

    Wt is D x 4H, Ut is H x 4H, gate order i, f, g, o.
    Returns hidden states, cell states and post-activation gates.
    """
    T = x.shape[0]
    H = Ut.shape[0]
    hs = np.zeros((T, H))
    cs = np.zeros((T, H))
    gates = np.zeros((T, 4 * H))
    h = np.zeros(H)
    c = np.zeros(H)
    xw = np.dot(x, Wt)
    for t in range(T):
        a = xw[t] + b + np.dot(h, Ut)
        i = 0.5 * (1.0 + np.tanh(0.5 * a[:H]))
        f = 0.5 * (1.0 + np.tanh(0.5 * a[H:2 * H]))
        g = np.tanh(a[2 * H:3 * H])
        o = 0.5 * (1.0 + np.tanh(0.5 * a[3 * H:]))
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[t] = h
        cs[t] = c
        gates[t, :H] = i
        gates[t, H:2 * H] = f
        gates[t, 2 * H:3 * H] = g
        gates[t, 3 * H:] = o
    return hs, cs, gates


def _lstm_backward(x, Wt, Ut, hs, cs, gates, dhs):
    T, D = x.shape
    H = Ut.shape[0]
    dx = np.zeros((T, D))
    dWt = np.zeros(Wt.shape)
    dUt = np.zeros(Ut.shape)
    db = np.zeros(4 * H)
    dh_next = np.zeros(H)
    dc_next = np.zeros(H)
    da = np.zeros(4 * H)
    zero = np.zeros(H)
    for t in range(T - 1, -1, -1):
        i = gates[t, :H]
        f = gates[t, H:2 * H]
        g = gates[t, 2 * H:3 * H]
        o = gates[t, 3 * H:]
        if t > 0:
            c_prev = cs[t - 1]
            h_prev = hs[t - 1]
        else:
            c_prev = zero
            h_prev = zero
        dh = dhs[t] + dh_next
        tc = np.tanh(cs[t])
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da[:H] = dc * g * i * (1.0 - i)
        da[H:2 * H] = dc * c_prev * f * (1.0 - f)
        da[2 * H:3 * H] = dc * i * (1.0 - g * g)
        da[3 * H:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        db += da
        dWt += np.outer(x[t], da)
        dUt += np.outer(h_prev, da)
        dx[t] = np.dot(Wt, da)
        dh_next = np.dot(Ut, da)
    return dx, dWt, dUt, db


# ---------------------------------------------------------------------------
# numpy-vectorized kernels
# ---------------------------------------------------------------------------

def _np_conv1d_forward(x, w, b):
    K = w.shape[2]
    pad = K // 2
    xp = np.pad(x, ((0, 0), (pad, pad)))
    cols = sliding_window_view(xp, K, axis=1)  # C_in x T x K
    out = np.tensordot(w, cols, axes=([1, 2], [0, 2]))
    out += b[:, None]
    return np.ascontiguousarray(out)


def _np_conv1d_backward(x, w, gout):
    K = w.shape[2]
    pad = K // 2
    T = x.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad)))
    cols = sliding_window_view(xp, K, axis=1)
    gw = np.tensordot(gout, cols, axes=([1], [1]))
    gb = gout.sum(axis=1)
    gxp = np.zeros_like(xp)
    for k in range(K):
        gxp[:, k:k + T] += w[:, :, k].T @ gout
    return np.ascontiguousarray(gxp[:, pad:pad + T]), np.ascontiguousarray(gw), gb


def _np_maxpool_forward(x, pool):
    C, T = x.shape
    windows = x.reshape(C, T // pool, pool)
    local = windows.argmax(axis=2)
    out = np.take_along_axis(windows, local[:, :, None], axis=2)[:, :, 0]
    idx = local + np.arange(T // pool)[None, :] * pool
    return np.ascontiguousarray(out), idx.astype(np.int64)


def _np_maxpool_backward(gout, idx, T):
    C = gout.shape[0]
    gx = np.zeros((C, T))
    np.put_along_axis(gx, idx, gout, axis=1)
    return gx


def _np_window_sums(x, S):
    # left-to-right accumulation, the same order as a direct loop
    n = x.shape[0] - S + 1
    out = x[:n].copy()
    for s in range(1, S):
        out += x[s:s + n]
    return out


def _np_sinc_resample(x, src_rate, dst_rate, half_width):
    ratio = dst_rate / src_rate
    n = x.shape[0]
    n_out = int(round(n * ratio))
    scale = min(1.0, ratio)
    half = half_width / scale
    H = int(math.ceil(half))
    offsets = np.arange(-H + 1, H + 1)
    out = np.empty(n_out)
    chunk = max(1, 262144 // (2 * H))
    for start in range(0, n_out, chunk):
        j = np.arange(start, min(start + chunk, n_out))
        p = j / ratio
        base = np.floor(p).astype(np.int64)
        k = base[:, None] + offsets[None, :]
        d = p[:, None] - k
        w = np.where(np.abs(d) < half, 0.5 * (1.0 + np.cos(np.pi * d / half)), 0.0)
        h = scale * np.sinc(scale * d) * w
        valid = (k >= 0) & (k < n)
        vals = x[np.clip(k, 0, n - 1)] * valid
        out[start:start + len(j)] = (vals * h).sum(axis=1)
    return out


# ---------------------------------------------------------------------------
# loop kernels (compiled with numba)
# ---------------------------------------------------------------------------

def _loop_im2col(x, K):
    C_in, T = x.shape
    pad = K // 2
    cols = np.zeros((C_in * K, T))
    for i in range(C_in):
        for k in range(K):
            shift = k - pad
            lo = max(0, -shift)
            hi = min(T, T - shift)
            for t in range(lo, hi):
                cols[i * K + k, t] = x[i, t + shift]
    return cols


def _loop_conv1d_forward(x, w, b):
    C_out, C_in, K = w.shape
    cols = _im2col(x, K)
    out = np.dot(np.ascontiguousarray(w.reshape(C_out, C_in * K)), cols)
    for c in range(C_out):
        out[c] += b[c]
    return out


def _loop_conv1d_backward(x, w, gout):
    C_out, C_in, K = w.shape
    T = x.shape[1]
    pad = K // 2
    cols = _im2col(x, K)
    gw = np.dot(gout, cols.T).reshape(C_out, C_in, K)
    gb = np.zeros(C_out)
    for c in range(C_out):
        gb[c] = gout[c].sum()
    gcols = np.dot(np.ascontiguousarray(w.reshape(C_out, C_in * K).T), gout)
    gx = np.zeros((C_in, T))
    for i in range(C_in):
        for k in range(K):
            shift = k - pad
            lo = max(0, -shift)
            hi = min(T, T - shift)
            for t in range(lo, hi):
                gx[i, t + shift] += gcols[i * K + k, t]
    return gx, gw, gb


def _loop_maxpool_forward(x, pool):
    C, T = x.shape
    n = T // pool
    out = np.empty((C, n))
    idx = np.empty((C, n), dtype=np.int64)
    for c in range(C):
        for j in range(n):
            best = j * pool
            for s in range(j * pool + 1, (j + 1) * pool):
                if x[c, s] > x[c, best]:
                    best = s
            out[c, j] = x[c, best]
            idx[c, j] = best
    return out, idx


def _loop_maxpool_backward(gout, idx, T):
    C, n = gout.shape
    gx = np.zeros((C, T))
    for c in range(C):
        for j in range(n):
            gx[c, idx[c, j]] += gout[c, j]
    return gx


def _loop_window_sums(x, S):
    n = x.shape[0] - S + 1
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for s in range(S):
            acc += x[i + s]
        out[i] = acc
    return out


def _loop_sinc_resample(x, src_rate, dst_rate, half_width):
    ratio = dst_rate / src_rate
    n = x.shape[0]
    n_out = int(round(n * ratio))
    scale = min(1.0, ratio)
    half = half_width / scale
    H = int(math.ceil(half))
    out = np.empty(n_out)
    for j in range(n_out):
        p = j / ratio
        base = int(math.floor(p))
        acc = 0.0
        for k in range(base - H + 1, base + H + 1):
            if k < 0 or k >= n:
                continue
            d = p - k
            if abs(d) >= half:
                continue
            w = 0.5 * (1.0 + math.cos(math.pi * d / half))
            u = scale * d
            if u == 0.0:
                s = 1.0
            else:
                s = math.sin(math.pi * u) / (math.pi * u)
            acc += x[k] * scale * s * w
        out[j] = acc
    return out


numpy_kernels = SimpleNamespace(
    name="numpy",
    conv1d_forward=_np_conv1d_forward,
    conv1d_backward=_np_conv1d_backward,
    maxpool_forward=_np_maxpool_forward,
    maxpool_backward=_np_maxpool_backward,
    lstm_forward=_lstm_forward,
    lstm_backward=_lstm_backward,
    window_sums=_np_window_sums,
    sinc_resample=_np_sinc_resample,
)

if HAVE_NUMBA:
    _jit = numba.njit(cache=True)
    # compiled helpers are resolved as globals by the kernels that call them
    _im2col = _jit(_loop_im2col)
    numba_kernels = SimpleNamespace(
        name="numba",
        conv1d_forward=_jit(_loop_conv1d_forward),
        conv1d_backward=_jit(_loop_conv1d_backward),
        maxpool_forward=_jit(_loop_maxpool_forward),
        maxpool_backward=_jit(_loop_maxpool_backward),
        lstm_forward=_jit(_lstm_forward),
        lstm_backward=_jit(_lstm_backward),
        window_sums=_jit(_loop_window_sums),
        sinc_resample=_jit(_loop_sinc_resample),
    )
else:  # pragma: no cover
    _im2col = _loop_im2col
    numba_kernels = None

_active = numba_kernels if (HAVE_NUMBA and _env_wants_numba()) else numpy_kernels


def backend():
    """Name of the active kernel backend (``"numba"`` or ``"numpy"``)."""
    return _active.name


def set_backend(name):
    global _active
    if name == "numba":
        if numba_kernels is None:
            raise RuntimeError("numba is not available")
        _active = numba_kernels
    elif name == "numpy":
        _active = numpy_kernels
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def use_backend(name):
    previous = _active.name
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def conv1d_forward(x, w, b):
    return _active.conv1d_forward(_f64(x), _f64(w), _f64(b))


def conv1d_backward(x, w, gout):
    return _active.conv1d_backward(_f64(x), _f64(w), _f64(gout))


def maxpool_forward(x, pool):
    return _active.maxpool_forward(_f64(x), int(pool))


def maxpool_backward(gout, idx, T):
    return _active.maxpool_backward(_f64(gout), np.ascontiguousarray(idx, dtype=np.int64), int(T))


def lstm_forward(x, Wt, Ut, b):
    return _active.lstm_forward(_f64(x), _f64(Wt), _f64(Ut), _f64(b))


def lstm_backward(x, Wt, Ut, hs, cs, gates, dhs):
    return _active.lstm_backward(_f64(x), _f64(Wt), _f64(Ut), _f64(hs), _f64(cs), _f64(gates), _f64(dhs))


def window_sums(x, S):
    return _active.window_sums(_f64(x), int(S))


def sinc_resample(x, src_rate, dst_rate, half_width=32):
    return _active.sinc_resample(_f64(x), float(src_rate), float(dst_rate), float(half_width))
