"""Differentiable operations.

Every op checks shapes explicitly; nothing broadcasts implicitly.  Each op
computes its forward value with numpy (or a kernel from ``_kernels``) and
registers a closure that maps the output gradient to input gradients.
"""
import math

import numpy as np

from .. import _kernels
from ..errors import InvalidConfigError, InvalidInputError, InvalidShapeError
from .tensor import Tensor, as_tensor, make_result


def _expect(cond, msg):
    if not cond:
        raise InvalidShapeError(msg)


def _same_shape(a, b, what):
    _expect(a.shape == b.shape, f"{what}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise -------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def elementwise_mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "elementwise_mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x):
    x = as_tensor(x)
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_result(y, (x,), lambda g: (g * y * (1.0 - y),))


def elu(x):
    x = as_tensor(x)
    xd = x.data
    neg = np.expm1(np.minimum(xd, 0.0))
    y = np.where(xd > 0, xd, neg)
    # derivative at exactly 0 is taken as 1
    dy = np.where(xd >= 0, 1.0, neg + 1.0)
    return make_result(y, (x,), lambda g: (g * dy,))


_POINTWISE = {"elu": elu, "tanh": tanh, "sigmoid": sigmoid}


def pointwise(op, x):
    try:
        fn = _POINTWISE[op]
    except KeyError:
        raise InvalidConfigError(f"unknown pointwise op {op!r}; expected one of {sorted(_POINTWISE)}") from None
    return fn(x)


# -- structural ----------------------------------------------------------------

def transpose(x):
    x = as_tensor(x)
    _expect(x.data.ndim == 2, "transpose needs a 2-D tensor")
    return make_result(np.ascontiguousarray(x.data.T), (x,), lambda g: (np.ascontiguousarray(g.T),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, cuts, axis=axis))

    return make_result(out, tuple(tensors), backward)


def flip_rows(x):
    """Reverse the first (time) axis."""
    x = as_tensor(x)
    return make_result(x.data[::-1].copy(), (x,), lambda g: (g[::-1].copy(),))


def row(x, t):
    x = as_tensor(x)
    T = x.shape[0]
    t = t % T

    def backward(g):
        out = np.zeros_like(x.data)
        out[t] = g
        return (out,)

    return make_result(x.data[t].copy(), (x,), backward)


def repeat_rows(x, T):
    """Stack T copies of a vector into a T x D matrix."""
    x = as_tensor(x)
    _expect(x.data.ndim == 1, "repeat_rows needs a vector")
    return make_result(np.tile(x.data, (T, 1)), (x,), lambda g: (g.sum(axis=0),))


def mean_rows(x):
    """Column means, exactly rounded so the result ignores row order."""
    x = as_tensor(x)
    _expect(x.data.ndim == 2, "mean_rows needs a 2-D tensor")
    T = x.shape[0]
    sums = np.array([math.fsum(col) for col in x.data.T])
    return make_result(sums / T, (x,), lambda g: (np.tile(g / T, (T, 1)),))


def total(x):
    x = as_tensor(x)
    shape = x.shape
    return make_result(np.array(x.data.sum()), (x,), lambda g: (np.full(shape, float(g)),))


def weighted_sum_rows(weights, x):
    """sum_t weights[t] * x[t] for weights (T,) and x (T x D)."""
    weights, x = as_tensor(weights), as_tensor(x)
    _expect(x.data.ndim == 2 and weights.shape == (x.shape[0],),
            f"weighted_sum_rows: weights {weights.shape} vs rows {x.shape}")
    wd, xd = weights.data, x.data
    return make_result(wd @ xd, (weights, x), lambda g: (xd @ g, np.outer(wd, g)))


# -- affine --------------------------------------------------------------------

def dense(x, weight, bias=None):
    """weight @ x + bias for a vector x."""
    x = as_tensor(x)
    _expect(x.data.ndim == 1 and weight.data.ndim == 2 and weight.shape[1] == x.shape[0],
            f"dense: weight {weight.shape} incompatible with input {x.shape}")
    y = weight.data @ x.data
    parents = (x, weight)
    if bias is not None:
        _expect(bias.shape == (weight.shape[0],), f"dense: bias {bias.shape} vs weight {weight.shape}")
        y = y + bias.data
        parents = parents + (bias,)
    xd, wd = x.data, weight.data

    def backward(g):
        grads = (wd.T @ g, np.outer(g, xd))
        return grads + (g,) if bias is not None else grads

    return make_result(y, parents, backward)


def dense_rows(x, weight, bias=None):
    """Apply the same affine map to every row of x (T x D) -> T x M."""
    x = as_tensor(x)
    _expect(x.data.ndim == 2 and weight.data.ndim == 2 and weight.shape[1] == x.shape[1],
            f"dense_rows: weight {weight.shape} incompatible with input {x.shape}")
    y = x.data @ weight.data.T
    parents = (x, weight)
    if bias is not None:
        _expect(bias.shape == (weight.shape[0],), f"dense_rows: bias {bias.shape} vs weight {weight.shape}")
        y = y + bias.data
        parents = parents + (bias,)
    xd, wd = x.data, weight.data

    def backward(g):
        grads = (g @ wd, g.T @ xd)
        return grads + (g.sum(axis=0),) if bias is not None else grads

    return make_result(y, parents, backward)


# -- convolution / pooling -----------------------------------------------------

def conv1d(x, filters, bias):
    """Same-padded 1-D convolution over time; x is C_in x T."""
    x = as_tensor(x)
    _expect(x.data.ndim == 2, f"conv1d: input must be C x T, got {x.shape}")
    _expect(filters.data.ndim == 3 and filters.shape[1] == x.shape[0],
            f"conv1d: filters {filters.shape} incompatible with input {x.shape}")
    _expect(filters.shape[2] % 2 == 1, "conv1d: kernel size must be odd")
    _expect(bias.shape == (filters.shape[0],), f"conv1d: bias {bias.shape} vs filters {filters.shape}")
    xd, wd = x.data, filters.data
    y = _kernels.conv1d_forward(xd, wd, bias.data)

    def backward(g):
        return _kernels.conv1d_backward(xd, wd, g)

    return make_result(y, (x, filters, bias), backward)


def maxpool1d(x, pool=2):
    x = as_tensor(x)
    _expect(x.data.ndim == 2, f"maxpool1d: input must be C x T, got {x.shape}")
    T = x.shape[1]
    _expect(pool >= 1 and T % pool == 0, f"maxpool1d: length {T} not divisible by pool {pool}")
    y, idx = _kernels.maxpool_forward(x.data, pool)
    return make_result(y, (x,), lambda g: (_kernels.maxpool_backward(g, idx, T),))


# -- recurrent -----------------------------------------------------------------

def lstm(x, W, U, b):
    """One LSTM direction over the rows of x; returns the T x H hidden states.

    W is 4H x D, U is 4H x H, b is 4H, gate order (input, forget, cell, output).
    """
    x = as_tensor(x)
    _expect(x.data.ndim == 2 and x.shape[0] >= 1, f"lstm: input must be T x D with T >= 1, got {x.shape}")
    H = U.shape[1]
    _expect(U.shape == (4 * H, H), f"lstm: recurrent weight {U.shape} is not 4H x H")
    _expect(W.shape == (4 * H, x.shape[1]), f"lstm: input weight {W.shape} vs input {x.shape}")
    _expect(b.shape == (4 * H,), f"lstm: bias {b.shape}")
    xd = x.data
    Wt = np.ascontiguousarray(W.data.T)
    Ut = np.ascontiguousarray(U.data.T)
    hs, cs, gates = _kernels.lstm_forward(xd, Wt, Ut, b.data)

    def backward(g):
        dx, dWt, dUt, db = _kernels.lstm_backward(xd, Wt, Ut, hs, cs, gates, g)
        return dx, np.ascontiguousarray(dWt.T), np.ascontiguousarray(dUt.T), db

    return make_result(hs, (x, W, U, b), backward)


def bilstm(sequence, forward_params, backward_params):
    """Bidirectional LSTM layer.

    Each params argument is a (W, U, b) triple.  Returns ``(outputs, final)``
    where outputs is T x 2H (forward states then backward states, aligned by
    time) and final joins each direction's state after its whole sequence.
    """
    sequence = as_tensor(sequence)
    hf = lstm(sequence, *forward_params)
    hb_rev = lstm(flip_rows(sequence), *backward_params)
    hb = flip_rows(hb_rev)
    outputs = concat([hf, hb], axis=1)
    final = concat([row(hf, -1), row(hb_rev, -1)])
    return outputs, final


# -- classification ------------------------------------------------------------

def softmax(x):
    x = as_tensor(x)
    _expect(x.data.ndim == 1, "softmax expects a vector")
    z = x.data - x.data.max()
    e = np.exp(z)
    p = e / e.sum()

    def backward(g):
        return (p * (g - np.dot(g, p)),)

    return make_result(p, (x,), backward)


def _check_target(target, G):
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (G,):
        raise InvalidShapeError(f"target has shape {target.shape}, expected ({G},)")
    if np.any(target < 0) or abs(target.sum() - 1.0) > 1e-9:
        raise InvalidInputError("target must be non-negative and sum to 1")
    return target


def softmax_cross_entropy(logits, target):
    """Returns ``(loss, probs)``; loss is a scalar Tensor, probs an array."""
    logits = as_tensor(logits)
    _expect(logits.data.ndim == 1, "softmax_cross_entropy expects a logit vector")
    target = _check_target(target, logits.shape[0])
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    logp = z - lse
    probs = np.exp(logp)
    mask = target > 0
    loss = -np.sum(target[mask] * logp[mask])
    return make_result(np.array(loss), (logits,), lambda g: (float(g) * (probs - target),)), probs


# -- regularization ------------------------------------------------------------

def dropout(x, rate, training, rng=None):
    """Inverted dropout; identity when not training or when rate is 0."""
    if not 0.0 <= rate < 1.0:
        raise InvalidConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise InvalidConfigError("training-mode dropout needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


__all__ = [
    "Tensor", "add", "elementwise_mul", "scale", "tanh", "sigmoid", "elu", "pointwise",
    "transpose", "concat", "flip_rows", "row", "repeat_rows", "mean_rows", "total",
    "weighted_sum_rows", "dense", "dense_rows", "conv1d", "maxpool1d", "lstm", "bilstm",
    "softmax", "softmax_cross_entropy", "dropout",
]
