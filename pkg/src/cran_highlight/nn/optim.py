import numpy as np

from ..errors import InvalidConfigError, MissingGradientError


def adam_step(params, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8, decay=0.01, l2=0.0):
    """One Adam update with bias correction, then clear gradients.

    ``decay`` is learning-rate decay: step t (0-based) uses ``lr / (1 + decay * t)``.
    ``l2`` optionally adds classic L2 weight decay to the gradient.
    """
    if lr < 0 or decay < 0 or l2 < 0:
        raise InvalidConfigError("lr, decay and l2 must be non-negative")
    for p in params:
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name or p!r} has no gradient")
    for p in params:
        g = p.grad
        if l2:
            g = g + l2 * p.data
        lr_t = lr / (1.0 + decay * p.step_count)
        p.step_count += 1
        k = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** k)
        v_hat = p.adam_v / (1.0 - beta2 ** k)
        p.data = p.data - lr_t * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None
