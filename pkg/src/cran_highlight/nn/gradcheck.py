import numpy as np

from .tensor import Tape


def finite_difference_check(loss_fn, params, epsilon=1e-4, max_coords=20, rng=None, atol=1e-7):
    """Compare tape gradients with central differences.

    ``loss_fn`` is called with no arguments and must return a scalar Tensor;
    it has to be deterministic (dropout off).  For each parameter up to
    ``max_coords`` coordinates are checked (all of them if the parameter is
    small enough).  Returns the worst relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|, atol)``.

    ``atol`` keeps coordinates whose gradient sits at the central-difference
    round-off level (about machine epsilon * |loss| / epsilon) from dominating.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        if flat.size <= max_coords:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            up = float(loss_fn().data)
            flat[c] = orig - epsilon
            down = float(loss_fn().data)
            flat[c] = orig
            numeric = (up - down) / (2.0 * epsilon)
            a = grad.reshape(-1)[c]
            err = abs(a - numeric) / max(abs(a), abs(numeric), atol)
            worst = max(worst, err)
    return worst
