"""Tensors, parameters and the recording tape used for reverse-mode gradients."""
import threading

import numpy as np

from ..errors import InvalidInputError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array that can take part in gradient recording."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"<{type(self).__name__}{label} shape={self.shape}>"


class Parameter(Tensor):
    """A learnable tensor that also carries its Adam moments."""

    __slots__ = ("adam_m", "adam_v", "step_count")

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0


class Tape:
    """Records differentiable operations in execution order.

    Use as a context manager; operations executed while a tape is active and
    with at least one gradient-requiring input are appended to it::

        with Tape() as tape:
            loss = model.loss(x, y)
        tape.backward(loss)

    Gradients are *added* to ``Parameter.grad`` so several tapes can
    accumulate into one mini-batch before an optimizer step.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.records)

    def record(self, out, parents, backward):
        self.records.append((out, parents, backward))

    def backward(self, loss, seed=None):
        if seed is None:
            if loss.size != 1:
                raise InvalidInputError("backward() without a seed needs a scalar loss")
            seed = np.ones_like(loss.data)
        # gradients of intermediates live here; parameters accumulate in .grad
        grads = {id(loss): (loss, np.asarray(seed, dtype=np.float64))}
        for out, parents, backward in reversed(self.records):
            entry = grads.pop(id(out), None)
            if entry is None:
                continue
            for parent, pg in zip(parents, backward(entry[1])):
                if pg is None or not parent.requires_grad:
                    continue
                if isinstance(parent, Parameter):
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
                else:
                    prev = grads.get(id(parent))
                    grads[id(parent)] = (parent, pg if prev is None else prev[1] + pg)
        # whatever is left are leaf inputs that asked for gradients
        for leaf, g in grads.values():
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        self.records.clear()


def make_result(data, parents, backward):
    """Wrap an op result and record it on the active tape if needed."""
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = active_tape()
        if tape is not None:
            tape.record(out, parents, backward)
        else:
            out.requires_grad = False
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
