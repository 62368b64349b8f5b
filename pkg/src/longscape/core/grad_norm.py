from __future__ import annotations

from typing import Callable

import numpy as np

from .ops import constant, row_norm, sum
from .tensor import Tensor, active_tape, grad


def second_order_grad_norm(critic_fn: Callable[[Tensor], Tensor], x_hat: Tensor) -> Tensor:
    """Per-sample ``||d critic / d x_hat||_2``, still differentiable in the critic's parameters.

    Samples must not interact inside ``critic_fn`` (no batch statistics), so the
    gradient of the summed scores separates per sample.  Must be called with a
    tape active; the input gradient is recorded on it.
    """
    tape = active_tape()
    if tape is None:
        raise RuntimeError("second_order_grad_norm needs an active Tape")
    probe = Tensor._wrap(x_hat.data)
    probe.requires_grad = True
    scores = critic_fn(probe)
    B = x_hat.shape[0]
    if scores.shape not in ((B,), (B, 1)):
        raise ValueError(f"critic must return one score per sample, got shape {scores.shape} for batch {B}")
    if scores.grad_node is None:
        # constant critic: the gradient is identically zero
        return constant(np.zeros(B, dtype=x_hat.dtype))
    (g,) = grad(sum(scores), [probe], create_graph=True)
    return row_norm(g)
