"""Reconstruction loss, generator objective, Adam, and the training schedule rules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import core as C
from .config import GeneratorConfig, LossWeights, TrainSchedule
from .core import Tensor
from .critic import generator_adv_loss
from .layers import ParamStore


@dataclass(frozen=True)
class CosineMask:
    """Per-column reconstruction weights: 1 on the input side, cosine decay over the prediction."""

    pred_width: int
    weights: np.ndarray

    @property
    def border(self) -> int:
        return self.weights.size - self.pred_width


def cosine_mask(pred_width: int, total_width: int) -> CosineMask:
    if pred_width < 1:
        raise ValueError("pred_width must be >= 1")
    if pred_width > total_width:
        raise ValueError(f"pred_width {pred_width} exceeds total width {total_width}")
    d = np.arange(pred_width, dtype=np.float64)
    w = np.ones(total_width)
    w[total_width - pred_width:] = (1.0 + np.cos(d * np.pi / pred_width)) / 2.0
    w.flags.writeable = False
    return CosineMask(pred_width, w)


def masked_rec_loss(x: Tensor, x_pred: Tensor, mask: CosineMask) -> Tensor:
    """Column-weighted squared error, averaged over every element."""
    if x.shape != x_pred.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_pred.shape}")
    if x.shape[-1] != mask.weights.size:
        raise ValueError(f"mask width {mask.weights.size} != image width {x.shape[-1]}")
    diff = C.sub(x, x_pred)
    m = C.constant(mask.weights.astype(x.dtype))
    return C.mean(C.mul(C.mul(diff, diff), m))


def generator_objective(
    x: Tensor,
    x_pred: Tensor,
    critics: Optional[ParamStore],
    weights: LossWeights,
    gen_cfg: GeneratorConfig,
    mask: Optional[CosineMask] = None,
) -> tuple[Tensor, dict]:
    """``lambda_rec * L_rec + lambda_adv * L_adv``; the critics are skipped when lambda_adv is 0."""
    if mask is None:
        mask = cosine_mask(gen_cfg.input_size, x.shape[-1])
    rec = masked_rec_loss(x, x_pred, mask)
    total = C.mul(rec, weights.lambda_rec)
    parts = {"rec": rec}
    if weights.lambda_adv != 0.0:
        s = gen_cfg.input_size
        adv = generator_adv_loss(x_pred, C.slice_axis(x_pred, 3, s, 2 * s), critics, gen_cfg, weights.beta)
        total = C.add(total, C.mul(adv, weights.lambda_adv))
        parts["adv"] = adv
    return total, parts


def adam_step(
    store: ParamStore,
    grads: Mapping[str, object],
    schedule: TrainSchedule,
    lr: Optional[float] = None,
    t: Optional[int] = None,
) -> ParamStore:
    """One bias-corrected Adam update, in place; advances ``store.step``."""
    t = store.step + 1 if t is None else t
    if t < 1:
        raise ValueError("Adam step index must be >= 1")
    lr = schedule.base_lr if lr is None else lr
    b1, b2, eps = schedule.beta1, schedule.beta2, schedule.adam_eps
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in store.items():
        if name not in grads:
            raise KeyError(f"missing gradient for parameter {name!r}")
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        m, v = store.m[name], store.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
        store.grads[name] = g
    store.step = t
    return store


def lr_at(epoch: int, schedule: TrainSchedule = TrainSchedule()) -> float:
    if epoch < schedule.lr_drop_epoch:
        return schedule.base_lr
    return schedule.base_lr / schedule.lr_drop_factor


def n_cir(iteration: int, schedule: TrainSchedule = TrainSchedule()) -> int:
    """Critic updates per generator update at a given generator iteration (1-based)."""
    if iteration < 1:
        raise ValueError("iteration is 1-based")
    if iteration < schedule.n_cir_threshold or iteration % schedule.n_cir_period == 0:
        return schedule.n_cir_high
    return schedule.n_cir_low
