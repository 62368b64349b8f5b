"""One alternating optimization step and the state it advances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core as C
from .config import CriticConfig, GeneratorConfig, LossWeights, TrainSchedule, fingerprint
from .critic import critic_losses, init_critics
from .data import ImageBatch
from .generator import generator_forward, init_generator
from .layers import ParamStore
from .losses import adam_step, cosine_mask, generator_objective, lr_at, n_cir

WARMUP_WEIGHTS = LossWeights(lambda_rec=1.0, lambda_adv=0.0)


@dataclass
class TrainState:
    gen_cfg: GeneratorConfig
    schedule: TrainSchedule
    weights: LossWeights
    generator: ParamStore
    critics: ParamStore
    seed: int = 0
    step: int = 0
    epoch: int = 0

    @classmethod
    def create(cls, gen_cfg: GeneratorConfig, schedule: TrainSchedule = TrainSchedule(),
               weights: LossWeights = LossWeights(), seed: int = 0, dtype=np.float32) -> "TrainState":
        gen = init_generator(gen_cfg, seed, dtype)
        critics = init_critics(gen_cfg, seed + 1, dtype)
        return cls(gen_cfg, schedule, weights, gen, critics, seed)

    @property
    def fingerprint(self) -> str:
        return fingerprint(
            self.gen_cfg,
            CriticConfig.for_generator(self.gen_cfg, "global"),
            CriticConfig.for_generator(self.gen_cfg, "local"),
            self.schedule,
            self.weights,
        )

    def in_warmup(self, iteration: int) -> bool:
        return iteration <= self.schedule.warmup_iters


def _grad_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.vdot(g.data, g.data)) for g in grads.values())))


def split_halves(x: C.Tensor, size: int) -> tuple[C.Tensor, C.Tensor]:
    return C.slice_axis(x, 3, 0, size), C.slice_axis(x, 3, size, 2 * size)


def train_step(batch: ImageBatch, state: TrainState) -> dict:
    """Advance ``state`` by one generator iteration and return a metrics record.

    During warmup only the generator moves, on reconstruction alone.  After
    it, the critics take ``n_cir`` updates against one generated batch, each
    with fresh interpolation draws, then the generator takes one update.
    """
    if batch is None or len(batch) == 0:
        raise ValueError("empty batch")
    cfg, sched = state.gen_cfg, state.schedule
    s = cfg.input_size
    x = batch.pixels
    if x.shape[1:] != (3, s, 2 * s):
        raise ValueError(f"batch images must be 3x{s}x{2 * s}, got {x.shape[1:]}")
    it = state.step + 1
    lr = lr_at(state.epoch, sched)
    mask = cosine_mask(s, 2 * s)
    left, right = split_halves(x, s)
    rec = {"step": it, "epoch": state.epoch, "lr": lr}

    if state.in_warmup(it):
        with C.Tape():
            fake = generator_forward(left, state.generator, cfg)
            loss, parts = generator_objective(x, fake, None, WARMUP_WEIGHTS, cfg, mask)
        grads = C.backward(loss, state.generator.items())
        adam_step(state.generator, grads, sched, lr)
        rec.update(phase="warmup", n_cir=0, L_rec=float(parts["rec"].data), L_adv_g=0.0, L_D=0.0,
                   L_G=float(loss.data), grad_norm_g=_grad_norm(grads), grad_norm_d=0.0)
        state.step = it
        return rec

    with C.no_record():
        fake = generator_forward(left, state.generator, cfg)
    fake_right = C.slice_axis(fake, 3, s, 2 * s)
    k = n_cir(it, sched)
    w = state.weights
    for j in range(k):
        with C.Tape():
            l_d, d_parts = critic_losses(x, fake, right, fake_right, state.critics, cfg, w.beta, w.lambda_gp,
                                         seed=_gp_seed(state.seed, it, j))
        d_grads = C.backward(l_d, state.critics.items())
        adam_step(state.critics, d_grads, sched, lr)

    with C.Tape():
        fake = generator_forward(left, state.generator, cfg)
        loss, parts = generator_objective(x, fake, state.critics, w, cfg, mask)
    g_grads = C.backward(loss, state.generator.items())
    adam_step(state.generator, g_grads, sched, lr)
    rec.update(phase="adversarial", n_cir=k, L_rec=float(parts["rec"].data), L_adv_g=float(parts["adv"].data),
               L_D=float(l_d.data), L_G=float(loss.data), grad_norm_g=_grad_norm(g_grads),
               grad_norm_d=_grad_norm(d_grads), gp_global=float(d_parts["gp_global"].data),
               gp_local=float(d_parts["gp_local"].data))
    state.step = it
    return rec


def _gp_seed(seed: int, iteration: int, critic_iter: int) -> int:
    return int(np.random.SeedSequence([seed, iteration, critic_iter]).generate_state(1)[0])
