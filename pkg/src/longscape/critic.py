"""Global and local WGAN-GP critics.

The global critic scores the whole generated image, the local one only the
predicted right half.  Both are plain strided conv stacks with no
normalization, since the gradient penalty assumes samples do not interact.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import core as C
from .config import CriticConfig, GeneratorConfig
from .core import Tensor
from .layers import LEAKY_SLOPE, ParamScope, ParamStore, conv, init_conv, init_linear


def init_critic(scope: ParamScope, cfg: CriticConfig, rng: np.random.Generator) -> None:
    prev = 3
    for k, c in enumerate(cfg.layer_channels):
        init_conv(scope.scope(f"conv{k}"), c, prev, cfg.kernel, cfg.kernel, rng)
        prev = c
    h, w = cfg.head_hw
    init_linear(scope.scope("head"), prev * h * w, 1, rng)


def init_critics(gen_cfg: GeneratorConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Both critics in one store, under the ``global`` and ``local`` prefixes."""
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype)
    for which in ("global", "local"):
        init_critic(store.scope(which), CriticConfig.for_generator(gen_cfg, which), rng)
    return store


def critic_forward(image: Tensor, params: ParamScope, cfg: CriticConfig) -> Tensor:
    """Unbounded realness score, shape Bx1."""
    if image.ndim != 4 or image.shape[1:] != (3, cfg.height, cfg.width):
        raise ValueError(f"critic expects Bx3x{cfg.height}x{cfg.width}, got {image.shape}")
    h = image
    pad = (cfg.kernel - cfg.stride) // 2
    for k in range(len(cfg.layer_channels)):
        h = C.leaky_relu(conv(params.scope(f"conv{k}"), h, stride=cfg.stride, padding=pad), LEAKY_SLOPE)
    flat = C.reshape(h, (h.shape[0], h.size // h.shape[0]))
    return C.add(C.matmul(flat, params["head.weight"]), params["head.bias"])


def make_critic(params: ParamStore, gen_cfg: GeneratorConfig, which: str) -> Callable[[Tensor], Tensor]:
    cfg = CriticConfig.for_generator(gen_cfg, which)
    scope = params.scope(which)
    return lambda x: critic_forward(x, scope, cfg)


def gradient_penalty(
    real: Tensor,
    fake: Tensor,
    critic: Callable[[Tensor], Tensor],
    lambda_gp: float,
    seed: Optional[int] = None,
    u: Optional[np.ndarray] = None,
) -> Tensor:
    """``lambda_gp * mean((||grad critic(x_hat)|| - 1)^2)`` at random interpolates.

    ``x_hat = u * real + (1 - u) * fake`` with one ``u ~ U[0, 1]`` per sample,
    drawn from ``seed`` unless given explicitly.
    """
    if real.shape != fake.shape:
        raise ValueError(f"real/fake batch mismatch: {real.shape} vs {fake.shape}")
    B = real.shape[0]
    if u is None:
        u = np.random.default_rng(seed).uniform(0.0, 1.0, size=B)
    u = np.asarray(u, dtype=real.dtype).reshape((B,) + (1,) * (real.ndim - 1))
    x_hat = C.constant(u * real.data + (1 - u) * fake.data)
    norms = C.second_order_grad_norm(critic, x_hat)
    dev = C.sub(norms, 1.0)
    return C.mul(C.mean(C.mul(dev, dev)), lambda_gp)


def critic_loss(real: Tensor, fake: Tensor, critic: Callable[[Tensor], Tensor], lambda_gp: float, seed=None) -> tuple[Tensor, dict]:
    """mean D(fake) - mean D(real) + gradient penalty, for one critic."""
    d_fake = C.mean(critic(fake))
    d_real = C.mean(critic(real))
    gp = gradient_penalty(real, fake, critic, lambda_gp, seed)
    wdist = C.sub(d_fake, d_real)
    return C.add(wdist, gp), {"wdist": wdist, "gp": gp}


def mix(global_part: Tensor, local_part: Tensor, beta: float) -> Tensor:
    """beta * global + (1 - beta) * local, written so equal parts and the endpoints come out exact."""
    if beta == 1.0:
        return global_part
    if beta == 0.0:
        return local_part
    return C.add(local_part, C.mul(C.sub(global_part, local_part), beta))


def _split_seed(seed, k: int):
    return None if seed is None else [int(seed), k]


def critic_losses(
    real_full: Tensor,
    fake_full: Tensor,
    real_right: Tensor,
    fake_right: Tensor,
    params: ParamStore,
    gen_cfg: GeneratorConfig,
    beta: float,
    lambda_gp: float,
    seed=None,
) -> tuple[Tensor, dict]:
    """beta-weighted mix of the global and local critic losses."""
    if real_full.shape != fake_full.shape or real_right.shape != fake_right.shape:
        raise ValueError("real and fake batches must have equal shapes")
    lg, pg = critic_loss(real_full, fake_full, make_critic(params, gen_cfg, "global"), lambda_gp, _split_seed(seed, 0))
    ll, pl = critic_loss(real_right, fake_right, make_critic(params, gen_cfg, "local"), lambda_gp, _split_seed(seed, 1))
    total = mix(lg, ll, beta)
    parts = {"global": lg, "local": ll, "gp_global": pg["gp"], "gp_local": pl["gp"],
             "wdist_global": pg["wdist"], "wdist_local": pl["wdist"]}
    return total, parts


def generator_adv_loss(fake_full: Tensor, fake_right: Tensor, params: ParamStore, gen_cfg: GeneratorConfig, beta: float) -> Tensor:
    """-(beta * mean D_global(fake) + (1 - beta) * mean D_local(fake right half))."""
    terms = []
    if beta != 0.0:
        terms.append(C.mul(C.mean(make_critic(params, gen_cfg, "global")(fake_full)), -beta))
    if beta != 1.0:
        terms.append(C.mul(C.mean(make_critic(params, gen_cfg, "local")(fake_right)), -(1.0 - beta)))
    return terms[0] if len(terms) == 1 else C.add(*terms)
