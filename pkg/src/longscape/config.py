"""Architecture and training hyperparameters.

Defaults are the full-scale reference setup; :meth:`GeneratorConfig.scaled` gives
the reduced-resolution variants used for CPU experiments and tests.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class GeneratorConfig:
    input_size: int = 128
    channels: tuple = (64, 128, 256, 512, 1024)
    encoder_blocks: tuple = (3, 4, 5)
    decoder_blocks: tuple = (2, 3, 4)
    rct_pred_len: int = 4
    grb_dilations: tuple = (1, 2, 4)
    scale: float = 1.0

    def __post_init__(self):
        if self.input_size % 32 or self.input_size < 32:
            raise ValueError(f"input_size must be a positive multiple of 32, got {self.input_size}")
        if len(self.channels) != 5 or any(c < 1 for c in self.channels):
            raise ValueError(f"channels needs five positive entries, got {self.channels}")
        if self.channels[4] % 4 or any(c % 4 for c in self.channels[1:]):
            raise ValueError("stage channels must be divisible by 4 (bottleneck width)")
        if len(self.encoder_blocks) != 3 or len(self.decoder_blocks) != 3 or len(self.grb_dilations) != 3:
            raise ValueError("encoder_blocks, decoder_blocks and grb_dilations need three entries each")
        if self.rct_pred_len < 1:
            raise ValueError("rct_pred_len must be >= 1")

    @classmethod
    def scaled(cls, scale: float) -> "GeneratorConfig":
        base = cls()
        return cls(
            input_size=int(round(base.input_size * scale)),
            channels=tuple(int(round(c * scale)) for c in base.channels),
            rct_pred_len=max(1, int(round(base.rct_pred_len * scale))),
            scale=scale,
        )

    @property
    def latent_size(self) -> int:
        return self.input_size // 32

    @property
    def rct_channels(self) -> int:
        return self.channels[4] // 4

    @property
    def rct_hidden(self) -> int:
        return self.rct_channels * self.latent_size


@dataclass(frozen=True)
class CriticConfig:
    """Strided 4x4 conv stack; layers are dropped once the map would fall below 2x2."""

    height: int = 128
    width: int = 256
    channels: tuple = (64, 128, 256, 512, 1024)
    kernel: int = 4
    stride: int = 2

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ValueError(f"critic input {self.height}x{self.width} is too small")

    @classmethod
    def for_generator(cls, gen: GeneratorConfig, which: str) -> "CriticConfig":
        chans = tuple(int(round(c * gen.scale)) for c in cls.channels)
        if which == "global":
            return cls(gen.input_size, 2 * gen.input_size, chans)
        if which == "local":
            return cls(gen.input_size, gen.input_size, chans)
        raise ValueError(f"critic must be 'global' or 'local', got {which!r}")

    @property
    def layer_channels(self) -> tuple:
        h, w = self.height, self.width
        out = []
        for c in self.channels:
            if min(h, w) // self.stride < 2:
                break
            h, w = h // self.stride, w // self.stride
            out.append(c)
        return tuple(out)

    @property
    def head_hw(self) -> tuple[int, int]:
        n = len(self.layer_channels)
        return self.height // self.stride ** n, self.width // self.stride ** n


@dataclass(frozen=True)
class LossWeights:
    lambda_rec: float = 0.998
    lambda_adv: float = 0.002
    lambda_gp: float = 10.0
    beta: float = 0.9

    def __post_init__(self):
        if min(self.lambda_rec, self.lambda_adv, self.lambda_gp) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass(frozen=True)
class TrainSchedule:
    base_lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    adam_eps: float = 1e-8
    batch_size: int = 32
    warmup_iters: int = 1000
    epochs: int = 1500
    lr_drop_epoch: int = 1000
    lr_drop_factor: float = 10.0
    n_cir_high: int = 30
    n_cir_low: int = 5
    n_cir_threshold: int = 30
    n_cir_period: int = 500

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0 or (f.name != "warmup_iters" and getattr(self, f.name) == 0):
                raise ValueError(f"{f.name} must be positive")


def fingerprint(*configs) -> str:
    """SHA-256 over the canonical JSON of the given config dataclasses."""
    payload = [[type(c).__name__, dataclasses.asdict(c)] for c in configs]
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def to_dict(cfg) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(cfg).items()}


def from_dict(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in data:
            v = data[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    return cls(**kwargs)
