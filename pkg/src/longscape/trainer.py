"""The epoch loop around :func:`train_step`: data, logging, checkpoints, sample grids.

``metrics.log`` holds one JSON object per step with sorted keys and no wall
clock, so two runs with the same seed write identical bytes.  Wall time goes
to ``timings.log`` next to it.
"""
from __future__ import annotations

import json
import signal
import time
import warnings
from contextlib import closing
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint as ckpt_io
from . import core as C
from .data import DatasetIndex, ImageError, augment_test, batch_stream, load_image, save_image
from .generator import generator_forward
from .training import TrainState, train_step

CHECKPOINT_NAME = "checkpoint.lsc"
N_SAMPLES = 4


@dataclass
class TrainOutcome:
    state: TrainState
    reason: str  # "finished", "max_steps" or "interrupted"
    checkpoint: Path


class _StopFlag:
    """Turns SIGINT into a request honoured at the next step boundary."""

    def __init__(self):
        self.set = False
        self._prev = None

    def __enter__(self):
        try:
            self._prev = signal.signal(signal.SIGINT, self._handle)
        except ValueError:  # not the main thread
            self._prev = None
        return self

    def _handle(self, signum, frame):
        self.set = True

    def __exit__(self, *exc):
        if self._prev is not None:
            signal.signal(signal.SIGINT, self._prev)
        return False


def sample_inputs(index: DatasetIndex, size: int) -> np.ndarray:
    """The first few images of the split, resized to ``size`` x ``2 size``."""
    files = index.files[:N_SAMPLES]
    return np.stack([augment_test(load_image(p), (size, 2 * size)) for p in files]).astype(np.float32)


def render_grid(state: TrainState, images: np.ndarray) -> np.ndarray:
    """Rows of [ground truth | input half + generated half], stacked vertically."""
    s = state.gen_cfg.input_size
    with C.no_record():
        fake = generator_forward(C.constant(images[:, :, :, :s].astype(state.generator.dtype)), state.generator, state.gen_cfg)
    rows = [np.concatenate([img, np.concatenate([img[:, :, :s], f[:, :, s:]], axis=2)], axis=2)
            for img, f in zip(images, fake.data)]
    return np.concatenate(rows, axis=1)


def _fmt(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, allow_nan=True)


def run_training(
    state: TrainState,
    train_index: DatasetIndex,
    out_dir,
    *,
    sample_index: Optional[DatasetIndex] = None,
    max_steps: int = 0,
    checkpoint_every: int = 500,
    start_batch: int = 0,
    prefetch: int = 2,
    on_step: Optional[Callable[[dict], None]] = None,
) -> TrainOutcome:
    """Train until the schedule's last epoch, ``max_steps`` (0 = no cap), or SIGINT."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT_NAME
    sched = state.schedule
    s = state.gen_cfg.input_size
    if len(train_index) == 0:
        raise ImageError("training split is empty")
    batch_size = min(sched.batch_size, len(train_index))
    if batch_size < sched.batch_size:
        warnings.warn(f"dataset has {len(train_index)} images; using batches of {batch_size} instead of {sched.batch_size}")
    n_batches = len(train_index) // batch_size
    samples = sample_inputs(sample_index or train_index, s)

    def checkpoint(next_batch: int):
        ckpt_io.save(state, ckpt_path, extra={"batch": next_batch})

    reason = "finished"
    batch = start_batch
    with open(out / "metrics.log", "a", encoding="utf-8") as mlog, \
            open(out / "timings.log", "a", encoding="utf-8") as tlog, _StopFlag() as stop:
        while state.epoch < sched.epochs and reason == "finished":
            stream = batch_stream(train_index, batch_size, [state.seed, state.epoch],
                                  image_size=(s, 2 * s), start_batch=batch, prefetch=prefetch)
            with closing(stream):
                for b in stream:
                    t0 = time.perf_counter()
                    rec = train_step(b, state)
                    batch += 1
                    mlog.write(_fmt(rec) + "\n")
                    mlog.flush()
                    tlog.write(_fmt({"step": rec["step"], "seconds": round(time.perf_counter() - t0, 6)}) + "\n")
                    tlog.flush()
                    if on_step is not None:
                        on_step(rec)
                    if checkpoint_every and state.step % checkpoint_every == 0:
                        checkpoint(batch)
                    if max_steps and state.step >= max_steps:
                        reason = "max_steps"
                    elif stop.set:
                        reason = "interrupted"
                    if reason != "finished":
                        break
            if reason == "finished" or batch >= n_batches:
                save_image(render_grid(state, samples), out / "samples" / f"epoch_{state.epoch:04d}.png")
                state.epoch += 1
                batch = 0
    checkpoint(batch)
    return TrainOutcome(state, reason, ckpt_path)
