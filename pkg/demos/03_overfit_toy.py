"""Overfit a small generator on four synthetic images and watch the losses.

Uses the quarter-scale model (32x32 tiles) so it runs in about a minute on
one core.  Writes demos/out/overfit.png: ground truth on the left, input
half plus prediction on the right.

Run: python demos/03_overfit_toy.py
"""
from pathlib import Path

import numpy as np

from longscape import core as C
from longscape.config import GeneratorConfig, TrainSchedule
from longscape.data import ImageBatch, save_image
from longscape.trainer import render_grid
from longscape.training import TrainState, train_step

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)


def stripes(n, h, w, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w])[:, None, None]
    imgs = []
    for _ in range(n):
        f = rng.uniform(1, 3, (3, 2))
        ph = rng.uniform(0, 2 * np.pi, 3)
        imgs.append([0.8 * np.sin(2 * np.pi * (f[c, 0] * xx + f[c, 1] * yy) + ph[c]) for c in range(3)])
    return np.asarray(imgs, dtype=np.float32)


cfg = GeneratorConfig.scaled(0.25)
# a higher rate than the reference 1e-4 so the curve moves within a minute
schedule = TrainSchedule(base_lr=5e-4, batch_size=4, warmup_iters=150, n_cir_high=5, n_cir_low=2)
state = TrainState.create(cfg, schedule, seed=0)
images = stripes(4, 32, 64)
batch = ImageBatch(C.constant(images), [], [])

for step in range(1, 181):
    rec = train_step(batch, state)
    if step == 1 or step % 30 == 0:
        extra = f"  L_D {rec['L_D']:+.3f}  n_cir {rec['n_cir']}" if rec["phase"] == "adversarial" else ""
        print(f"step {step:4d}  {rec['phase']:<11}  L_rec {rec['L_rec']:.4f}{extra}")

save_image(render_grid(state, images), OUT / "overfit.png")
print("wrote", OUT / "overfit.png")
