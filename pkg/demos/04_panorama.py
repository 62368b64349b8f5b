"""Extend one tile into a panorama with recursive prediction to both sides.

The model is untrained here, so the content is noise-like; the point is the
geometry and the seam report.  With a trained checkpoint the same call is
``longscape generate run/checkpoint.lsc tile.png --out pano.png --steps-right 4 --steps-left 4``.

Run: python demos/04_panorama.py
"""
from pathlib import Path

import numpy as np

from longscape.config import GeneratorConfig
from longscape.data import save_image
from longscape.evaluation import seam_report
from longscape.generator import generate_multistep, init_generator

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

cfg = GeneratorConfig.scaled(0.25)
params = init_generator(cfg, seed=0)
s = cfg.input_size
yy, xx = np.mgrid[0:s, 0:s] / s
tile = np.stack([np.sin(6 * xx), np.cos(4 * yy), xx * yy * 2 - 1]).astype(np.float32)

for right, left in ((0, 0), (3, 0), (2, 2)):
    pano = generate_multistep(tile, params, cfg, right, left)
    print(f"right {right}, left {left}: {pano.shape[1]}x{pano.shape[2]}  (expect {s}x{s * (1 + right + left)})")

assert np.array_equal(pano[:, :, 2 * s:3 * s], tile), "the input tile sits unchanged in the middle"
for seam in seam_report(pano, s):
    print(f"  seam at column {seam['column']:3d}: mean |left - right| = {seam['mean_abs_diff']:.3f}")
save_image(pano, OUT / "panorama.png")
print("wrote", OUT / "panorama.png")
