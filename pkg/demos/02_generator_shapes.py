"""Walk the generator layer by layer at full and reduced scale.

Run: python demos/02_generator_shapes.py
"""
import numpy as np

from longscape import core as C
from longscape.config import CriticConfig, GeneratorConfig
from longscape.critic import init_critics
from longscape.generator import generator_forward, init_generator

for scale in (1.0, 0.5, 0.25):
    cfg = GeneratorConfig.scaled(scale)
    params = init_generator(cfg, seed=0)
    s = cfg.input_size
    trace = []
    with C.no_record():
        out = generator_forward(C.Tensor(np.zeros((1, 3, s, s), np.float32)), params, cfg, trace)
    print(f"\nscale {scale}: input 3x{s}x{s} -> output {'x'.join(map(str, out.shape[1:]))}, "
          f"{params.num_params():,} generator parameters, "
          f"{init_critics(cfg, 1).num_params():,} critic parameters")
    if scale == 1.0:
        for i, (label, shape) in enumerate(trace, 1):
            print(f"  {i:2d}  {label:<12} {shape[1]:>4} x {shape[2]:<4} x {shape[0]}")

for which in ("global", "local"):
    c = CriticConfig.for_generator(GeneratorConfig(), which)
    print(f"\n{which} critic sees 3x{c.height}x{c.width}, conv widths {c.layer_channels}, head {c.head_hw}")
