"""
Training on one synthetic sequence
==================================

A 64x64 rectangle slides across eight textured frames. The tiny model is
trained from the first-frame mask and then segments frames 1 to 7 on its own.
Takes about a minute and a half on one CPU core.
"""

import numpy as np

from srnet.pipeline import RunConfig, run_eval, segment_sequence, train_toy
from srnet.synth import generate, moving_rectangle

cfg = RunConfig.tiny()
spec = moving_rectangle(seed=0)
print(f"training {cfg.iterations} iterations, lr {cfg.lr}, clip {cfg.clip}")

result = train_toy(spec, cfg, callback=lambda it, loss: it % 25 == 0 and print(f"  iter {it:3d}  loss {loss:.4f}"))
print(f"done in {result.seconds:.0f}s")

report = run_eval(spec, result.params, cfg)
print(report.summary())

frames, labels = generate(spec)
pred = segment_sequence(cfg, result.params, frames, labels[0])
print("pixels wrong per frame:", [int((pred[t] != labels[t]).sum()) for t in range(len(frames))])
print("frame 7, predicted (#) vs truth (+), every 4th pixel:")
for r in range(0, 64, 4):
    print("".join("#" if pred[7, r, c] else "+" if labels[7, r, c] else "." for c in range(0, 64, 2)))
