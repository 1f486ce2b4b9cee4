"""
Does alignment help when motion is incoherent?
==============================================

The object jumps to a new place at frame 4. The model with the alignment
module and the one without it get the same seed and the same budget.
Slow: two trainings per seed.
"""

import sys

from srnet.pipeline import RunConfig, ablate, format_ablation
from srnet.synth import teleport_sequence

seeds = [int(s) for s in sys.argv[1:]] or [0, 1, 2]
wins = 0
for seed in seeds:
    rows = ablate(RunConfig.tiny(seed=seed), [teleport_sequence(seed)],
                  [("fam_on", {}), ("fam_off", {"fam": False})])
    print(f"seed {seed}")
    print(format_ablation(rows))
    wins += rows[0].report.JF >= rows[1].report.JF
print(f"alignment on >= off in {wins} of {len(seeds)} seeds")
