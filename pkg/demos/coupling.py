"""Holonomy and coupling of two stacked standard pairs on the one-sink example.

Run with ``python3 demos/coupling.py``; takes under a minute.
"""

from driftlab.coupling_lab import (holonomy_map, holonomy_regularity_check, iterate_coupling,
                                   matched_couple)
from driftlab.ensemble import default_constants, flat_pair
from driftlab.system_model import preset

s = preset("one_sink", 1e-3)
pair = flat_pair(s, 0.3, 0.5, constants=default_constants(s, c2=1.0))
couple = matched_couple(pair, 1.0)

table = holonomy_map(s, couple.pair0, couple.pair1, 1000)
for k, v in holonomy_regularity_check(table).items():
    print(f"{k:24s} {v}")

run = iterate_coupling(s, couple, 4000, steps=5, samples=32)
first = run.first
print(f"coupled mass {first.m_C:.4f} (c_* = {first.c_star:.1f}, D = {first.D_used:.4f})")
for st in run.steps:
    print(f"step {st['step']}: median distance {st['median_distance']:.3e}, "
          f"factor {st['factor']:.4f}")
