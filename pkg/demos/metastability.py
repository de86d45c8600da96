"""Passage times between the two sinks of the ergodic two-sink example.

Run with ``python3 demos/metastability.py``; takes a few minutes.
"""

import numpy as np

from driftlab.averaged_dynamics import classify_zeros, tabulate_field
from driftlab.statistics import metastability_report
from driftlab.system_model import preset

s = preset("two_sink_ergodic", 0.05)
cls = classify_zeros(tabulate_field(s))
rep = metastability_report(s, cls, 8, 2 * 10 ** 6, [0.05, 0.04, 0.035], seed=1, start_sink=0)
for row in rep.rows:
    print(f"eps={row['epsilon']:.3f}  masses={np.round(row['masses'], 3)}  "
          f"transitions={row['transitions']}  mean passage={row['mean_passage']:.2f}")
print(f"log mean passage vs 1/eps: slope {rep.slope:.4f}, R^2 {rep.r2:.3f}")
