"""The diffusion model next to the map, for one and for two traps.

Run with ``python3 demos/wf_comparison.py``; takes about half a minute.
"""

import numpy as np

from driftlab.averaged_dynamics import classify_zeros, field_from_functions, tabulate_field
from driftlab.ensemble import uniform_ensemble
from driftlab.statistics import srb_histogram
from driftlab.system_model import preset
from driftlab.wentzell_freidlin import compare_invariant_measures, model_from_field, spectral_gap

f = tabulate_field(preset("one_sink", 1e-3))
for eps in (0.05, 0.02, 0.01):
    print(f"one sink, eps={eps}: spectral gap {spectral_gap(model_from_field(f, eps, 1024)):.4f}")

# two traps separated by forbidden arcs: the map never crosses, the diffusion does
s = preset("two_sink_nonergodic", 0.02)
g = field_from_functions(lambda t: np.sin(4 * np.pi * t), lambda t: 4 * np.pi * np.cos(4 * np.pi * t),
                         lambda t: 0.5 + 0 * t)
cls = classify_zeros(g)
h = srb_histogram(s, uniform_ensemble(500, 1, (0.2, 0.3)), 500, 3000, cls, bins=(16, 256))
rep = compare_invariant_measures(h, model_from_field(g, 0.02))
print(f"two traps: map masses {rep['masses_map']}, diffusion masses "
      f"{np.round(rep['masses_model'], 3).tolist()}, mismatch {rep['qualitative_mismatch']}")
