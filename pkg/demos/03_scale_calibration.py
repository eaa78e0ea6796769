"""Two-stage scale calibration: saturation detection + traversal reshaping.

Picking scales by hand has two failure modes: the effective range varies
wildly per concept (a slider capped at [-3, 3] can miss the whole
effect), and uniform eta steps usually produce non-uniform semantic
steps. The calibration runs in two stages:

  1. Probe a ladder of scales, average alignment a and distance d over
     seeds, and take the largest scale whose ratio r = a / d stays at or
     above a reference line (default 1). Past that point the alignment
     gain no longer pays for the perceptual damage.
  2. Fit a monotone curve through (scale, alignment) inside the
     saturated range and invert it at uniformly spaced alignments, so
     equal slider steps produce equal conceptual progress.
"""

import numpy as np

from sliderkit import (
    MonotoneCurve,
    fit_monotone_reparam,
    resample_scales,
    saturation_scan,
)
from sliderkit.metrics import conceptual_smoothness
from sliderkit.scoring import ScoreRecord, ScoreTable

# --- Stage 1: a synthetic concept that saturates -------------------------
# alignment grows like min(1, 0.4 * eta); distance grows linearly.
probe_grid = [-16, -8, -4, -2, -1, -0.5, 0, 0.5, 1, 2, 4, 8, 16]
scan = saturation_scan(
    lambda eta, seed: (min(1.0, 0.4 * abs(eta)), 0.2 * abs(eta)),
    probe_grid,
    r_ref=1.0,
    n_seeds=1,
)
print("ratio ladder (positive direction):")
for sample in scan.samples:
    if sample.eta > 0:
        marker = "  <-- saturation" if sample.eta == scan.saturation_pos else ""
        print(
            f"  eta={sample.eta:>5}  a={sample.alignment:.3f}  "
            f"d={sample.distance:.3f}  r={sample.ratio:.3f}{marker}"
        )
print(f"saturation point: +{scan.saturation_pos} / -{scan.saturation_neg}")

# --- Stage 2: reshape a curved traversal ---------------------------------
# Alignment follows sqrt(eta): early steps change a lot, late steps barely.
probes = [0.0, 0.5, 1.0, 2.0, 4.0]
curve = fit_monotone_reparam([(e, np.sqrt(e / 4.0)) for e in probes])
uniform = np.linspace(0, 4, 4)
reshaped = resample_scales(curve, 4)

print()
print("uniform scales  :", [round(v, 3) for v in uniform])
print("  alignments    :", [round(float(np.sqrt(v / 4.0)), 3) for v in uniform])
print("reshaped scales :", [round(v, 3) for v in reshaped])
print("  alignments    :", [round(float(np.sqrt(v / 4.0)), 3) for v in reshaped])


def table_for(grid):
    records = []
    for eta in sorted(set(np.concatenate([np.asarray(grid), -np.asarray(grid)]))):
        a = float(np.sqrt(abs(eta) / 4.0))
        records.append(
            ScoreRecord(float(eta), a if eta >= 0 else 0.0, a if eta <= 0 else 0.0,
                        0.0 if eta == 0 else 0.1)
        )
    return ScoreTable(records=tuple(records), aligner_name="syn",
                      perceptual_name="syn", a_max=1.0)


print()
print(f"smoothness on the uniform grid : {conceptual_smoothness(table_for(uniform)):.4f}")
print(f"smoothness on the reshaped grid: {conceptual_smoothness(table_for(reshaped)):.4f}")
print("(lower is smoother; the reshaped grid equalizes the alignment gaps)")
