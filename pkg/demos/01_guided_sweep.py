"""Guided sweep on the analytic Gaussian backbone.

A concept slider is defined by three prompts: a base scene, a positive
pole, and a negative pole. At each denoising step past the branch point
the engine combines three noise predictions:

    eps_mod = eps_base + eta * (eps_pos - eps_neg)

On the analytic backbone the three conditions are Gaussians with means
m0, m0 + v, m0 - v, so the guided prediction is exactly the prediction
of a Gaussian with mean m0 + 2*eta*v. That makes the sweep outcome
predictable: the terminal sample moves along v proportionally to eta.
"""

import numpy as np

from sliderkit import (
    AnalyticBackbone,
    AnalyticBackboneSpec,
    ConceptTriplet,
    SliderConfig,
    run_slider_sweep,
    validate_grid,
)

triplet = ConceptTriplet(
    base_prompt="A realistic image of a person.",
    positive_prompt="A realistic image of a person, smiling widely, very happy.",
    negative_prompt="A realistic image of a person, frowning, very sad.",
    concept_name="smiling",
)

direction = np.array([0.25, 0.0], dtype=np.float32)
spec = AnalyticBackboneSpec.for_triplet(
    triplet, base_mean=np.zeros(2, dtype=np.float32), direction=direction, data_std=1.0
)

config = SliderConfig(
    total_steps=24,
    branch_step=2,
    schedule_kind="karras_sigma",
    sampler_kind="heun",
)
grid = validate_grid([-3, -2, -1, 0, 1, 2, 3])

print("one sweep, one seed:")
sweep = run_slider_sweep(AnalyticBackbone(spec), triplet, grid, config, seed=0)
for eta in grid.scales:
    print(f"  eta={eta:+.0f}  sample={np.round(sweep.samples[eta].values, 4)}")

print()
print("seed-averaged displacement from the neutral branch vs theory 2*eta*v:")
n_seeds = 64
displacement = {eta: np.zeros(2) for eta in grid.scales}
for seed in range(n_seeds):
    sweep = run_slider_sweep(AnalyticBackbone(spec), triplet, grid, config, seed=seed)
    neutral = sweep.samples[0.0].values.astype(np.float64)
    for eta in grid.scales:
        displacement[eta] += (sweep.samples[eta].values - neutral) / n_seeds

for eta in grid.scales:
    theory = 2.0 * eta * direction
    measured = displacement[eta]
    print(
        f"  eta={eta:+.0f}  measured={np.round(measured, 4)}  "
        f"theory={np.round(theory, 4)}"
    )

print()
print("The match is exact up to the branch-point contraction (~0.3% here):")
print("the shared prefix and step-keyed noise make every branch differ only")
print("by the guidance term, so the displacement is deterministic per seed.")
