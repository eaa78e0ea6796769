"""Slider-quality metrics on a scored sweep.

Three properties make a slider good: range (how far the concept moves),
smoothness (how evenly it moves), and preservation (how little else
changes). Each gets a metric over one sweep's score table:

    SP   = mean perceptual distance to the neutral sample (lower better)
    CR   = mean endpoint alignment gain over both directions (higher better)
    CSM  = std of consecutive normalized alignment gaps (lower better)
    OS   = CR / (1 + SP) + (1 - CSM)

plus dCLIP, the mean absolute alignment change vs neutral, kept for
comparability with older evaluations.
"""

import numpy as np

from sliderkit import (
    AnalyticBackbone,
    AnalyticBackboneSpec,
    ConceptTriplet,
    EuclideanPerceptualScorer,
    ProjectionAlignmentScorer,
    SliderConfig,
    run_slider_sweep,
    score_sweep,
    validate_grid,
)
from sliderkit.metrics import evaluate_table, overall_score

triplet = ConceptTriplet(
    base_prompt="A realistic image of a car.",
    positive_prompt="A realistic image of a car, damaged, dented.",
    negative_prompt="A realistic image of a car, mint condition, shiny.",
    concept_name="car-condition",
)

direction = np.array([0.25, 0.0], dtype=np.float32)
spec = AnalyticBackboneSpec.for_triplet(
    triplet, base_mean=np.zeros(2, dtype=np.float32), direction=direction, data_std=1.0
)
config = SliderConfig(
    total_steps=24, branch_step=2, schedule_kind="karras_sigma", sampler_kind="heun"
)
grid = validate_grid([-3, -2, -1, 0, 1, 2, 3])

sweep = run_slider_sweep(AnalyticBackbone(spec), triplet, grid, config, seed=11)

# The projection scorer mirrors an alignment model: it reads how far the
# sample moved along the concept direction. The euclidean scorer stands
# in for a perceptual distance.
aligner = ProjectionAlignmentScorer(
    triplet, base_mean=np.zeros(2), direction=direction, a_max=4.0
)
table = score_sweep(sweep, aligner, EuclideanPerceptualScorer())

print("score table (eta, a_pos, a_neg, dist):")
for record in table.records:
    print(
        f"  {record.eta:+.0f}  a_pos={record.a_pos:+.4f}  "
        f"a_neg={record.a_neg:+.4f}  dist={record.dist:.4f}"
    )

report = evaluate_table(table)
print()
print(f"CR    = {report.cr:.4f}   (cr_pos {report.cr_pos:.4f}, cr_neg {report.cr_neg:.4f})")
print(f"CSM   = {report.csm:.4f}")
print(f"SP    = {report.sp:.4f}")
print(f"dCLIP = {report.delta_clip:.4f}")
print(f"OS    = {report.os:.4f} = {report.cr:.3f}/(1+{report.sp:.3f}) + (1-{report.csm:.3f})")

print()
print("Known operating points of the OS formula:")
print(f"  overall_score(2.54, 0.062, 0.276) = {overall_score(2.54, 0.062, 0.276):.3f}")
print(f"  overall_score(0.927, 0.019, 0.285) = {overall_score(0.927, 0.019, 0.285):.3f}")
