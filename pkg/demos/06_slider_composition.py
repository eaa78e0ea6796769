"""Composing several sliders in one generation.

Two modes:

  additive    - sum the direction terms: eps_base + sum_j mu_j * (eps+_j
                - eps-_j), evaluated over the cartesian product of the
                per-direction scale lists. On the analytic backbone with
                orthogonal directions the mean shifts superpose.
  concatenate - join the positive (and negative) prompts into one
                triplet and run an ordinary 1-D sweep.
"""

import numpy as np

from sliderkit import ConceptTriplet, SliderConfig, compose_sweep
from sliderkit.backends import AnalyticBackbone, AnalyticBackboneSpec

age = ConceptTriplet(
    "A realistic image of a person.",
    "A realistic image of a person, very old, aged, wrinkly.",
    "A realistic image of a person, detailed facial features, clear skin.",
    "age",
)
smile = ConceptTriplet(
    "A realistic image of a person.",
    "A realistic image of a person, smiling widely, very happy.",
    "A realistic image of a person, frowning, very sad.",
    "smile",
)

# Orthogonal directions in a 3-d latent: age moves axis 0, smile axis 1.
base = np.zeros(3, dtype=np.float32)
v_age = np.array([0.25, 0.0, 0.0], dtype=np.float32)
v_smile = np.array([0.0, 0.4, 0.0], dtype=np.float32)
spec = AnalyticBackboneSpec(
    dimension=3,
    base_mean=base,
    concept_direction=v_age,
    data_std=1.0,
    prompt_means={
        age.base_prompt: base,
        age.positive_prompt: base + v_age,
        age.negative_prompt: base - v_age,
        smile.positive_prompt: base + v_smile,
        smile.negative_prompt: base - v_smile,
    },
)

config = SliderConfig(
    total_steps=24, branch_step=2, schedule_kind="karras_sigma", sampler_kind="heun"
)
scale_lists = [[0.0, 1.0, 2.0], [0.0, 1.5]]

n_seeds = 48
displacement = {}
for seed in range(n_seeds):
    result = compose_sweep(
        AnalyticBackbone(spec), [age, smile], scale_lists, "additive", config, seed
    )
    neutral = result.samples[(0.0, 0.0)].values.astype(np.float64)
    for key, tensor in result.samples.items():
        displacement.setdefault(key, np.zeros(3))
        displacement[key] += (tensor.values - neutral) / n_seeds

print("additive composition: displacement vs 2*mu1*v_age + 2*mu2*v_smile")
for (m1, m2), got in sorted(displacement.items()):
    theory = 2 * m1 * v_age + 2 * m2 * v_smile
    print(
        f"  (age={m1:+.1f}, smile={m2:+.1f})  measured={np.round(got, 3)}  "
        f"theory={np.round(theory, 3)}"
    )

print()
print("concatenate mode merges the prompts into one slider:")
joined_pos = f"{age.positive_prompt} {smile.positive_prompt}"
joined_neg = f"{age.negative_prompt} {smile.negative_prompt}"
spec_joined = AnalyticBackboneSpec(
    dimension=3,
    base_mean=base,
    concept_direction=v_age + v_smile,
    data_std=1.0,
    prompt_means={
        age.base_prompt: base,
        joined_pos: base + v_age + v_smile,
        joined_neg: base - v_age - v_smile,
    },
)
sweep = compose_sweep(
    AnalyticBackbone(spec_joined), [age, smile], [[-1, 0, 1]], "concatenate", config, 0
)
print(f"  joined positive prompt: {sweep.triplet.positive_prompt!r}")
print(f"  grid: {sweep.grid.scales}")
