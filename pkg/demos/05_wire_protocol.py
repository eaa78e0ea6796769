"""Driving a real backbone seat: the wire protocol and its adapter.

Heavy models never live inside the engine; they sit behind an adapter
process speaking newline-delimited JSON over stdio or TCP. This demo
launches the reference adapter (the separate slider-adapter package) in
mock mode, runs the conformance fixtures against it, and then shows the
dual-path guarantee: a sweep through the wire is bit-identical to the
same sweep computed in-process, because the mock reproduces the
engine's float32 arithmetic operation for operation.
"""

import sys

import numpy as np

from sliderkit import (
    AnalyticBackbone,
    AnalyticBackboneSpec,
    ConceptTriplet,
    ExternalDenoiser,
    SliderConfig,
    run_slider_sweep,
    validate_grid,
)
from sliderkit.harness import protocol_check
from sliderkit.protocol import AdapterConnection

try:
    import slider_adapter  # noqa: F401
except ImportError:
    print("the slider-adapter package is not installed; run: pip install -e adapter/")
    sys.exit(1)

triplet = ConceptTriplet(
    base_prompt="A realistic image of a person.",
    positive_prompt="A realistic image of a person, wearing glasses.",
    negative_prompt="A realistic image of a person, clear face.",
    concept_name="glasses",
)

adapter_cmd = (
    f"cmd:{sys.executable} -m slider_adapter --mode mock --transport stdio"
    " --dimension 2 --data-std 1.0 --base-mean 0,0 --direction 0.25,0"
    f' --base-prompt "{triplet.base_prompt}"'
    f' --positive-prompt "{triplet.positive_prompt}"'
    f' --negative-prompt "{triplet.negative_prompt}"'
)

print("conformance fixtures:")
for result in protocol_check(adapter_cmd):
    status = "PASS" if result.passed else "FAIL"
    print(f"  {status} {result.name}: {result.detail}")

spec = AnalyticBackboneSpec.for_triplet(
    triplet, base_mean=np.zeros(2, dtype=np.float32),
    direction=np.array([0.25, 0.0], dtype=np.float32), data_std=1.0,
)
config = SliderConfig(
    total_steps=12, branch_step=2, schedule_kind="karras_sigma", sampler_kind="heun"
)
grid = validate_grid([-3, -2, -1, 0, 1, 2, 3])

print()
print("dual path, seed 0:")
local = run_slider_sweep(AnalyticBackbone(spec), triplet, grid, config, seed=0)
with AdapterConnection.open(adapter_cmd) as conn:
    remote = run_slider_sweep(ExternalDenoiser(conn), triplet, grid, config, seed=0)

for eta in grid.scales:
    same = local.samples[eta].bit_equal(remote.samples[eta])
    print(f"  eta={eta:+.0f}  bit-identical={same}  value={np.round(local.samples[eta].values, 4)}")
