"""A small end-to-end benchmark with reports and verification.

The benchmark protocol: for every concept, run several sliders (one per
seed), score each sweep, compute the metrics, then average per concept
first and across concepts second (so every concept counts equally, no
matter how many sliders it has). The run persists every sweep, score
table, and metric report, plus summary.{json,csv,md}; verify_report
recomputes the summary from the per-slider CSV and must match exactly.
"""

import tempfile

from sliderkit.core import ConceptTriplet, SliderConfig
from sliderkit.harness import (
    AnalyticBinding,
    BackendBinding,
    BenchmarkPlan,
    ScorerBinding,
    run_benchmark,
    verify_report,
)

concepts = (
    ConceptTriplet(
        "A realistic image of a person.",
        "A realistic image of a person, smiling widely, very happy.",
        "A realistic image of a person, frowning, very sad.",
        "smiling",
    ),
    ConceptTriplet(
        "A realistic image of a person.",
        "A realistic image of a person, very old, aged, wrinkly.",
        "A realistic image of a person, detailed facial features, clear skin.",
        "age",
    ),
    ConceptTriplet(
        "A realistic image of a room.",
        "A realistic image of a room, cluttered, disorganized, dirty.",
        "A realistic image of a room, super organized, clean, tidy.",
        "cluttered-room",
    ),
)

out_dir = tempfile.mkdtemp(prefix="sliderbench-")
plan = BenchmarkPlan(
    concepts=concepts,
    sliders_per_concept=5,
    backend=BackendBinding(kind="analytic", analytic=AnalyticBinding(dimension=6)),
    scorers=(ScorerBinding(a_max=4.0),),
    sampler=SliderConfig(
        total_steps=16, branch_step=3, schedule_kind="karras_sigma", sampler_kind="heun"
    ),
    out_dir=out_dir,
    scales=(-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0),
    workers=4,
)

report = run_benchmark(plan)

print(f"ran {len(report['sliders'])} sliders into {out_dir}")
print(f"failed: {report['failed_count']}")
print()
summary = report["summary"]["default"]
print("per-concept means:")
for concept, stats in summary["per_concept"].items():
    print(
        f"  {concept:<16} cr={stats['cr']:.3f}  csm={stats['csm']:.3f}  "
        f"sp={stats['sp']:.3f}  os={stats['os']:.3f}"
    )
print()
print(
    f"cross-concept: cr={summary['mean']['cr']:.3f} ± {summary['std']['cr']:.3f}, "
    f"os={summary['os']:.3f}"
)

print()
with open(f"{out_dir}/summary.md") as fh:
    print(fh.read())

problems = verify_report(out_dir)
print("verification:", "clean" if not problems else problems)
