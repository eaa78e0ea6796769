"""Command-line surface.

Exit codes: 0 success, 1 configuration error, 2 runtime failure,
3 conformance failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import List, Optional

import numpy as np

from .calibration import CalibrationConfig, calibrate
from .core import ConceptTriplet, SliderConfig, SweepResult, validate_grid
from .errors import ConfigError, SliderKitError
from .harness import (
    AnalyticBinding,
    BackendBinding,
    concept_direction,
    load_concept_specs,
    protocol_check,
    run_benchmark,
    verify_report,
)
from .metrics import evaluate_table
from .protocol import AdapterConnection
from .scoring import (
    EuclideanPerceptualScorer,
    ExternalAlignmentScorer,
    ExternalPerceptualScorer,
    ProjectionAlignmentScorer,
    score_sweep,
)
from .sampler import run_slider_sweep


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_scales(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad scale list {text!r}: {exc}")


def _select_triplet(path: str, name: Optional[str]) -> ConceptTriplet:
    triplets = load_concept_specs(path)
    if name is None:
        return triplets[0]
    for t in triplets:
        if t.concept_name == name:
            return t
    raise ConfigError(
        f"no concept named {name!r} in {path}; available: "
        + ", ".join(t.concept_name for t in triplets)
    )


def _sampler_config(args) -> SliderConfig:
    return SliderConfig(
        total_steps=args.steps,
        branch_step=args.branch_step,
        guidance=args.guidance,
        schedule_kind={"vp": "vp_discrete", "karras": "karras_sigma"}[args.schedule],
        sampler_kind=args.sampler,
        guidance_mode={"score": "score_space", "embedding": "embedding_space"}[args.mode],
    )


def _analytic_binding(args) -> AnalyticBinding:
    return AnalyticBinding(
        dimension=args.dimension,
        data_std=args.data_std,
        direction_norm=args.direction_norm,
        a_max=args.a_max,
    )


def _add_backend_flags(parser):
    parser.add_argument("--backend", default="analytic",
                        help="analytic | external:HOST:PORT | cmd:COMMAND")
    parser.add_argument("--dimension", type=int, default=8)
    parser.add_argument("--data-std", type=float, default=1.0)
    parser.add_argument("--direction-norm", type=float, default=0.25)
    parser.add_argument("--a-max", type=float, default=1.0)


def _add_sampler_flags(parser):
    parser.add_argument("--steps", type=int, default=50)
    parser.add_argument("--branch-step", type=int, default=15)
    parser.add_argument("--guidance", type=float, default=7.5)
    parser.add_argument("--sampler", choices=("euler", "heun"), default="euler")
    parser.add_argument("--schedule", choices=("vp", "karras"), default="vp")
    parser.add_argument("--mode", choices=("score", "embedding"), default="score")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sliderkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="generate one slider sweep")
    p.add_argument("--concepts", required=True)
    p.add_argument("--name")
    p.add_argument("--scales", default="-3,-2,-1,0,1,2,3")
    p.add_argument("--calibration", help="calibration JSON supplying the scale grid")
    p.add_argument("--seed", type=int, default=0)
    _add_backend_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("calibrate", help="saturation scan + traversal resampling")
    p.add_argument("--concepts", required=True)
    p.add_argument("--name")
    p.add_argument("--probe", default="0,0.5,1,2,4,8,16")
    p.add_argument("--r-ref", type=float, default=1.0)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--n-out", type=int, default=7)
    _add_backend_flags(p)
    _add_sampler_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--curve-csv", help="also write the (eta, a, d, r) probe curve")

    p = sub.add_parser("evaluate", help="score a stored sweep and compute metrics")
    p.add_argument("--sweep", required=True, help="directory containing sweep.json")
    p.add_argument("--aligner", default="analytic")
    p.add_argument("--perceptual", default="analytic")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="run a benchmark plan")
    p.add_argument("--plan", required=True)

    p = sub.add_parser("verify-report", help="recompute a summary from its CSV")
    p.add_argument("directory")

    p = sub.add_parser("protocol-check", help="adapter conformance fixtures")
    p.add_argument("target", help="external:HOST:PORT | cmd:COMMAND")

    return parser


def _cmd_sweep(args) -> int:
    triplet = _select_triplet(args.concepts, args.name)
    binding = BackendBinding.parse(args.backend, _analytic_binding(args))
    if args.calibration:
        from .calibration import load_calibration_scales

        grid = validate_grid(load_calibration_scales(args.calibration))
    else:
        grid = validate_grid(_parse_scales(args.scales))
    config = _sampler_config(args)
    denoiser, conn = binding.open_denoiser(triplet)
    try:
        sweep = run_slider_sweep(denoiser, triplet, grid, config, args.seed)
    finally:
        if conn is not None:
            conn.close()
    from .harness import _canonical_json, _write

    doc = {"sweep": sweep.to_dict(), "backend": binding.to_dict()}
    _write(os.path.join(args.out, "sweep.json"), _canonical_json(doc))
    print(f"wrote {os.path.join(args.out, 'sweep.json')} ({len(grid.scales)} samples)")
    return 0


def _cmd_calibrate(args) -> int:
    triplet = _select_triplet(args.concepts, args.name)
    binding = BackendBinding.parse(args.backend, _analytic_binding(args))
    config = _sampler_config(args)
    magnitudes = tuple(sorted({abs(v) for v in _parse_scales(args.probe)}))
    cal = CalibrationConfig(
        probe_magnitudes=magnitudes, r_ref=args.r_ref, n_seeds=args.seeds, n_out=args.n_out
    )
    analytic = _analytic_binding(args)
    denoiser, conn = binding.open_denoiser(triplet)
    aligner = ProjectionAlignmentScorer(
        triplet,
        base_mean=np.zeros(analytic.dimension),
        direction=concept_direction(triplet.concept_name, analytic.dimension,
                                    analytic.direction_norm),
        a_max=analytic.a_max,
    )
    try:
        result = calibrate(
            triplet, denoiser, aligner, EuclideanPerceptualScorer(), config, cal
        )
    finally:
        if conn is not None:
            conn.close()
    result.save(args.out)
    if args.curve_csv:
        with open(args.curve_csv, "w", encoding="utf-8") as fh:
            fh.write("eta,alignment,distance,ratio\n")
            for s in result.samples:
                fh.write(f"{s.eta!r},{s.alignment!r},{s.distance!r},{s.ratio!r}\n")
    print(
        f"saturation +{result.saturation_pos} / -{result.saturation_neg}, "
        f"{result.generation_count} generations, wrote {args.out}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    path = os.path.join(args.sweep, "sweep.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}")
    sweep = SweepResult.from_dict(doc["sweep"])
    backend = doc.get("backend", {})
    if args.aligner == "analytic":
        if backend.get("kind") != "analytic":
            raise ConfigError("analytic aligner needs a sweep from the analytic backbone")
        name = sweep.triplet.concept_name
        norm = float(backend.get("direction_norms", {}).get(name, backend["direction_norm"]))
        aligner = ProjectionAlignmentScorer(
            sweep.triplet,
            base_mean=np.zeros(int(backend["dimension"])),
            direction=concept_direction(name, int(backend["dimension"]), norm),
            a_max=float(backend.get("a_max", 1.0)),
        )
        aligner_conn = None
    else:
        aligner_conn = AdapterConnection.open(args.aligner)
        aligner = ExternalAlignmentScorer(aligner_conn)
    if args.perceptual == "analytic":
        perceptual = EuclideanPerceptualScorer()
        perceptual_conn = None
    else:
        perceptual_conn = AdapterConnection.open(args.perceptual)
        perceptual = ExternalPerceptualScorer(perceptual_conn)
    from .scoring import CACHE_DIR_ENV_VAR, ScoreCache

    cache = ScoreCache() if os.environ.get(CACHE_DIR_ENV_VAR) else None
    try:
        table = score_sweep(sweep, aligner, perceptual, cache=cache)
    finally:
        for conn in (aligner_conn, perceptual_conn):
            if conn is not None:
                conn.close()
    report = evaluate_table(table)
    from .harness import _canonical_json, _write

    _write(args.out, _canonical_json({"scores": table.to_dict(), "metrics": report.to_dict()}))
    print(f"cr={report.cr:.4g} csm={report.csm:.4g} sp={report.sp:.4g} os={report.os:.4g}")
    return 0


def _cmd_bench(args) -> int:
    from .harness import load_plans

    for plan in load_plans(args.plan):
        report = run_benchmark(plan)
        for aspect, stats in report["summary"].items():
            print(
                f"[{plan.out_dir}] [{aspect}] cr={stats['mean']['cr']:.4g} "
                f"csm={stats['mean']['csm']:.4g} sp={stats['mean']['sp']:.4g} "
                f"os={stats['os']:.4g} failed={report['failed_count']}"
            )
    return 0


def _cmd_verify(args) -> int:
    problems = verify_report(args.directory)
    if problems:
        for problem in problems:
            print(f"MISMATCH {problem}")
        return 2
    print("report verified: summary matches per-slider CSV")
    return 0


def _cmd_protocol_check(args) -> int:
    results = protocol_check(args.target)
    failed = 0
    for result in results:
        status = "PASS" if result.passed else "FAIL"
        print(f"{status} {result.name}: {result.detail}")
        failed += 0 if result.passed else 1
    if failed:
        print(f"{failed}/{len(results)} fixtures failed")
        return 3
    print(f"all {len(results)} fixtures passed")
    return 0


_COMMANDS = {
    "sweep": _cmd_sweep,
    "calibrate": _cmd_calibrate,
    "evaluate": _cmd_evaluate,
    "bench": _cmd_bench,
    "verify-report": _cmd_verify,
    "protocol-check": _cmd_protocol_check,
}


def _join_dash_values(argv: List[str]) -> List[str]:
    """Let `--scales "-3,-2,..."` work: argparse would read the value as a
    flag, so glue list-valued options to their argument with '='."""
    out = []
    skip = False
    for i, token in enumerate(argv):
        if skip:
            skip = False
            continue
        if token in ("--scales", "--probe") and i + 1 < len(argv) and argv[i + 1].startswith("-"):
            out.append(f"{token}={argv[i + 1]}")
            skip = True
        else:
            out.append(token)
    return out


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(_join_dash_values(list(argv)))
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except SliderKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
