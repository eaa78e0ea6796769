"""Concept-spec ingestion, benchmark orchestration, reports, conformance.

A benchmark plan names concepts, a backbone, scorer pairs, a scale
source (explicit grid or calibration files), and a seed count. Each
(concept, seed) slider is an independent job: sweep, score, metrics.
Failed sliders are contained and counted rather than aborting the run.
Outputs are written as

    out/{concept}/{seed}/sweep.json, scores.json, metrics.json
    out/summary.json, out/summary.csv, out/summary.md

and are byte-identical across runs and worker counts: jobs are pure,
results are assembled in a fixed order, and floats are serialized via
repr (exact round-trip).
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import io
import json
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from .backends import AnalyticBackbone, AnalyticBackboneSpec, ExternalDenoiser
from .calibration import load_calibration_scales
from .core import ConceptTriplet, ScaleGrid, SliderConfig, validate_grid
from .errors import (
    ConfigError,
    IoError,
    MissingField,
    ParseError,
    ProtocolError,
    RemoteFailure,
    SliderKitError,
)
from .metrics import (
    DEFAULT_METRIC_CONFIG,
    MetricConfig,
    MetricReport,
    aggregate_benchmark,
    evaluate_table,
    overall_score,
)
from .protocol import AdapterConnection
from .sampler import run_slider_sweep
from .scoring import (
    EuclideanPerceptualScorer,
    ExternalAlignmentScorer,
    ExternalPerceptualScorer,
    ProjectionAlignmentScorer,
    score_sweep,
)

CSV_COLUMNS = ("concept", "seed", "cr_pos", "cr_neg", "cr", "csm", "sp", "delta_clip", "os")
METRIC_COLUMNS = CSV_COLUMNS[2:]


# ---------------------------------------------------------------------------
# Concept specs
# ---------------------------------------------------------------------------

def slugify(text: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug[:48] or "concept"


def load_concept_specs(path: str) -> List[ConceptTriplet]:
    """Parse a concept file: a YAML sequence of base/positive/negative maps.

    Names default to a slug of the positive prompt. Parse errors carry
    the line number; missing keys name the entry index.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}")
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else "?"
        raise ParseError(f"{path}:{line}: {exc}")
    if data is None:
        raise ParseError(f"{path}: file is empty")
    if not isinstance(data, list) or not data:
        raise ParseError(f"{path}: expected a non-empty sequence of concept entries")
    triplets = []
    names = set()
    for index, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: entry {index} is not a map")
        for key in ("base", "positive", "negative"):
            if key not in entry or not entry[key]:
                raise MissingField(index, key)
        name = entry.get("name") or slugify(entry["positive"])
        if name in names:
            name = f"{name}-{index}"
        names.add(name)
        triplets.append(
            ConceptTriplet(
                base_prompt=str(entry["base"]),
                positive_prompt=str(entry["positive"]),
                negative_prompt=str(entry["negative"]),
                concept_name=name,
            )
        )
    return triplets


# ---------------------------------------------------------------------------
# Backend / scorer bindings
# ---------------------------------------------------------------------------

def concept_direction(name: str, dimension: int, norm: float) -> np.ndarray:
    """Deterministic per-concept direction: a hashed basis axis."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    axis = int.from_bytes(digest, "little") % dimension
    direction = np.zeros(dimension, dtype=np.float32)
    direction[axis] = norm
    return direction


@dataclass(frozen=True)
class AnalyticBinding:
    dimension: int = 8
    data_std: float = 1.0
    direction_norm: float = 0.25
    a_max: float = 1.0
    direction_norms: Optional[Dict[str, float]] = None  # per-concept overrides

    def norm_for(self, concept: str) -> float:
        return (self.direction_norms or {}).get(concept, self.direction_norm)

    def direction_for(self, concept: str) -> np.ndarray:
        return concept_direction(concept, self.dimension, self.norm_for(concept))

    def spec_for(self, triplet: ConceptTriplet) -> AnalyticBackboneSpec:
        return AnalyticBackboneSpec.for_triplet(
            triplet,
            base_mean=np.zeros(self.dimension, dtype=np.float32),
            direction=self.direction_for(triplet.concept_name),
            data_std=self.data_std,
        )

    def to_dict(self) -> dict:
        doc = {
            "kind": "analytic",
            "dimension": self.dimension,
            "data_std": self.data_std,
            "direction_norm": self.direction_norm,
            "a_max": self.a_max,
        }
        if self.direction_norms:
            doc["direction_norms"] = dict(sorted(self.direction_norms.items()))
        return doc


@dataclass(frozen=True)
class BackendBinding:
    """Either the built-in analytic backbone or an external adapter."""

    kind: str  # "analytic" | "external"
    analytic: AnalyticBinding = AnalyticBinding()
    target: str = ""

    @classmethod
    def parse(cls, text: str, analytic: Optional[AnalyticBinding] = None) -> "BackendBinding":
        if text == "analytic":
            return cls(kind="analytic", analytic=analytic or AnalyticBinding())
        if text.startswith(("external:", "cmd:")):
            return cls(kind="external", target=text)
        raise ConfigError(f"backend must be analytic, external:ADDR or cmd:PATH, got {text!r}")

    def open_denoiser(self, triplet: ConceptTriplet):
        if self.kind == "analytic":
            return AnalyticBackbone(self.analytic.spec_for(triplet)), None
        conn = AdapterConnection.open(self.target)
        return ExternalDenoiser(conn), conn

    def to_dict(self) -> dict:
        if self.kind == "analytic":
            return self.analytic.to_dict()
        return {"kind": "external", "target": self.target}


@dataclass(frozen=True)
class ScorerBinding:
    aligner: str = "analytic"
    perceptual: str = "analytic"
    aspect: str = "default"
    a_max: float = 1.0

    def open(self, triplet: ConceptTriplet, analytic: AnalyticBinding):
        """Returns (aligner, perceptual, connections-to-close)."""
        conns = []
        if self.aligner == "analytic":
            aligner = ProjectionAlignmentScorer(
                triplet,
                base_mean=np.zeros(analytic.dimension),
                direction=analytic.direction_for(triplet.concept_name),
                a_max=self.a_max,
            )
        else:
            conn = AdapterConnection.open(self.aligner)
            conns.append(conn)
            aligner = ExternalAlignmentScorer(conn)
        if self.perceptual == "analytic":
            perceptual = EuclideanPerceptualScorer()
        else:
            conn = AdapterConnection.open(self.perceptual)
            conns.append(conn)
            perceptual = ExternalPerceptualScorer(conn)
        return aligner, perceptual, conns

    def to_dict(self) -> dict:
        return {
            "aligner": self.aligner,
            "perceptual": self.perceptual,
            "aspect": self.aspect,
            "a_max": self.a_max,
        }


# ---------------------------------------------------------------------------
# Benchmark plan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkPlan:
    concepts: Tuple[ConceptTriplet, ...]
    sliders_per_concept: int
    backend: BackendBinding
    scorers: Tuple[ScorerBinding, ...]
    sampler: SliderConfig
    out_dir: str
    scales: Optional[Tuple[float, ...]] = None
    calibration_dir: Optional[str] = None
    seed_base: int = 0
    workers: int = 1
    metric_config: MetricConfig = DEFAULT_METRIC_CONFIG

    def __post_init__(self):
        if self.sliders_per_concept < 1:
            raise ConfigError("sliders_per_concept must be >= 1")
        if (self.scales is None) == (self.calibration_dir is None):
            raise ConfigError("exactly one scale source required: scales or calibration_dir")
        if not self.scorers:
            raise ConfigError("at least one scorer binding required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def grid_for(self, concept: str) -> Tuple[ScaleGrid, Optional[str]]:
        """Resolve the scale source; returns (grid, calibration file hash)."""
        if self.scales is not None:
            return validate_grid(self.scales), None
        path = os.path.join(self.calibration_dir, f"{concept}.json")
        if not os.path.exists(path):
            raise ConfigError(f"no calibration file for concept {concept!r} at {path}")
        with open(path, "rb") as fh:
            digest = hashlib.blake2b(fh.read(), digest_size=16).hexdigest()
        return validate_grid(load_calibration_scales(path)), digest


def _read_plan_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}")
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}")
    if not isinstance(data, dict):
        raise ParseError(f"{path}: plan must be a map")
    return data


def load_plans(path: str) -> List["BenchmarkPlan"]:
    """A plan naming both a scale grid and a calibration directory expands
    into two runs (out/scales-default and out/scales-calibrated) so the
    analyst can compare and pick; otherwise one plan is returned."""
    data = _read_plan_file(path)
    if "scales" in data and data.get("calibration_dir"):
        out = data.get("out", "out")
        default = dict(data, out=os.path.join(out, "scales-default"))
        default.pop("calibration_dir", None)
        calibrated = dict(data, out=os.path.join(out, "scales-calibrated"))
        calibrated.pop("scales", None)
        return [_plan_from_data(default, path), _plan_from_data(calibrated, path)]
    return [_plan_from_data(data, path)]


def load_plan(path: str) -> BenchmarkPlan:
    return _plan_from_data(_read_plan_file(path), path)


def _plan_from_data(data: dict, path: str) -> BenchmarkPlan:

    concepts_field = data.get("concepts")
    if isinstance(concepts_field, str):
        base_dir = os.path.dirname(os.path.abspath(path))
        concepts = load_concept_specs(os.path.join(base_dir, concepts_field))
    elif isinstance(concepts_field, list):
        triplets = []
        for index, entry in enumerate(concepts_field):
            for key in ("base", "positive", "negative"):
                if key not in entry:
                    raise MissingField(index, key)
            triplets.append(
                ConceptTriplet(
                    base_prompt=entry["base"],
                    positive_prompt=entry["positive"],
                    negative_prompt=entry["negative"],
                    concept_name=entry.get("name") or slugify(entry["positive"]),
                )
            )
        concepts = triplets
    else:
        raise ParseError(f"{path}: concepts must be a path or an inline list")

    backend_field = data.get("backend", {"kind": "analytic"})
    overrides = backend_field.get("direction_norms")
    analytic = AnalyticBinding(
        dimension=int(backend_field.get("dimension", 8)),
        data_std=float(backend_field.get("data_std", 1.0)),
        direction_norm=float(backend_field.get("direction_norm", 0.25)),
        a_max=float(backend_field.get("a_max", 1.0)),
        direction_norms={str(k): float(v) for k, v in overrides.items()} if overrides else None,
    )
    if backend_field.get("kind", "analytic") == "analytic":
        backend = BackendBinding(kind="analytic", analytic=analytic)
    else:
        backend = BackendBinding(
            kind="external", analytic=analytic, target=backend_field["target"]
        )

    scorer_entries = data.get("scorers", [{}])
    scorers = tuple(
        ScorerBinding(
            aligner=e.get("aligner", "analytic"),
            perceptual=e.get("perceptual", "analytic"),
            aspect=e.get("aspect", "default"),
            a_max=float(e.get("a_max", analytic.a_max)),
        )
        for e in scorer_entries
    )

    sampler_field = dict(data.get("sampler", {}))
    schedule = sampler_field.pop("schedule", None)
    if schedule is not None:
        sampler_field["schedule_kind"] = {"vp": "vp_discrete", "karras": "karras_sigma"}.get(
            schedule, schedule
        )
    sampler = sampler_field.pop("sampler", None)
    if sampler is not None:
        sampler_field["sampler_kind"] = sampler
    mode = sampler_field.pop("mode", None)
    if mode is not None:
        sampler_field["guidance_mode"] = {"score": "score_space", "embedding": "embedding_space"}.get(
            mode, mode
        )
    config = SliderConfig(**sampler_field)

    return BenchmarkPlan(
        concepts=tuple(concepts),
        sliders_per_concept=int(data.get("sliders_per_concept", 10)),
        backend=backend,
        scorers=scorers,
        sampler=config,
        out_dir=data.get("out", "out"),
        scales=tuple(data["scales"]) if "scales" in data else None,
        calibration_dir=data.get("calibration_dir"),
        seed_base=int(data.get("seed_base", 0)),
        workers=int(data.get("workers", 1)),
    )


# ---------------------------------------------------------------------------
# Benchmark execution
# ---------------------------------------------------------------------------

def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _run_slider_job(plan: BenchmarkPlan, triplet: ConceptTriplet, seed: int) -> dict:
    grid, cal_hash = plan.grid_for(triplet.concept_name)
    denoiser, conn = plan.backend.open_denoiser(triplet)
    try:
        sweep = run_slider_sweep(denoiser, triplet, grid, plan.sampler, seed)
    finally:
        if conn is not None:
            conn.close()
    tables = {}
    reports = {}
    for binding in plan.scorers:
        aligner, perceptual, conns = binding.open(triplet, plan.backend.analytic)
        try:
            table = score_sweep(sweep, aligner, perceptual, aspect=binding.aspect)
        finally:
            for c in conns:
                c.close()
        tables[binding.aspect] = table
        reports[binding.aspect] = evaluate_table(table, plan.metric_config)
    return {
        "concept": triplet.concept_name,
        "seed": seed,
        "sweep": sweep,
        "tables": tables,
        "reports": reports,
        "calibration_hash": cal_hash,
    }


def run_benchmark(plan: BenchmarkPlan) -> dict:
    """Execute the full plan and persist sweeps, tables, and the report."""
    jobs = [
        (concept_index, triplet, plan.seed_base + s)
        for concept_index, triplet in enumerate(plan.concepts)
        for s in range(plan.sliders_per_concept)
    ]
    results: Dict[Tuple[int, int], dict] = {}
    failures: Dict[Tuple[int, int], str] = {}

    def run_one(job):
        """Contain-and-count: a crashed slider becomes a failure row."""
        concept_index, triplet, seed = job
        try:
            return (concept_index, seed), _run_slider_job(plan, triplet, seed), None
        except SliderKitError as exc:
            return (concept_index, seed), None, str(exc)

    if plan.workers == 1:
        outcomes = map(run_one, jobs)
    else:
        pool = concurrent.futures.ThreadPoolExecutor(max_workers=plan.workers)
        outcomes = pool.map(run_one, jobs)
    for key, value, error in outcomes:
        if error is None:
            results[key] = value
        else:
            failures[key] = error
    if plan.workers != 1:
        pool.shutdown()

    # Deterministic assembly order.
    slider_rows = []
    reports_by_concept: Dict[str, Dict[str, List[MetricReport]]] = {}
    calibration_hashes = {}
    for concept_index, triplet in enumerate(plan.concepts):
        for s in range(plan.sliders_per_concept):
            seed = plan.seed_base + s
            key = (concept_index, seed)
            if key not in results:
                continue
            result = results[key]
            if result["calibration_hash"]:
                calibration_hashes[triplet.concept_name] = result["calibration_hash"]
            for binding in plan.scorers:
                report = result["reports"][binding.aspect]
                slider_rows.append(
                    {
                        "concept": triplet.concept_name,
                        "seed": seed,
                        "aspect": binding.aspect,
                        **report.to_dict(),
                    }
                )
                reports_by_concept.setdefault(binding.aspect, {}).setdefault(
                    triplet.concept_name, []
                ).append(report)
            _persist_slider(plan, triplet, seed, result)

    summaries = {
        aspect: aggregate_benchmark(groups, plan.metric_config).to_dict()
        for aspect, groups in sorted(reports_by_concept.items())
    }
    failure_rows = [
        {
            "concept": plan.concepts[ci].concept_name,
            "seed": seed,
            "error": failures[(ci, seed)],
        }
        for (ci, seed) in sorted(failures)
    ]
    report = {
        "plan": {
            "backend": plan.backend.to_dict(),
            "scorers": [b.to_dict() for b in plan.scorers],
            "sampler": plan.sampler.to_dict(),
            "sliders_per_concept": plan.sliders_per_concept,
            "seed_base": plan.seed_base,
            "scales": list(plan.scales) if plan.scales is not None else None,
            "calibration_hashes": calibration_hashes or None,
            "concepts": [t.concept_name for t in plan.concepts],
        },
        "failed_count": len(failure_rows),
        "failed": failure_rows,
        "sliders": slider_rows,
        "summary": summaries,
    }
    emit_report(report, plan.out_dir)
    return report


def _persist_slider(plan: BenchmarkPlan, triplet: ConceptTriplet, seed: int, result: dict):
    base = os.path.join(plan.out_dir, triplet.concept_name, str(seed))
    sweep_doc = {"sweep": result["sweep"].to_dict(), "backend": plan.backend.to_dict()}
    _write(os.path.join(base, "sweep.json"), _canonical_json(sweep_doc))
    scores_doc = {aspect: table.to_dict() for aspect, table in result["tables"].items()}
    _write(os.path.join(base, "scores.json"), _canonical_json(scores_doc))
    metrics_doc = {aspect: rep.to_dict() for aspect, rep in result["reports"].items()}
    _write(os.path.join(base, "metrics.json"), _canonical_json(metrics_doc))


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _fmt_std(value: float) -> str:
    text = f"{value:.3g}"
    if text.startswith("0."):
        text = text[1:]
    elif text.startswith("-0."):
        text = "-" + text[2:]
    return text


def _csv_text(report: dict) -> str:
    aspects = sorted({row["aspect"] for row in report["sliders"]})
    multi = len(aspects) > 1
    columns = list(CSV_COLUMNS)
    if multi:
        columns.insert(2, "aspect")
    out = io.StringIO()
    out.write(",".join(columns) + "\n")
    for row in report["sliders"]:
        values = []
        for col in columns:
            value = row[col]
            values.append(repr(value) if isinstance(value, float) else str(value))
        out.write(",".join(values) + "\n")
    return out.getvalue()


def _markdown_text(report: dict) -> str:
    lines = ["# Benchmark summary", ""]
    if report["failed_count"]:
        lines.append(f"Failed sliders: {report['failed_count']}")
        lines.append("")
    for aspect, summary in report["summary"].items():
        label = "result" if aspect == "default" else aspect
        lines.append(f"## {label}")
        lines.append("")
        lines.append("| Metric | Value |")
        lines.append("| --- | --- |")
        display = (("CR", "cr"), ("CSM", "csm"), ("SP", "sp"), ("dCLIP", "delta_clip"))
        for label2, key in display:
            mean = summary["mean"][key]
            std = summary["std"][key]
            lines.append(f"| {label2} | {mean:.3g} ± {_fmt_std(std)} |")
        lines.append(f"| OS | {summary['os']:.3g} |")
        lines.append("")
    return "\n".join(lines)


def emit_report(report: dict, out_dir: str, formats: Sequence[str] = ("json", "csv", "markdown")):
    """Write summary.{json,csv,md}; JSON is the full tree."""
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, "summary.json")
        _write(path, _canonical_json(report))
        written.append(path)
    if "csv" in formats:
        path = os.path.join(out_dir, "summary.csv")
        _write(path, _csv_text(report))
        written.append(path)
    if "markdown" in formats:
        path = os.path.join(out_dir, "summary.md")
        _write(path, _markdown_text(report))
        written.append(path)
    return written


# ---------------------------------------------------------------------------
# Report verification
# ---------------------------------------------------------------------------

def _parse_csv(text: str) -> List[dict]:
    lines = [line for line in text.splitlines() if line]
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        parts = line.split(",")
        row = dict(zip(header, parts))
        rows.append(row)
    return rows


def verify_report(out_dir: str) -> List[str]:
    """Recompute every summary number from the per-slider CSV.

    Returns a list of human-readable differences; empty means verified.
    """
    try:
        with open(os.path.join(out_dir, "summary.json"), "r", encoding="utf-8") as fh:
            report = json.load(fh)
        with open(os.path.join(out_dir, "summary.csv"), "r", encoding="utf-8") as fh:
            rows = _parse_csv(fh.read())
    except OSError as exc:
        raise IoError(f"cannot read report from {out_dir}: {exc}")

    problems = []
    grouped: Dict[str, Dict[str, List[MetricReport]]] = {}
    for row in rows:
        aspect = row.get("aspect", "default")
        report_row = MetricReport(
            cr_pos=float(row["cr_pos"]),
            cr_neg=float(row["cr_neg"]),
            cr=float(row["cr"]),
            csm=float(row["csm"]),
            sp=float(row["sp"]),
            delta_clip=float(row["delta_clip"]),
            os=float(row["os"]),
            aspect=aspect,
        )
        recomputed_os = overall_score(report_row.cr, report_row.sp, report_row.csm)
        if recomputed_os != report_row.os:
            problems.append(
                f"{row['concept']}/{row['seed']}: os {report_row.os!r} != "
                f"recomputed {recomputed_os!r}"
            )
        grouped.setdefault(aspect, {}).setdefault(row["concept"], []).append(report_row)

    for aspect, groups in grouped.items():
        recomputed = aggregate_benchmark(groups).to_dict()
        stored = report["summary"].get(aspect)
        if stored is None:
            problems.append(f"aspect {aspect!r} missing from summary.json")
            continue
        for section in ("mean", "std"):
            for key, value in recomputed[section].items():
                if stored[section][key] != value:
                    problems.append(
                        f"{aspect}.{section}.{key}: stored {stored[section][key]!r} "
                        f"!= recomputed {value!r}"
                    )
        if stored["os"] != recomputed["os"]:
            problems.append(f"{aspect}.os: stored {stored['os']!r} != {recomputed['os']!r}")
        for concept, stats in recomputed["per_concept"].items():
            for key, value in stats.items():
                if stored["per_concept"][concept][key] != value:
                    problems.append(
                        f"{aspect}.per_concept.{concept}.{key}: stored "
                        f"{stored['per_concept'][concept][key]!r} != {value!r}"
                    )
    return problems


# ---------------------------------------------------------------------------
# Protocol conformance
# ---------------------------------------------------------------------------

ECHO_CONDITION = "__echo__"


@dataclass
class FixtureResult:
    name: str
    passed: bool
    detail: str = ""


def _conformance_tensor() -> np.ndarray:
    values = np.array(
        [0.0, -0.0, 1e-45, -1e-45, 1.1754944e-38, 3.4028235e38, -1.5, 0.33333334],
        dtype=np.float32,
    )
    return values


def protocol_check(target: str, timeout: Optional[float] = None) -> List[FixtureResult]:
    """Run the conformance fixture set against an adapter.

    Each fixture uses a fresh connection so a timeout cannot poison the
    others; failures are part of the verdict, never raised.
    """
    results: List[FixtureResult] = []

    def fixture(name):
        def decorator(fn):
            try:
                with AdapterConnection.open(target, timeout) as conn:
                    detail = fn(conn)
                results.append(FixtureResult(name, True, detail or ""))
            except Exception as exc:  # failures belong to the verdict
                results.append(FixtureResult(name, False, f"{type(exc).__name__}: {exc}"))
            return fn

        return decorator

    @fixture("handshake")
    def _handshake(conn):
        return f"version {conn.hello_info.get('version')}"

    @fixture("condition_registration")
    def _registration(conn):
        conn.register_condition("probe", text="conformance probe")
        shape = tuple(int(s) for s in conn.hello_info.get("latent_shape", [4]))
        n = int(np.prod(shape))
        out = conn.epsilon(np.zeros(n, dtype=np.float32), shape, "probe", "sigma", 1.0)
        if out.size != n:
            raise ProtocolError(f"epsilon returned {out.size} values for {n}-latent")
        return "registered condition answered"

    @fixture("tensor_roundtrip")
    def _roundtrip(conn):
        values = _conformance_tensor()
        out = conn.epsilon(values, (values.size,), ECHO_CONDITION, "sigma", 1.0)
        got = out.tobytes()
        expected = values.tobytes()
        if got != expected:
            offset = next(i for i, (a, b) in enumerate(zip(expected, got)) if a != b)
            raise ProtocolError(f"payload differs at byte {offset}")
        return "bit-exact incl. signed zero and subnormals"

    @fixture("error_propagation")
    def _errors(conn):
        try:
            conn.epsilon(np.zeros(4, dtype=np.float32), (4,), "__never_registered__",
                         "sigma", 1.0)
        except RemoteFailure as exc:
            return f"error frame surfaced: {exc}"
        raise ProtocolError("unregistered condition did not produce an error frame")

    @fixture("distance_identity")
    def _distance(conn):
        x = _conformance_tensor()
        score = conn.distance(x, (x.size,), x, (x.size,))
        if score != 0.0:
            raise ProtocolError(f"distance(x, x) = {score}, expected 0")
        return "distance(x, x) = 0"

    @fixture("align_finiteness")
    def _align(conn):
        score, a_max = conn.align(_conformance_tensor(), (8,), "conformance prompt")
        return f"score {score}, a_max {a_max}"

    return results
