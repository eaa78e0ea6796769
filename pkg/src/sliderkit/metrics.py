"""Slider-quality metrics and the two-stage benchmark aggregation.

Given a score table over a grid of scales:

    semantic preservation   SP  = mean distance to the neutral sample
                                  over nonzero scales (lower is better)
    conceptual range        CR  = mean of the endpoint alignment gains
                                  in the positive and negative directions
    conceptual smoothness   CSM = std of consecutive normalized alignment
                                  gaps along the ordered traversal
    alignment change        dCLIP = mean |a_pos(eta) - a_pos(0)| over
                                  nonzero scales
    overall score           OS  = CR / (eps + SP) + (1 - CSM), eps = 1

Benchmark aggregation averages per concept first, then across concepts
with equal weight; the summary OS is computed from the cross-concept
metric means.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DegenerateGrid, EmptyGroup
from .scoring import ScoreTable

GAP_POOLINGS = ("pooled", "per_subset_mean")
STD_KINDS = ("population", "sample")


@dataclass(frozen=True)
class MetricConfig:
    """Knobs of the metric definitions that the formulas leave open."""

    os_epsilon: float = 1.0
    csm_gap_pooling: str = "pooled"
    include_zero_in_subsets: bool = True
    std_kind: str = "population"

    def __post_init__(self):
        if self.os_epsilon <= 0:
            raise ConfigError("os_epsilon must be positive")
        if self.csm_gap_pooling not in GAP_POOLINGS:
            raise ConfigError(f"unknown gap pooling {self.csm_gap_pooling!r}")
        if self.std_kind not in STD_KINDS:
            raise ConfigError(f"unknown std kind {self.std_kind!r}")


DEFAULT_METRIC_CONFIG = MetricConfig()


@dataclass(frozen=True)
class MetricReport:
    """All metrics for one slider (one sweep scored once)."""

    cr_pos: float
    cr_neg: float
    cr: float
    csm: float
    sp: float
    delta_clip: float
    os: float
    aspect: str = "default"

    def __post_init__(self):
        if abs(self.cr - 0.5 * (self.cr_pos + self.cr_neg)) > 1e-9:
            raise ConfigError("cr must equal the mean of cr_pos and cr_neg")
        if self.sp < 0:
            raise ConfigError("sp must be nonnegative")
        if self.delta_clip < 0:
            raise ConfigError("delta_clip must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "cr_pos": self.cr_pos,
            "cr_neg": self.cr_neg,
            "cr": self.cr,
            "csm": self.csm,
            "sp": self.sp,
            "delta_clip": self.delta_clip,
            "os": self.os,
            "aspect": self.aspect,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(
            cr_pos=float(d["cr_pos"]),
            cr_neg=float(d["cr_neg"]),
            cr=float(d["cr"]),
            csm=float(d["csm"]),
            sp=float(d["sp"]),
            delta_clip=float(d["delta_clip"]),
            os=float(d["os"]),
            aspect=d.get("aspect", "default"),
        )


# ---------------------------------------------------------------------------
# Individual metrics
# ---------------------------------------------------------------------------

def semantic_preservation(table: ScoreTable) -> float:
    """Mean perceptual distance from the neutral sample over eta != 0."""
    dists = [r.dist for r in table.records if r.eta != 0.0]
    if not dists:
        raise DegenerateGrid("preservation needs at least one nonzero scale")
    return float(np.mean(dists))


def conceptual_range(table: ScoreTable) -> Tuple[float, float, float]:
    """Endpoint alignment gains: (cr_pos, cr_neg, their mean)."""
    etas = sorted(table.etas)
    if len(etas) < 2:
        raise DegenerateGrid("range needs distinct endpoint scales")
    lo = table.record_for(etas[0])
    hi = table.record_for(etas[-1])
    cr_pos = hi.a_pos - lo.a_pos
    cr_neg = lo.a_neg - hi.a_neg
    return cr_pos, cr_neg, 0.5 * (cr_pos + cr_neg)


def _normalized(value: float, a_max: float) -> float:
    # Rescale to the maximum attainable alignment, floor negatives at 0.
    return max(value / a_max, 0.0)


def _subset_gaps(table: ScoreTable, cfg: MetricConfig) -> List[List[float]]:
    """Consecutive normalized-alignment gaps for the positive and negative
    subsets, each ordered outward from the neutral point."""
    include_zero = cfg.include_zero_in_subsets
    pos = [
        (r.eta, _normalized(r.a_pos, table.a_max))
        for r in table.records
        if r.eta > 0.0 or (include_zero and r.eta == 0.0)
    ]
    neg = [
        (r.eta, _normalized(r.a_neg, table.a_max))
        for r in table.records
        if r.eta < 0.0 or (include_zero and r.eta == 0.0)
    ]
    pos.sort(key=lambda p: p[0])
    neg.sort(key=lambda p: -p[0])
    subsets = []
    for ordered in (pos, neg):
        if len(ordered) < 2:
            raise DegenerateGrid("smoothness needs >= 2 entries per subset")
        values = [v for _, v in ordered]
        subsets.append([b - a for a, b in zip(values, values[1:])])
    return subsets


def _std(values: Sequence[float], kind: str) -> float:
    arr = np.asarray(values, dtype=np.float64)
    if kind == "population":
        return float(arr.std(ddof=0))
    if arr.size < 2:
        raise DegenerateGrid("sample std needs >= 2 gaps")
    return float(arr.std(ddof=1))


def conceptual_smoothness(table: ScoreTable, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> float:
    """Spread of traversal increments; 0 means perfectly even progress."""
    gaps_pos, gaps_neg = _subset_gaps(table, cfg)
    if cfg.csm_gap_pooling == "pooled":
        return _std(gaps_pos + gaps_neg, cfg.std_kind)
    return 0.5 * (_std(gaps_pos, cfg.std_kind) + _std(gaps_neg, cfg.std_kind))


def delta_clip(table: ScoreTable) -> float:
    """Mean absolute positive-prompt alignment change vs the neutral sample."""
    if 0.0 not in table.etas:
        raise DegenerateGrid("delta_clip needs the eta=0 record")
    base = table.record_for(0.0).a_pos
    deltas = [abs(r.a_pos - base) for r in table.records if r.eta != 0.0]
    if not deltas:
        raise DegenerateGrid("delta_clip needs at least one nonzero scale")
    return float(np.mean(deltas))


def overall_score(
    cr: float, sp: float, csm: float, cfg: MetricConfig = DEFAULT_METRIC_CONFIG
) -> float:
    """cr / (epsilon + sp) + (1 - csm); epsilon stabilizes small sp."""
    if sp < 0:
        raise ConfigError("sp must be nonnegative")
    return cr / (cfg.os_epsilon + sp) + (1.0 - csm)


def evaluate_table(table: ScoreTable, cfg: MetricConfig = DEFAULT_METRIC_CONFIG) -> MetricReport:
    """All metrics for one score table."""
    cr_pos, cr_neg, cr = conceptual_range(table)
    sp = semantic_preservation(table)
    csm = conceptual_smoothness(table, cfg)
    dclip = delta_clip(table)
    return MetricReport(
        cr_pos=cr_pos,
        cr_neg=cr_neg,
        cr=cr,
        csm=csm,
        sp=sp,
        delta_clip=dclip,
        os=overall_score(cr, sp, csm, cfg),
        aspect=table.aspect,
    )


# ---------------------------------------------------------------------------
# Benchmark aggregation
# ---------------------------------------------------------------------------

_MEAN_FIELDS = ("cr_pos", "cr_neg", "cr", "csm", "sp", "delta_clip")


@dataclass(frozen=True)
class BenchmarkSummary:
    """Per-concept means plus the equal-weight cross-concept summary."""

    per_concept: Dict[str, Dict[str, float]]
    mean: Dict[str, float]
    std: Dict[str, float]
    os: float

    def to_dict(self) -> dict:
        return {
            "per_concept": self.per_concept,
            "mean": self.mean,
            "std": self.std,
            "os": self.os,
        }


def aggregate_benchmark(
    reports_by_concept: Mapping[str, Sequence[MetricReport]],
    cfg: MetricConfig = DEFAULT_METRIC_CONFIG,
) -> BenchmarkSummary:
    """Two-stage protocol: mean within each concept, then the unweighted
    mean (and population std) across concepts. The summary OS is computed
    from the cross-concept metric means, not averaged per slider."""
    if not reports_by_concept:
        raise EmptyGroup("no concepts to aggregate")
    per_concept: Dict[str, Dict[str, float]] = {}
    for concept, reports in reports_by_concept.items():
        if not reports:
            raise EmptyGroup(f"concept {concept!r} has no reports")
        stats = {
            name: float(np.mean([getattr(r, name) for r in reports])) for name in _MEAN_FIELDS
        }
        stats["os"] = overall_score(stats["cr"], stats["sp"], stats["csm"], cfg)
        per_concept[concept] = stats
    mean = {
        name: float(np.mean([per_concept[c][name] for c in per_concept]))
        for name in _MEAN_FIELDS
    }
    std = {
        name: float(np.std([per_concept[c][name] for c in per_concept], ddof=0))
        for name in _MEAN_FIELDS
    }
    return BenchmarkSummary(
        per_concept=per_concept,
        mean=mean,
        std=std,
        os=overall_score(mean["cr"], mean["sp"], mean["csm"], cfg),
    )
