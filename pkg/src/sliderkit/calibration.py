"""Automatic scale calibration: saturation detection and traversal reshaping.

Stage 1 probes a ladder of scales in both directions, averages alignment
a and perceptual distance d over seeds, and picks per direction the
largest-magnitude probe whose ratio r = a / max(d, d_floor) stays at or
above a reference level. Stage 2 fits a monotone curve through the
(scale, alignment) probe points inside the saturation range and inverts
it so that the resampled scales advance the fitted alignment in equal
steps, making the traversal perceptually uniform.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from .core import ConceptTriplet, ScaleGrid, SliderConfig, validate_grid
from .errors import (
    ConfigError,
    DegenerateAlignment,
    NotInvertible,
    TooFewPoints,
)
from .sampler import run_slider_sweep

DEFAULT_PROBE_MAGNITUDES = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0)
D_FLOOR = 1e-6
_DOMAIN_GRID = 1000
_MONOTONE_SLACK = 1e-9


# ---------------------------------------------------------------------------
# Stage 1: saturation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RatioSample:
    """Seed-averaged alignment/distance/ratio at one probe scale."""

    eta: float
    alignment: float
    distance: float
    ratio: float

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "alignment": self.alignment,
            "distance": self.distance,
            "ratio": self.ratio,
        }


@dataclass(frozen=True)
class SaturationScan:
    """Per-direction saturation points plus the ratio curve behind them.

    saturation_neg is a magnitude; the warning flags mark directions
    where no probe reached the reference line and the smallest nonzero
    magnitude was used as a fallback.
    """

    saturation_pos: float
    saturation_neg: float
    samples: Tuple[RatioSample, ...]
    warning_pos: bool = False
    warning_neg: bool = False


def _pick_saturation(
    candidates: List[Tuple[float, float]], r_ref: float, contiguous: bool
) -> Tuple[float, bool]:
    """candidates: (magnitude, ratio) sorted by magnitude ascending."""
    if contiguous:
        best = None
        for magnitude, ratio in candidates:
            if ratio >= r_ref:
                best = magnitude
            else:
                break
        if best is not None:
            return best, False
    else:
        above = [m for m, r in candidates if r >= r_ref]
        if above:
            return max(above), False
    return candidates[0][0], True


def saturation_scan(
    evaluator: Callable[[float, int], Tuple[float, float]],
    probe_grid: Sequence[float],
    r_ref: float = 1.0,
    n_seeds: int = 30,
    d_floor: float = D_FLOOR,
    contiguous: bool = False,
) -> SaturationScan:
    """Scan a signed probe grid for the saturation point of each direction.

    evaluator(eta, seed) returns (alignment, distance) for one generated
    sample; both are averaged over seeds before the ratio is formed.
    eta = 0 is never a saturation candidate (its distance is identically
    zero). Directions where no probe reaches r_ref fall back to the
    smallest nonzero magnitude and set the warning flag.
    """
    grid = sorted(set(float(v) for v in probe_grid))
    positives = [v for v in grid if v > 0]
    negatives = [v for v in grid if v < 0]
    if 0.0 not in grid or len(positives) < 2 or len(negatives) < 2:
        raise ConfigError("probe grid needs 0 and >= 2 nonzero magnitudes per direction")
    if n_seeds < 1:
        raise ConfigError("n_seeds must be >= 1")

    samples: List[RatioSample] = []
    ratios: Dict[float, float] = {}
    for eta in grid:
        a_sum = 0.0
        d_sum = 0.0
        for seed in range(n_seeds):
            a, d = evaluator(eta, seed)
            a_sum += a
            d_sum += d
        a_mean = a_sum / n_seeds
        d_mean = d_sum / n_seeds
        ratio = a_mean / max(d_mean, d_floor)
        samples.append(RatioSample(eta=eta, alignment=a_mean, distance=d_mean, ratio=ratio))
        ratios[eta] = ratio

    pos_candidates = [(v, ratios[v]) for v in positives]
    neg_candidates = [(-v, ratios[v]) for v in reversed(negatives)]
    sat_pos, warn_pos = _pick_saturation(pos_candidates, r_ref, contiguous)
    sat_neg, warn_neg = _pick_saturation(neg_candidates, r_ref, contiguous)
    return SaturationScan(
        saturation_pos=sat_pos,
        saturation_neg=sat_neg,
        samples=tuple(samples),
        warning_pos=warn_pos,
        warning_neg=warn_neg,
    )


# ---------------------------------------------------------------------------
# Stage 2: monotone reparameterization
# ---------------------------------------------------------------------------

def isotonic_increasing(values: Sequence[float]) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-decreasing sequences."""
    blocks = [[float(v), 1] for v in values]
    merged: List[List[float]] = []
    for mean, weight in blocks:
        merged.append([mean, weight])
        while len(merged) > 1 and merged[-2][0] > merged[-1][0]:
            m2, w2 = merged.pop()
            m1, w1 = merged.pop()
            merged.append([(m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2])
    out = []
    for mean, weight in merged:
        out.extend([mean] * int(weight))
    return np.asarray(out, dtype=np.float64)


@dataclass(frozen=True)
class MonotoneCurve:
    """A non-decreasing map from scale magnitude to fitted alignment.

    kind "poly_constrained" stores polynomial coefficients (ascending
    powers); "monotone_cubic" stores the interpolation knots of a
    shape-preserving cubic.
    """

    kind: str
    domain: Tuple[float, float]
    direction: str = "positive"
    coefficients: Tuple[float, ...] = ()
    knots_x: Tuple[float, ...] = ()
    knots_y: Tuple[float, ...] = ()

    def __call__(self, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=np.float64)
        if self.kind == "poly_constrained":
            return np.polynomial.polynomial.polyval(eta, np.asarray(self.coefficients))
        interp = PchipInterpolator(np.asarray(self.knots_x), np.asarray(self.knots_y))
        return interp(eta)

    @property
    def value_at_zero(self) -> float:
        return float(self(self.domain[0]))

    @property
    def span(self) -> float:
        return float(self(self.domain[1])) - self.value_at_zero

    def check_monotone(self, grid_points: int = _DOMAIN_GRID) -> bool:
        grid = np.linspace(self.domain[0], self.domain[1], grid_points)
        return bool(np.all(np.diff(self(grid)) >= -_MONOTONE_SLACK))

    def to_dict(self) -> dict:
        if self.kind == "poly_constrained":
            coeffs = list(self.coefficients)
        else:
            coeffs = [list(self.knots_x), list(self.knots_y)]
        return {
            "kind": self.kind,
            "coefficients": coeffs,
            "domain": list(self.domain),
            "direction": self.direction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MonotoneCurve":
        kind = d["kind"]
        if kind == "poly_constrained":
            return cls(
                kind=kind,
                domain=tuple(d["domain"]),
                direction=d.get("direction", "positive"),
                coefficients=tuple(d["coefficients"]),
            )
        knots_x, knots_y = d["coefficients"]
        return cls(
            kind=kind,
            domain=tuple(d["domain"]),
            direction=d.get("direction", "positive"),
            knots_x=tuple(knots_x),
            knots_y=tuple(knots_y),
        )


def fit_monotone_reparam(
    points: Sequence[Tuple[float, float]], direction: str = "positive"
) -> MonotoneCurve:
    """Fit a monotone alignment curve through (scale, alignment) points.

    The alignments are first projected onto non-decreasing sequences
    (pool-adjacent-violators), then a least-squares polynomial of degree
    <= 3 is fitted. If that polynomial's derivative dips below zero
    anywhere on the domain, a shape-preserving cubic through the isotonic
    values is used instead.
    """
    if len(points) < 3:
        raise TooFewPoints(f"need >= 3 points, got {len(points)}")
    etas = np.asarray([p[0] for p in points], dtype=np.float64)
    raw = np.asarray([p[1] for p in points], dtype=np.float64)
    if np.any(np.diff(etas) <= 0):
        raise ConfigError("scale points must be strictly increasing")
    if etas[0] != 0.0:
        raise ConfigError("the curve domain must start at scale 0")

    iso = isotonic_increasing(raw)
    if float(iso.max() - iso.min()) == 0.0:
        raise DegenerateAlignment("isotonic alignments are constant")

    degree = min(3, len(points) - 1)
    coeffs = np.polynomial.polynomial.polyfit(etas, iso, degree)
    domain = (float(etas[0]), float(etas[-1]))
    poly_curve = MonotoneCurve(
        kind="poly_constrained",
        domain=domain,
        direction=direction,
        coefficients=tuple(float(c) for c in coeffs),
    )
    deriv = np.polynomial.polynomial.polyder(coeffs)
    grid = np.linspace(domain[0], domain[1], _DOMAIN_GRID)
    if np.all(np.polynomial.polynomial.polyval(grid, deriv) >= -_MONOTONE_SLACK):
        return poly_curve
    # Strictly rising knots are required by the cubic; nudge pooled flats
    # is unnecessary because PCHIP accepts equal y values.
    return MonotoneCurve(
        kind="monotone_cubic",
        domain=domain,
        direction=direction,
        knots_x=tuple(float(v) for v in etas),
        knots_y=tuple(float(v) for v in iso),
    )


def resample_scales(curve: MonotoneCurve, n_out: int, tol: float = 1e-6) -> List[float]:
    """Scales whose fitted alignments are uniformly spaced over the curve.

    Targets are n_out equally spaced alignments between curve(0) and
    curve(eta_sat); each is inverted by bisection to |delta a| <= tol.
    The result starts at 0 and ends at the saturation scale.
    """
    if n_out < 2:
        raise ConfigError("n_out must be >= 2")
    lo, hi = curve.domain
    a_lo = float(curve(lo))
    a_hi = float(curve(hi))
    if not (a_hi - a_lo > 0):
        raise NotInvertible("curve has no increasing span to invert")
    targets = np.linspace(a_lo, a_hi, n_out)
    scales = [lo]
    for target in targets[1:-1]:
        left, right = lo, hi
        while True:
            mid = 0.5 * (left + right)
            value = float(curve(mid))
            if abs(value - target) <= tol or (right - left) < 1e-15:
                scales.append(mid)
                break
            if value < target:
                left = mid
            else:
                right = mid
    scales.append(hi)
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise NotInvertible("inverted scales are not strictly increasing (flat span)")
    return scales


# ---------------------------------------------------------------------------
# End-to-end calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationConfig:
    probe_magnitudes: Tuple[float, ...] = DEFAULT_PROBE_MAGNITUDES
    r_ref: float = 1.0
    n_seeds: int = 30
    n_out: int = 7
    d_floor: float = D_FLOOR
    contiguous: bool = False

    def signed_probe_grid(self) -> List[float]:
        mags = sorted(set(float(m) for m in self.probe_magnitudes))
        if 0.0 not in mags or len([m for m in mags if m > 0]) < 2:
            raise ConfigError("probe magnitudes must include 0 and >= 2 positive values")
        return sorted({-m for m in mags if m > 0} | set(mags))


@dataclass(frozen=True)
class CalibrationResult:
    """Everything stage 1 and stage 2 produced for one concept."""

    concept: str
    saturation_pos: float
    saturation_neg: float
    samples: Tuple[RatioSample, ...]
    curve_pos: MonotoneCurve
    curve_neg: MonotoneCurve
    resampled: ScaleGrid
    r_ref: float
    n_seeds: int
    generation_count: int
    warning_pos: bool = False
    warning_neg: bool = False

    def to_dict(self) -> dict:
        return {
            "concept": self.concept,
            "saturation_pos": self.saturation_pos,
            "saturation_neg": self.saturation_neg,
            "probe_samples": [s.to_dict() for s in self.samples],
            "curve": {
                "positive": self.curve_pos.to_dict(),
                "negative": self.curve_neg.to_dict(),
            },
            "resampled_scales": list(self.resampled.scales),
            "r_ref": self.r_ref,
            "n_seeds": self.n_seeds,
            "generation_count": self.generation_count,
            "warnings": {"positive": self.warning_pos, "negative": self.warning_neg},
        }

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def load_calibration_scales(path: str) -> List[float]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    return [float(v) for v in data["resampled_scales"]]


def _direction_points(
    samples: Sequence[RatioSample], saturation: float, sign: int
) -> List[Tuple[float, float]]:
    pts = [
        (abs(s.eta), s.alignment)
        for s in samples
        if (s.eta == 0.0 or (s.eta > 0) == (sign > 0)) and abs(s.eta) <= saturation
    ]
    return sorted(pts)


def calibrate(
    triplet: ConceptTriplet,
    denoiser,
    aligner,
    perceptual,
    config: SliderConfig,
    cal: CalibrationConfig = CalibrationConfig(),
    concept_name: Optional[str] = None,
) -> CalibrationResult:
    """Run both calibration stages against a live backbone and scorers.

    One sweep per seed covers the full signed probe grid, so the shared
    prefix is amortized across all probes; the generation count is
    n_seeds * |signed grid| (with the defaults, 13 scales x 30 seeds).
    """
    signed = cal.signed_probe_grid()
    grid = validate_grid(signed)
    sweeps = {}
    for seed in range(cal.n_seeds):
        sweeps[seed] = run_slider_sweep(denoiser, triplet, grid, config, seed)

    pos_align: Dict[float, float] = {}
    neg_align: Dict[float, float] = {}
    dists: Dict[float, float] = {}
    for eta in grid.scales:
        a_pos_sum = a_neg_sum = d_sum = 0.0
        for seed in range(cal.n_seeds):
            sweep = sweeps[seed]
            sample = sweep.samples[eta]
            if eta >= 0:
                a_pos_sum += aligner.align(sample, triplet.positive_prompt)
            if eta <= 0:
                a_neg_sum += aligner.align(sample, triplet.negative_prompt)
            d_sum += 0.0 if eta == 0.0 else perceptual.distance(sample, sweep.samples[0.0])
        if eta >= 0:
            pos_align[eta] = a_pos_sum / cal.n_seeds
        if eta <= 0:
            neg_align[eta] = a_neg_sum / cal.n_seeds
        dists[eta] = d_sum / cal.n_seeds

    samples = []
    for eta in grid.scales:
        alignment = pos_align[eta] if eta > 0 else neg_align[eta] if eta < 0 else pos_align[0.0]
        distance = dists[eta]
        samples.append(
            RatioSample(
                eta=eta,
                alignment=alignment,
                distance=distance,
                ratio=alignment / max(distance, cal.d_floor),
            )
        )
    positives = sorted((s.eta, s.ratio) for s in samples if s.eta > 0)
    negatives = sorted((-s.eta, s.ratio) for s in samples if s.eta < 0)
    sat_pos, warn_pos = _pick_saturation(positives, cal.r_ref, cal.contiguous)
    sat_neg, warn_neg = _pick_saturation(negatives, cal.r_ref, cal.contiguous)

    pos_points = sorted(
        [(eta, pos_align[eta]) for eta in pos_align if eta <= sat_pos]
    )
    neg_points = sorted(
        [(-eta, neg_align[eta]) for eta in neg_align if -eta <= sat_neg]
    )
    curve_pos = fit_monotone_reparam(pos_points, direction="positive")
    curve_neg = fit_monotone_reparam(neg_points, direction="negative")

    per_side = math.ceil(cal.n_out / 2)
    pos_scales = resample_scales(curve_pos, max(per_side, 2))
    neg_scales = resample_scales(curve_neg, max(per_side, 2))
    merged = sorted({0.0} | set(pos_scales) | {-v for v in neg_scales})
    resampled = validate_grid(merged)

    name = concept_name or triplet.concept_name
    return CalibrationResult(
        concept=name,
        saturation_pos=sat_pos,
        saturation_neg=sat_neg,
        samples=tuple(samples),
        curve_pos=curve_pos,
        curve_neg=curve_neg,
        resampled=resampled,
        r_ref=cal.r_ref,
        n_seeds=cal.n_seeds,
        generation_count=cal.n_seeds * len(grid.scales),
        warning_pos=warn_pos,
        warning_neg=warn_neg,
    )
