"""Training-free concept-slider engine for diffusion backbones.

Builds sweeps of samples along a semantic direction by inference-time
score arithmetic, scores them with pluggable alignment/perceptual
scorers, computes slider-quality metrics, and auto-calibrates scale
ranges via saturation detection and monotone traversal resampling.
"""

from .core import (
    ConceptTriplet,
    LatentTensor,
    RngStream,
    ScaleGrid,
    SliderConfig,
    SweepResult,
    gaussian_draw,
    validate_grid,
)
from .sampler import (
    GuidanceRequest,
    NoiseSchedule,
    StepPosition,
    build_schedule,
    cfg_combine,
    compose_sweep,
    guided_epsilon,
    integrator_step,
    run_slider_sweep,
)
from .backends import (
    AnalyticBackbone,
    AnalyticBackboneSpec,
    ExternalDenoiser,
    analytic_epsilon,
    te_condition,
)
from .scoring import (
    EuclideanPerceptualScorer,
    ProjectionAlignmentScorer,
    ScoreCache,
    ScoreTable,
    euclidean_perceptual,
    projection_alignment,
    score_sweep,
)
from .metrics import (
    MetricConfig,
    MetricReport,
    aggregate_benchmark,
    conceptual_range,
    conceptual_smoothness,
    delta_clip,
    evaluate_table,
    overall_score,
    semantic_preservation,
)
from .calibration import (
    CalibrationConfig,
    CalibrationResult,
    MonotoneCurve,
    RatioSample,
    calibrate,
    fit_monotone_reparam,
    resample_scales,
    saturation_scan,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
