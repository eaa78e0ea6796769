"""Analytic scorers, the score table, caching, and external scoring."""

import os
import sys

import numpy as np
import pytest

from conftest import make_backbone
from sliderkit.core import LatentTensor, SliderConfig, SweepResult, validate_grid
from sliderkit.errors import ConfigError, ProtocolError, ShapeMismatch
from sliderkit.protocol import AdapterConnection
from sliderkit.sampler import run_slider_sweep
from sliderkit.scoring import (
    EuclideanPerceptualScorer,
    ExternalAlignmentScorer,
    ExternalPerceptualScorer,
    ProjectionAlignmentScorer,
    ScoreCache,
    ScoreRecord,
    ScoreTable,
    euclidean_perceptual,
    projection_alignment,
    score_sweep,
)

STUB = f"{sys.executable} {os.path.join(os.path.dirname(__file__), 'stub_adapter.py')}"


def _tensor(*values):
    return LatentTensor((len(values),), np.asarray(values, dtype=np.float32))


# ---------------------------------------------------------------------------
# projection alignment
# ---------------------------------------------------------------------------

def test_projection_zero_at_base_point():
    base = np.zeros(2)
    v = np.array([0.25, 0.0])
    x = _tensor(0.0, 0.0)
    assert projection_alignment(x, +1, base, v) == 0.0
    assert projection_alignment(x, -1, base, v) == 0.0


def test_projection_at_displaced_point():
    base = np.zeros(2)
    v = np.array([0.25, 0.0])
    assert projection_alignment(_tensor(0.25, 0.0), +1, base, v) == pytest.approx(0.25)


def test_projection_antisymmetric_in_role():
    rng = np.random.default_rng(2)
    base = rng.normal(size=3)
    v = rng.normal(size=3)
    for _ in range(50):
        x = _tensor(*rng.normal(size=3))
        a_pos = projection_alignment(x, +1, base, v, a_max=10.0)
        a_neg = projection_alignment(x, -1, base, v, a_max=10.0)
        assert a_pos == -a_neg


def test_projection_clamps_to_a_max():
    base = np.zeros(1)
    v = np.array([1.0])
    assert projection_alignment(_tensor(50.0), +1, base, v, a_max=1.0) == 1.0
    assert projection_alignment(_tensor(-50.0), +1, base, v, a_max=1.0) == -1.0


def test_projection_rejects_dim_mismatch():
    with pytest.raises(ShapeMismatch):
        projection_alignment(_tensor(1.0, 2.0, 3.0), +1, np.zeros(2), np.ones(2))


def test_projection_means_on_gaussian_sweep(triplet):
    """Seed-averaged positive alignment tracks 2 * mu * |v|."""
    cfg = SliderConfig(
        total_steps=24, branch_step=2, schedule_kind="karras_sigma", sampler_kind="heun"
    )
    grid = validate_grid([-1, 0, 1])
    scorer = ProjectionAlignmentScorer(triplet, np.zeros(2), np.array([0.25, 0.0]), a_max=4.0)
    n_seeds = 200
    sums = {eta: 0.0 for eta in grid.scales}
    neutral_sums = 0.0
    for seed in range(n_seeds):
        sweep = run_slider_sweep(make_backbone(triplet), triplet, grid, cfg, seed=seed)
        for eta in grid.scales:
            sums[eta] += scorer.align(sweep.samples[eta], triplet.positive_prompt) / n_seeds
    # Displacement from the neutral branch is exact (shared seeds cancel
    # the Monte-Carlo noise); the raw means carry ~1/sqrt(N) noise.
    for eta, target in ((-1.0, -0.5), (0.0, 0.0), (1.0, 0.5)):
        assert sums[eta] - sums[0.0] == pytest.approx(target, abs=0.01)
        assert sums[eta] == pytest.approx(target, abs=0.25)


# ---------------------------------------------------------------------------
# euclidean perceptual distance
# ---------------------------------------------------------------------------

def test_euclidean_identity_is_zero():
    x = _tensor(1.5, -2.0)
    assert euclidean_perceptual(x, x) == 0.0


def test_euclidean_hand_case():
    assert euclidean_perceptual(_tensor(0.0, 0.0), _tensor(3.0, 4.0)) == pytest.approx(
        5.0 / np.sqrt(2.0)
    )


def test_euclidean_symmetry():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = _tensor(*rng.normal(size=5))
        b = _tensor(*rng.normal(size=5))
        assert abs(euclidean_perceptual(a, b) - euclidean_perceptual(b, a)) <= 1e-7


def test_euclidean_triangle_inequality():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = _tensor(*rng.normal(size=4))
        b = _tensor(*rng.normal(size=4))
        c = _tensor(*rng.normal(size=4))
        assert euclidean_perceptual(a, c) <= (
            euclidean_perceptual(a, b) + euclidean_perceptual(b, c) + 1e-6
        )


def test_euclidean_rejects_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        euclidean_perceptual(_tensor(1.0), _tensor(1.0, 2.0))


# ---------------------------------------------------------------------------
# score_sweep and the cache
# ---------------------------------------------------------------------------

def _constant_sweep(triplet):
    grid = validate_grid([-1, 0, 1])
    tensor = _tensor(0.125, -0.5)
    return SweepResult(
        triplet, grid, seed=0,
        samples={eta: tensor for eta in grid.scales},
        config=SliderConfig(),
    )


def _scorers(triplet):
    aligner = ProjectionAlignmentScorer(triplet, np.zeros(2), np.array([0.25, 0.0]))
    return aligner, EuclideanPerceptualScorer()


def test_constant_sweep_scores(triplet):
    aligner, perceptual = _scorers(triplet)
    table = score_sweep(_constant_sweep(triplet), aligner, perceptual)
    assert all(r.dist == 0.0 for r in table.records)
    assert len({r.a_pos for r in table.records}) == 1


def test_score_sweep_cache_second_call_free(triplet, tmp_path):
    cfg = SliderConfig(total_steps=10, branch_step=2, schedule_kind="karras_sigma")
    grid = validate_grid([-1, 0, 1])
    sweep = run_slider_sweep(make_backbone(triplet), triplet, grid, cfg, seed=3)
    aligner, perceptual = _scorers(triplet)
    cache = ScoreCache(str(tmp_path))
    first = score_sweep(sweep, aligner, perceptual, cache=cache)
    assert cache.hits == 0 and cache.misses == 8  # 3 scales x 2 prompts + 2 distances
    second = score_sweep(sweep, aligner, perceptual, cache=cache)
    assert cache.misses == 8  # zero new misses
    assert cache.hits == 8
    assert second.to_dict() == first.to_dict()


def test_score_sweep_cache_matches_uncached(triplet, tmp_path):
    cfg = SliderConfig(total_steps=10, branch_step=2, schedule_kind="karras_sigma")
    grid = validate_grid([-1, 0, 1])
    sweep = run_slider_sweep(make_backbone(triplet), triplet, grid, cfg, seed=1)
    aligner, perceptual = _scorers(triplet)
    cached = score_sweep(sweep, aligner, perceptual, cache=ScoreCache(str(tmp_path)))
    plain = score_sweep(sweep, aligner, perceptual)
    assert cached.to_dict() == plain.to_dict()


def test_cache_key_tracks_content(triplet):
    a = _tensor(1.0, 2.0, 3.0)
    b = _tensor(1.0, 2.0, 3.0000002)
    assert ScoreCache.align_key("s", a, "p") != ScoreCache.align_key("s", b, "p")
    assert ScoreCache.align_key("s", a, "p") != ScoreCache.align_key("other", a, "p")
    assert ScoreCache.align_key("s", a, "p") != ScoreCache.align_key("s", a, "q")
    assert ScoreCache.distance_key("d", a, b) != ScoreCache.distance_key("d", b, a)


def test_cache_requires_directory(monkeypatch):
    monkeypatch.delenv("FSL_CACHE_DIR", raising=False)
    with pytest.raises(ConfigError):
        ScoreCache()


def test_cache_env_var_directory(monkeypatch, tmp_path):
    monkeypatch.setenv("FSL_CACHE_DIR", str(tmp_path / "c"))
    cache = ScoreCache()
    cache.put("k", {"score": 1.0})
    assert cache.get("k") == {"score": 1.0}


# ---------------------------------------------------------------------------
# score table invariants
# ---------------------------------------------------------------------------

def test_score_table_requires_zero_distance_at_neutral():
    with pytest.raises(ConfigError):
        ScoreTable(
            records=(ScoreRecord(0.0, 0.1, 0.1, 0.5), ScoreRecord(1.0, 0.2, 0.0, 0.1)),
            aligner_name="a", perceptual_name="p", a_max=1.0,
        )


def test_score_table_roundtrip():
    table = ScoreTable(
        records=(ScoreRecord(-1.0, 0.1, 0.3, 0.2), ScoreRecord(0.0, 0.2, 0.2, 0.0)),
        aligner_name="a", perceptual_name="p", a_max=2.0, aspect="static",
    )
    assert ScoreTable.from_dict(table.to_dict()) == table


# ---------------------------------------------------------------------------
# external scorers
# ---------------------------------------------------------------------------

def test_external_scorers_follow_fixed_table():
    with AdapterConnection.launch(STUB) as conn:
        aligner = ExternalAlignmentScorer(conn)
        perceptual = ExternalPerceptualScorer(conn)
        x = _tensor(1.0, 2.0, 3.0, 4.0)
        assert aligner.align(x, "whatever") == 0.25
        assert aligner.a_max == 2.0
        assert perceptual.distance(x, x) == 0.0


def test_external_nan_alignment_raises():
    with AdapterConnection.launch(f"{STUB} nan") as conn:
        aligner = ExternalAlignmentScorer(conn)
        with pytest.raises(ProtocolError):
            aligner.align(_tensor(1.0), "p")


def test_score_sweep_annotates_failures_with_eta(triplet):
    class FailingAligner:
        name = "boom"
        a_max = 1.0

        def align(self, sample, text):
            raise ProtocolError("scorer offline")

    sweep = _constant_sweep(triplet)
    with pytest.raises(ProtocolError, match="eta=-1"):
        score_sweep(sweep, FailingAligner(), EuclideanPerceptualScorer())
