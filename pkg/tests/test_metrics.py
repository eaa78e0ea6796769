"""Metric formulas against hand-computed and brute-force oracles."""

import numpy as np
import pytest

from conftest import make_backbone
from sliderkit.core import SliderConfig, validate_grid
from sliderkit.errors import ConfigError, DegenerateGrid, EmptyGroup
from sliderkit.metrics import (
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
from sliderkit.sampler import run_slider_sweep
from sliderkit.scoring import (
    EuclideanPerceptualScorer,
    ProjectionAlignmentScorer,
    ScoreRecord,
    ScoreTable,
    score_sweep,
)


def table_from(rows, a_max=1.0, aspect="default"):
    """rows: {eta: (a_pos, a_neg, dist)}"""
    records = tuple(
        ScoreRecord(float(eta), float(a[0]), float(a[1]), float(a[2]))
        for eta, a in sorted(rows.items())
    )
    return ScoreTable(records=records, aligner_name="t", perceptual_name="t",
                      a_max=a_max, aspect=aspect)


# ---------------------------------------------------------------------------
# semantic preservation
# ---------------------------------------------------------------------------

def test_sp_two_scales():
    table = table_from({-1: (0, 0, 0.3), 0: (0, 0, 0.0), 1: (0, 0, 0.1)})
    assert semantic_preservation(table) == pytest.approx(0.2)


def test_sp_identical_samples_zero():
    table = table_from({-1: (0, 0, 0.0), 0: (0, 0, 0.0), 1: (0, 0, 0.0)})
    assert semantic_preservation(table) == 0.0


def test_sp_four_scales():
    table = table_from(
        {-2: (0, 0, 0.4), -1: (0, 0, 0.2), 0: (0, 0, 0.0), 1: (0, 0, 0.1), 2: (0, 0, 0.3)}
    )
    assert semantic_preservation(table) == pytest.approx(0.25)


def test_sp_rejects_neutral_only():
    with pytest.raises(DegenerateGrid):
        semantic_preservation(table_from({0: (0, 0, 0.0)}))


def test_sp_permutation_invariant():
    rng = np.random.default_rng(0)
    etas = [-3, -2, -1, 1, 2, 3]
    for _ in range(200):
        dists = rng.uniform(0, 1, size=6)
        rows = {0: (0, 0, 0.0)}
        rows.update({eta: (0, 0, d) for eta, d in zip(etas, dists)})
        base = semantic_preservation(table_from(rows))
        perm = rng.permutation(6)
        rows_p = {0: (0, 0, 0.0)}
        rows_p.update({eta: (0, 0, dists[j]) for eta, j in zip(etas, perm)})
        assert semantic_preservation(table_from(rows_p)) == pytest.approx(base, abs=1e-12)


# ---------------------------------------------------------------------------
# conceptual range
# ---------------------------------------------------------------------------

def test_cr_hand_case():
    table = table_from({-2: (0.2, 0.5, 0.1), 0: (0.3, 0.3, 0.0), 2: (0.6, 0.1, 0.1)})
    assert conceptual_range(table) == pytest.approx((0.4, 0.4, 0.4))


def test_cr_constant_alignments_zero():
    table = table_from({-1: (0.4, 0.2, 0.1), 0: (0.4, 0.2, 0.0), 1: (0.4, 0.2, 0.1)})
    assert conceptual_range(table) == pytest.approx((0.0, 0.0, 0.0))


def test_cr_rejects_degenerate_grid():
    with pytest.raises(DegenerateGrid):
        conceptual_range(table_from({0: (0, 0, 0.0)}))


def test_cr_sign_flip_invariance():
    rng = np.random.default_rng(1)
    for _ in range(200):
        etas = (-2.0, -1.0, 0.0, 1.0, 2.0)
        rows = {eta: (rng.uniform(-1, 1), rng.uniform(-1, 1),
                      0.0 if eta == 0 else rng.uniform(0, 1)) for eta in etas}
        cr = conceptual_range(table_from(rows))[2]
        # Swap the prompt roles and reverse the grid.
        flipped = {-eta: (rows[eta][1], rows[eta][0], rows[eta][2]) for eta in etas}
        cr_flipped = conceptual_range(table_from(flipped))[2]
        assert cr_flipped == pytest.approx(cr, abs=1e-12)


def test_cr_gaussian_oracle_is_one(triplet):
    """Grid [-1, 1], |v| = 0.25: endpoint projections are +-0.5 so cr = 1."""
    cfg = SliderConfig(
        total_steps=24, branch_step=2, schedule_kind="karras_sigma", sampler_kind="heun"
    )
    grid = validate_grid([-1, 0, 1])
    scorer = ProjectionAlignmentScorer(triplet, np.zeros(2), np.array([0.25, 0.0]), a_max=4.0)
    values = []
    for seed in range(32):
        sweep = run_slider_sweep(make_backbone(triplet), triplet, grid, cfg, seed=seed)
        table = score_sweep(sweep, scorer, EuclideanPerceptualScorer())
        values.append(conceptual_range(table)[2])
    # Per-seed cr cancels the shared initial noise, so the tolerance is
    # the prefix-contraction bias, not Monte-Carlo noise.
    assert np.mean(values) == pytest.approx(1.0, abs=0.02)
    assert np.std(values) < 0.01


# ---------------------------------------------------------------------------
# conceptual smoothness
# ---------------------------------------------------------------------------

def test_csm_equal_gaps_zero():
    rows = {
        -2: (0.0, 0.5, 0.1), -1: (0.0, 0.35, 0.1),
        0: (0.1, 0.2, 0.0),
        1: (0.25, 0.0, 0.1), 2: (0.4, 0.0, 0.1),
    }
    # pos subset: 0.1, 0.25, 0.4 (gaps 0.15); neg: 0.2, 0.35, 0.5 (gaps 0.15)
    assert conceptual_smoothness(table_from(rows)) == pytest.approx(0.0, abs=1e-12)


def test_csm_pooled_hand_case():
    rows = {
        -1: (0.0, 0.3, 0.1),
        0: (0.2, 0.1, 0.0),
        1: (0.4, 0.0, 0.1),
        2: (0.8, 0.0, 0.1),
    }
    # pos: [0.2, 0.4, 0.8] -> gaps {0.2, 0.4}; neg: [0.1, 0.3] -> gap {0.2}
    expected = float(np.std([0.2, 0.4, 0.2]))
    assert conceptual_smoothness(table_from(rows)) == pytest.approx(expected, abs=1e-12)
    assert conceptual_smoothness(table_from(rows)) == pytest.approx(0.0943, abs=1e-4)


def test_csm_one_constant_subset():
    rows = {
        -1: (0.0, 0.7, 0.1),
        0: (0.3, 0.2, 0.0),
        1: (0.3, 0.0, 0.1),
        2: (0.3, 0.0, 0.1),
    }
    # pos gaps {0, 0}; neg gap {0.5}
    expected = float(np.std([0.0, 0.0, 0.5]))
    assert conceptual_smoothness(table_from(rows)) == pytest.approx(expected, abs=1e-12)


def test_csm_constant_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(200):
        pos = rng.uniform(0.1, 0.9, size=4)
        neg = rng.uniform(0.1, 0.9, size=3)
        rows = {0: (pos[0], neg[0], 0.0)}
        rows.update({float(i): (pos[i], 0.0, 0.1) for i in range(1, 4)})
        rows.update({float(-i): (0.0, neg[i], 0.1) for i in range(1, 3)})
        base = conceptual_smoothness(table_from(rows, a_max=10.0))
        shift = rng.uniform(0.1, 1.0)
        rows_s = {eta: (a + shift, b + shift, d) for eta, (a, b, d) in rows.items()}
        shifted = conceptual_smoothness(table_from(rows_s, a_max=10.0))
        assert shifted == pytest.approx(base, abs=1e-12)


def test_csm_scale_law():
    rng = np.random.default_rng(8)
    for _ in range(200):
        pos = rng.uniform(0.1, 0.9, size=3)
        neg = rng.uniform(0.1, 0.9, size=2)
        rows = {
            0: (pos[0], neg[0], 0.0),
            1: (pos[1], 0.0, 0.1), 2: (pos[2], 0.0, 0.1),
            -1: (0.0, neg[1], 0.1),
        }
        c = rng.uniform(0.5, 5.0)
        scaled = {eta: (a * c, b * c, d) for eta, (a, b, d) in rows.items()}
        assert conceptual_smoothness(table_from(scaled, a_max=c)) == pytest.approx(
            conceptual_smoothness(table_from(rows, a_max=1.0)), abs=1e-12
        )


def test_csm_normalization_clamps_negatives():
    rows = {
        0: (-0.5, -0.5, 0.0),
        1: (0.5, 0.0, 0.1), 2: (1.0, 0.0, 0.1),
        -1: (0.0, 0.5, 0.1), -2: (0.0, 1.0, 0.1),
    }
    # Negative normalized alignments floor at 0: pos [0, .5, 1] gaps {.5,.5},
    # neg [0, .5, 1] gaps {.5,.5} -> all equal -> std 0.
    assert conceptual_smoothness(table_from(rows)) == pytest.approx(0.0, abs=1e-12)


def test_csm_exclude_zero_option():
    rows = {
        -2: (0.0, 0.9, 0.1), -1: (0.0, 0.4, 0.1),
        0: (0.1, 0.1, 0.0),
        1: (0.3, 0.0, 0.1), 2: (0.9, 0.0, 0.1),
    }
    cfg = MetricConfig(include_zero_in_subsets=False)
    expected = float(np.std([0.6, 0.5]))  # pos gap {0.6}, neg gap {0.5}
    assert conceptual_smoothness(table_from(rows), cfg) == pytest.approx(expected, abs=1e-12)


def test_csm_per_subset_pooling():
    rows = {
        -1: (0.0, 0.3, 0.1),
        0: (0.2, 0.1, 0.0),
        1: (0.4, 0.0, 0.1),
        2: (0.8, 0.0, 0.1),
    }
    cfg = MetricConfig(csm_gap_pooling="per_subset_mean")
    expected = 0.5 * (float(np.std([0.2, 0.4])) + float(np.std([0.2])))
    assert conceptual_smoothness(table_from(rows), cfg) == pytest.approx(expected, abs=1e-12)


def test_csm_rejects_single_sided_grid():
    with pytest.raises(DegenerateGrid):
        conceptual_smoothness(
            table_from({0: (0.1, 0.1, 0.0), 1: (0.2, 0.0, 0.1)}),
            MetricConfig(include_zero_in_subsets=False),
        )


# ---------------------------------------------------------------------------
# delta_clip
# ---------------------------------------------------------------------------

def test_delta_clip_hand_case():
    table = table_from({-1: (0.2, 0, 0.1), 0: (0.3, 0, 0.0), 1: (0.5, 0, 0.1)})
    assert delta_clip(table) == pytest.approx(0.15)


def test_delta_clip_constant_zero():
    table = table_from({-1: (0.3, 0, 0.1), 0: (0.3, 0, 0.0), 1: (0.3, 0, 0.1)})
    assert delta_clip(table) == 0.0


def test_delta_clip_symmetric_case():
    table = table_from({-1: (-1.0, 0, 0.1), 0: (0.0, 0, 0.0), 1: (1.0, 0, 0.1)})
    assert delta_clip(table) == pytest.approx(1.0)


def test_delta_clip_zero_iff_constant():
    rng = np.random.default_rng(9)
    for _ in range(200):
        values = rng.uniform(-1, 1, size=5)
        rows = {eta: (v, 0.0, 0.0 if eta == 0 else 0.1)
                for eta, v in zip((-2, -1, 0, 1, 2), values)}
        d = delta_clip(table_from(rows))
        constant = np.allclose(values, values[2], atol=0)
        assert (d == 0.0) == constant


# ---------------------------------------------------------------------------
# overall score
# ---------------------------------------------------------------------------

def test_overall_score_published_operating_points():
    # Known (cr, sp, csm) -> os triples for the formula cr/(1+sp) + 1-csm.
    assert overall_score(2.54, 0.062, 0.276) == pytest.approx(3.11, abs=0.01)
    assert overall_score(0.927, 0.019, 0.285) == pytest.approx(1.62, abs=0.01)


def test_overall_score_neutral_slider():
    assert overall_score(0.0, 0.0, 0.0) == 1.0


def test_overall_score_monotonicity():
    rng = np.random.default_rng(10)
    for _ in range(200):
        cr = rng.uniform(0.1, 5.0)
        sp = rng.uniform(0.0, 3.0)
        csm = rng.uniform(0.0, 1.0)
        base = overall_score(cr, sp, csm)
        assert overall_score(cr + 0.1, sp, csm) > base
        assert overall_score(cr, sp + 0.1, csm) < base
        assert overall_score(cr, sp, csm + 0.1) < base


def test_overall_score_epsilon_knob():
    cfg = MetricConfig(os_epsilon=2.0)
    assert overall_score(2.0, 0.0, 0.5, cfg) == pytest.approx(2.0 / 2.0 + 0.5)


# ---------------------------------------------------------------------------
# report + aggregation
# ---------------------------------------------------------------------------

def _report(cr=1.0, csm=0.3, sp=0.1, dclip=0.2):
    return MetricReport(
        cr_pos=cr, cr_neg=cr, cr=cr, csm=csm, sp=sp, delta_clip=dclip,
        os=overall_score(cr, sp, csm),
    )


def test_metric_report_invariants():
    with pytest.raises(ConfigError):
        MetricReport(cr_pos=1.0, cr_neg=0.0, cr=1.0, csm=0.1, sp=0.1,
                     delta_clip=0.1, os=1.0)
    with pytest.raises(ConfigError):
        MetricReport(cr_pos=1.0, cr_neg=1.0, cr=1.0, csm=0.1, sp=-0.1,
                     delta_clip=0.1, os=1.0)
    r = _report()
    assert MetricReport.from_dict(r.to_dict()) == r


def test_aggregate_single_report_is_identity():
    report = _report(cr=2.0, csm=0.25, sp=0.05)
    summary = aggregate_benchmark({"c": [report]})
    assert summary.per_concept["c"]["cr"] == pytest.approx(2.0)
    assert summary.mean["cr"] == pytest.approx(2.0)
    assert summary.os == pytest.approx(overall_score(2.0, 0.05, 0.25))


def test_aggregate_weighs_concepts_equally():
    a = [_report(cr=2.0) for _ in range(7)]
    b = [_report(cr=4.0) for _ in range(3)]
    summary = aggregate_benchmark({"a": a, "b": b})
    assert summary.mean["cr"] == pytest.approx(3.0)


def test_aggregate_matches_bruteforce_two_stage():
    rng = np.random.default_rng(11)
    reports = {}
    for c in range(10):
        rows = []
        for _ in range(rng.integers(5, 100)):
            rows.append(
                _report(
                    cr=float(rng.uniform(0, 4)),
                    csm=float(rng.uniform(0, 0.5)),
                    sp=float(rng.uniform(0, 1)),
                    dclip=float(rng.uniform(0, 1)),
                )
            )
        reports[f"c{c}"] = rows
    summary = aggregate_benchmark(reports)
    # Brute-force nested loops.
    for name in ("cr", "csm", "sp", "delta_clip"):
        concept_means = []
        for c, rows in reports.items():
            total = 0.0
            for r in rows:
                total += getattr(r, name)
            concept_means.append(total / len(rows))
            assert summary.per_concept[c][name] == pytest.approx(
                total / len(rows), rel=1e-12
            )
        assert summary.mean[name] == pytest.approx(
            sum(concept_means) / len(concept_means), rel=1e-12
        )
        assert summary.std[name] == pytest.approx(float(np.std(concept_means)), rel=1e-9)
    assert summary.os == pytest.approx(
        overall_score(summary.mean["cr"], summary.mean["sp"], summary.mean["csm"])
    )


def test_aggregate_rejects_empty_groups():
    with pytest.raises(EmptyGroup):
        aggregate_benchmark({})
    with pytest.raises(EmptyGroup):
        aggregate_benchmark({"c": []})


def test_evaluate_table_composes_all_metrics():
    rows = {
        -2: (0.0, 0.5, 0.2), -1: (0.1, 0.3, 0.1),
        0: (0.2, 0.15, 0.0),
        1: (0.4, 0.1, 0.15), 2: (0.7, 0.05, 0.25),
    }
    table = table_from(rows, aspect="static")
    report = evaluate_table(table)
    assert report.aspect == "static"
    assert report.cr == pytest.approx(0.5 * ((0.7 - 0.0) + (0.5 - 0.05)))
    assert report.sp == pytest.approx(np.mean([0.2, 0.1, 0.15, 0.25]))
    assert report.os == pytest.approx(overall_score(report.cr, report.sp, report.csm))
