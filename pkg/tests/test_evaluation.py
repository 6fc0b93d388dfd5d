"""
Tests for evaluation metrics, sweeps, tables and the desk-run acceptance checks.
"""

import math

import numpy as np
import pytest

from checkpoint_store import Checkpoint
from editor_model import EditorParams
from errors import EvaluationError
from evaluation import (EditBatch, ablation_study, angle_frame, angle_matrix, collect_edits, direction_recovery,
                        evaluate, feature_similarity, intensity_sweep, score_edits, sparsity_ratio, sweep,
                        time_edit, topk_filter, topk_sweep, untrained_checkpoint, write_csv)
from trainer import ablation_configs, train


def with_directions(ckpt: Checkpoint, directions, **overrides) -> Checkpoint:
    values = ckpt.params.as_dict()
    values["directions"] = np.asarray(directions, dtype=np.float64)
    values.update(overrides)
    return Checkpoint(config=ckpt.config, world=ckpt.world, params=EditorParams.from_dict(values))


@pytest.fixture
def planted_checkpoint(small_checkpoint):
    """Directions set to the planted truth, IAIP switched off."""
    params = small_checkpoint.params.as_dict()
    zeros = {name: np.zeros_like(params[name]) for name in ("rfc1_weight", "cfc_weight", "rfc2_weight",
                                                            "rfc1_bias", "cfc_bias", "rfc2_bias")}
    return with_directions(small_checkpoint, small_checkpoint.world.planted, **zeros)


# =============================================================================
# Primitives
# =============================================================================

def test_topk_keeps_largest_magnitudes():
    np.testing.assert_array_equal(topk_filter([[0.1, -0.5, 0.3]], 1), [[0.0, -0.5, 0.0]])
    np.testing.assert_array_equal(topk_filter([[3.0, -5.0, 1.0, 0.0]], 2), [[3.0, -5.0, 0.0, 0.0]])


def test_topk_ties_go_to_lower_column():
    np.testing.assert_array_equal(topk_filter([[1.0, -1.0, 1.0]], 1), [[1.0, 0.0, 0.0]])
    np.testing.assert_array_equal(topk_filter([[1.0, -1.0, 1.0]], 2), [[1.0, -1.0, 0.0]])


def test_topk_bounds(rng):
    delta = rng.standard_normal((2, 3, 4, 5))
    np.testing.assert_array_equal(topk_filter(delta, 5), delta)
    np.testing.assert_array_equal(topk_filter(delta, 0), 0.0)
    filtered = topk_filter(delta, 2)
    assert filtered.shape == delta.shape
    assert np.all(np.count_nonzero(filtered, axis=-1) == 2)
    np.testing.assert_array_equal(topk_filter(filtered, 2), filtered)
    with pytest.raises(EvaluationError):
        topk_filter(delta, 6)
    with pytest.raises(EvaluationError):
        topk_filter(delta, -1)


def test_feature_similarity(rng):
    a = rng.standard_normal((4, 6))
    assert np.all(feature_similarity(a, a) == 1.0)
    assert feature_similarity([1.0, 0.0], [0.0, 2.0]) == 0.0
    assert feature_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0
    assert feature_similarity([1.0, 1.0], [-2.0, -2.0]) == pytest.approx(-1.0)


def test_angle_matrix_of_one_hot_directions(small_checkpoint):
    ckpt = with_directions(small_checkpoint, np.eye(2, 8))
    angles = angle_matrix(ckpt)
    np.testing.assert_array_equal(np.diag(angles), 0.0)
    assert angles[0, 1] == pytest.approx(90.0)
    assert angles[0, 1] == angles[1, 0]


def test_angle_matrix_is_symmetric_in_range(small_checkpoint):
    angles = angle_matrix(small_checkpoint)
    np.testing.assert_array_equal(angles, angles.T)
    assert angles.min() >= 0.0 and angles.max() <= 180.0


def test_angle_matrix_rejects_zero_direction(small_checkpoint):
    directions = np.eye(2, 8)
    directions[1] = 0.0
    with pytest.raises(EvaluationError, match="smile"):
        angle_matrix(with_directions(small_checkpoint, directions))


def test_angle_frame_labels(small_checkpoint):
    frame = angle_frame(small_checkpoint)
    assert list(frame.columns) == ["attribute", "gender", "smile"]
    assert frame["attribute"].tolist() == ["gender", "smile"]


def test_direction_recovery_of_planted_truth(planted_checkpoint):
    np.testing.assert_allclose(direction_recovery(planted_checkpoint), 1.0, atol=1e-12)


def test_sparsity_ratio_bounds(small_checkpoint):
    one_hot = with_directions(small_checkpoint, np.eye(2, 8)).params
    uniform = with_directions(small_checkpoint, np.ones((2, 8))).params
    assert sparsity_ratio(one_hot) == pytest.approx(1.0)
    assert sparsity_ratio(uniform) == pytest.approx(math.sqrt(8))


# =============================================================================
# Evaluation
# =============================================================================

def test_evaluate_report_shape_and_ranges(small_checkpoint):
    report = evaluate(small_checkpoint, n_samples=40, seed=3)
    assert report.n_samples == 40
    assert [score.attribute for score in report.attributes] == ["gender", "smile"]
    for score in report.attributes:
        assert 0.0 <= score.accuracy <= 1.0
        assert score.edits_to_positive + score.edits_to_negative == 40
        assert -1.0 <= score.identity_similarity <= 1.0
    frame = report.to_frame()
    assert len(frame) == 3
    assert frame["attribute"].iloc[-1] == "mean"


def test_evaluate_is_deterministic(small_checkpoint):
    first = evaluate(small_checkpoint, n_samples=25, seed=5).to_frame()
    second = evaluate(small_checkpoint, n_samples=25, seed=5).to_frame()
    assert first.equals(second)


def test_planted_directions_reach_every_target(planted_checkpoint):
    report = evaluate(planted_checkpoint, n_samples=50, intensity=1000.0)
    assert report.mean_accuracy == 1.0
    assert report.identity_similarity == pytest.approx(1.0, abs=1e-9)


def test_zero_increments_keep_identity_exactly(small_checkpoint):
    edits = collect_edits(small_checkpoint, 10)
    still = EditBatch(latents=edits.latents, targets=edits.targets, increments=np.zeros_like(edits.increments),
                      seed=edits.seed, space=edits.space)
    report = score_edits(small_checkpoint, still)
    assert report.identity_similarity == 1.0
    assert report.neighborhood_distance == 0.0


def test_w_space_evaluation(small_checkpoint):
    edits = collect_edits(small_checkpoint, 5, space="w")
    assert all(len({row.tobytes() for row in latent}) == 1 for latent in edits.latents)
    assert evaluate(small_checkpoint, n_samples=5, space="w").space == "w"


@pytest.mark.parametrize("kwargs", [{"n_samples": 0}, {"n_samples": 5, "space": "z"},
                                    {"n_samples": 5, "intensity": 0.0}, {"n_samples": 5, "k": 9}])
def test_evaluate_rejects_bad_arguments(small_checkpoint, kwargs):
    with pytest.raises(EvaluationError):
        evaluate(small_checkpoint, **kwargs)


def test_untrained_checkpoint_has_no_intensity(small_config, small_world):
    ckpt = untrained_checkpoint(small_config, small_world)
    for name in ("rfc1_weight", "cfc_weight", "rfc2_weight"):
        np.testing.assert_array_equal(getattr(ckpt.params, name), 0.0)


# =============================================================================
# Sweeps and tables
# =============================================================================

def test_sweep_rows_sorted_and_complete(small_checkpoint):
    result = sweep(small_checkpoint, [8, 2, 5], [5.0, 1.0], n_samples=10)
    assert [(row.k, row.intensity) for row in result.rows] == [
        (2, 1.0), (2, 5.0), (5, 1.0), (5, 5.0), (8, 1.0), (8, 5.0)]
    frame = result.to_frame()
    assert list(frame.columns) == ["k", "intensity", "accuracy", "identity_similarity", "neighborhood_distance"]


def test_full_k_matches_plain_evaluation(small_checkpoint):
    plain = evaluate(small_checkpoint, n_samples=30, seed=7)
    row = topk_sweep(small_checkpoint, [8], n_samples=30, seed=7).lookup(8)
    assert row.accuracy == plain.mean_accuracy
    assert row.identity_similarity == plain.identity_similarity


def test_intensity_sweep_and_lookup(small_checkpoint):
    result = intensity_sweep(small_checkpoint, 2, [1.0, 20.0], n_samples=10)
    assert result.lookup(2, 20.0).neighborhood_distance > result.lookup(2, 1.0).neighborhood_distance
    with pytest.raises(KeyError):
        result.lookup(3)


def test_sweep_rejects_bad_grid(small_checkpoint):
    with pytest.raises(EvaluationError):
        sweep(small_checkpoint, [9], [1.0], n_samples=5)
    with pytest.raises(EvaluationError):
        sweep(small_checkpoint, [2], [-1.0], n_samples=5)


def test_write_csv_format(tmp_path, small_checkpoint):
    path = write_csv(evaluate(small_checkpoint, n_samples=10).to_frame(), tmp_path / "eval.csv")
    raw = path.read_bytes()
    assert b"\r\n" not in raw
    lines = raw.decode("utf-8").splitlines()
    assert lines[0].startswith("attribute,accuracy,")
    assert len(lines) == 4
    assert lines[-1].startswith("mean,")


def test_time_edit_reports_dims(small_config):
    timing = time_edit(small_config, repeats=2)
    assert timing["parameter_count"] == 242.0
    assert timing["edit_ms"] > 0.0


def test_ablation_study_table(small_config):
    config = small_config.with_overrides(iterations=2)
    table = ablation_study(config, n_samples=5, variants=["A", "C"])
    assert table["variant"].tolist() == ["A", "C"]
    assert {"accuracy", "identity_similarity", "sparsity_ratio", "direction_recovery"} <= set(table.columns)


# =============================================================================
# Desk-run acceptance
# =============================================================================

@pytest.mark.slow
def test_untrained_baseline_is_near_chance(desk_config, desk_world):
    report = evaluate(untrained_checkpoint(desk_config, desk_world), n_samples=1000, seed=7)
    assert report.mean_accuracy < 0.6


@pytest.mark.slow
def test_trained_accuracy_and_identity(trained_desk):
    report = evaluate(trained_desk, n_samples=1000, seed=7)
    assert report.mean_accuracy >= 0.95
    assert report.identity_similarity >= 0.95


@pytest.mark.slow
def test_trained_directions_recover_planted(trained_desk):
    assert direction_recovery(trained_desk).min() >= 0.9


@pytest.mark.slow
def test_trained_directions_are_near_orthogonal(trained_desk):
    angles = angle_matrix(trained_desk)
    off_diagonal = angles[~np.eye(len(angles), dtype=bool)]
    assert off_diagonal.min() >= 75.0 and off_diagonal.max() <= 105.0


@pytest.mark.slow
def test_topk_saturation_and_small_k_intensity(trained_desk):
    d = trained_desk.config.latent_dim
    saturated = math.ceil(0.4 * d)
    result = sweep(trained_desk, [2, saturated, d], [1.0, 5.0, 10.0, 20.0], n_samples=1000)
    full = result.lookup(d, 1.0).accuracy
    assert result.lookup(saturated, 1.0).accuracy >= full - 0.02
    assert result.lookup(2, 1.0).accuracy <= full - 0.1

    small_k = [result.lookup(2, x) for x in (1.0, 5.0, 10.0, 20.0)]
    for before, after in zip(small_k, small_k[1:]):
        assert after.accuracy >= before.accuracy - 0.02
        assert after.identity_similarity <= before.identity_similarity + 0.02


@pytest.mark.slow
def test_sparsity_loss_makes_directions_sparser(desk_config, desk_world):
    heavy = train(desk_config.with_overrides(lambda_sparsity=1.0), desk_world)
    without = train(ablation_configs(desk_config, ["C"])["C"], desk_world)
    assert sparsity_ratio(heavy.params) < sparsity_ratio(without.params)


@pytest.mark.slow
def test_training_is_bit_reproducible(desk_config, desk_world, trained_desk):
    again = train(desk_config, desk_world)
    assert again.metrics["final_total"] == trained_desk.metrics["final_total"]
    assert again.params.directions.tobytes() == trained_desk.params.directions.tobytes()


@pytest.mark.slow
def test_full_size_edit_is_fast():
    timing = time_edit(repeats=5)
    assert 780_000 <= timing["parameter_count"] <= 800_000
    assert timing["edit_ms"] < 50.0
