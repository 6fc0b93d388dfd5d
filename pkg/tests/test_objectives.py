"""
Tests for the training losses and the weighted objective.
"""

import math

import numpy as np
import pytest

from autodiff_core import Graph, grad_check
from errors import ConfigError, LabError
from objectives import (LossReport, LossTerm, LossWeights, classification_loss, direction_loss,
                        identity_loss, neighborhood_loss, sparsity_loss, total_loss, weighted_total)


@pytest.fixture
def graph():
    return Graph(record=False)


def test_sparsity_of_one_hot_is_one(graph):
    direction = graph.constant([[0.0, 1.0, 0.0, 0.0]])
    assert sparsity_loss(graph, [direction]).item() == 1.0


def test_sparsity_of_spread_direction(graph):
    direction = graph.constant(np.full((1, 4), 0.5))
    assert sparsity_loss(graph, [direction]).item() == pytest.approx(2.0)


def test_sparsity_sums_over_attributes(graph):
    directions = [graph.constant([[0.6, 0.8]]), graph.constant([[-1.0, 0.0]])]
    assert sparsity_loss(graph, directions).item() == pytest.approx(2.4)


def test_direction_loss_zero_for_uniform_positive_rows(graph, rng):
    intensity = graph.constant(np.repeat(rng.uniform(0.1, 2.0, size=(5, 1)), 6, axis=1))
    directions = [graph.constant(rng.standard_normal((1, 6))) for _ in range(2)]
    assert direction_loss(graph, intensity, directions).item() == pytest.approx(0.0, abs=1e-9)


def test_direction_loss_counts_zero_rows_as_one(graph, rng):
    """A zero intensity row has cosine 0, so it contributes 1."""
    values = np.repeat(rng.uniform(0.1, 2.0, size=(4, 1)), 3, axis=1)
    values[2] = 0.0
    intensity = graph.constant(values)
    direction = graph.constant([[0.3, -0.5, 0.8]])
    assert direction_loss(graph, intensity, [direction]).item() == pytest.approx(1.0, abs=1e-9)


def test_direction_loss_of_half_aligned_row(graph):
    intensity = graph.constant([[1.0, 0.0]])
    direction = graph.constant([[1.0, 1.0]])
    assert direction_loss(graph, intensity, [direction]).item() == pytest.approx(1 - 1 / math.sqrt(2), abs=1e-9)
    assert direction_loss(graph, intensity, [direction]).item() == pytest.approx(0.29289, abs=1e-5)


def test_direction_loss_ignores_positive_row_scale(graph, rng):
    values = rng.uniform(0.1, 2.0, size=(4, 5))
    directions = [graph.constant(rng.standard_normal((1, 5))) for _ in range(3)]
    scaled = values * rng.uniform(0.2, 7.0, size=(4, 1))
    before = direction_loss(graph, graph.constant(values), directions).item()
    after = direction_loss(graph, graph.constant(scaled), directions).item()
    assert after == pytest.approx(before, rel=1e-9)


def test_direction_loss_gradient(rng):
    point = {"l": rng.standard_normal((3, 4)), "p": rng.standard_normal((1, 4))}
    error = grad_check(lambda g, v: direction_loss(g, v["l"], [v["p"]]), point, floor=1e-2)
    assert error < 1e-6


def test_neighborhood_is_frobenius_distance(graph):
    original = graph.constant(np.zeros((2, 2)))
    edited = [graph.constant([[3.0, 0.0], [0.0, 4.0]]), graph.constant([[1.0, 0.0], [0.0, 0.0]])]
    assert neighborhood_loss(graph, edited, original).item() == pytest.approx(6.0)


def test_neighborhood_zero_without_change(graph, rng):
    w = graph.constant(rng.standard_normal((3, 5)))
    assert neighborhood_loss(graph, [w, w], w).item() == 0.0


def test_classification_loss_at_zero_logits(graph):
    logits = graph.constant(np.zeros((1, 4)))
    value = classification_loss(graph, logits, [1, 0, 1, 1]).item()
    assert value == pytest.approx(math.log(2.0), abs=1e-12)


def test_classification_loss_confident_and_correct(graph):
    logits = graph.constant([[30.0, -30.0]])
    assert classification_loss(graph, logits, [1, 0]).item() < 1e-12


def test_classification_loss_rejects_signed_targets(graph):
    with pytest.raises(LabError):
        classification_loss(graph, graph.constant([[0.0, 0.0]]), [1, -1])


def test_identity_loss_range(graph):
    feature = graph.constant([[1.0, 2.0, -1.0]])
    assert identity_loss(graph, feature, feature).item() == pytest.approx(0.0, abs=1e-12)
    opposite = graph.constant([[-1.0, -2.0, 1.0]])
    assert identity_loss(graph, feature, opposite).item() == pytest.approx(2.0, abs=1e-12)
    orthogonal = graph.constant([[2.0, -1.0, 0.0]])
    assert identity_loss(graph, feature, orthogonal).item() == pytest.approx(1.0, abs=1e-12)


def constant_terms(graph, values):
    return {term: graph.constant(value) for term, value in zip(LossTerm, values)}


def test_total_loss_weighted_sum(graph):
    weights = LossWeights()
    values = [0.5, 1.0, 2.0, 0.25, 0.1]
    total = total_loss(graph, constant_terms(graph, values), weights).item()
    assert total == pytest.approx(2.0 * 0.5 + 0.3 * 1.0 + 1.0 * 2.0 + 1.0 * 0.25 + 5.0 * 0.1)


def test_zero_weight_term_is_left_out(graph):
    weights = LossWeights(lambda_nb=0.0)
    values = [0.5, float("inf"), 2.0, 0.25, 0.1]
    total = total_loss(graph, constant_terms(graph, values), weights).item()
    assert math.isfinite(total)
    assert total == pytest.approx(weighted_total(dict(zip(LossTerm, values)), weights))


def test_all_zero_weights_give_zero(graph):
    weights = LossWeights(0.0, 0.0, 0.0, 0.0, 0.0)
    assert total_loss(graph, constant_terms(graph, [1.0] * 5), weights).item() == 0.0


def test_total_loss_requires_every_term(graph):
    terms = constant_terms(graph, [1.0] * 5)
    del terms[LossTerm.ID]
    with pytest.raises(LabError):
        total_loss(graph, terms, LossWeights())


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(lambda_id=-1.0)


def test_loss_report_row():
    terms = dict(zip(LossTerm, [0.5, 1.0, 2.0, 0.25, 0.1]))
    report = LossReport.from_terms(10, terms, LossWeights(), drift=0.01)
    row = report.to_row()
    assert row["iteration"] == 10
    assert row["loss_class"] == 0.5
    assert row["loss_id"] == 0.1
    assert row["total"] == pytest.approx(4.05)
    assert row["drift"] == 0.01
