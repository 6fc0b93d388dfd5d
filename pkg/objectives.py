# objectives.py

"""
Training losses as autodiff graph fragments, and their weighted sum.

Batch reduction is done by the caller (trainer): per-sample terms are summed
over attributes here and averaged over the batch there.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Dict, Mapping, Sequence

import numpy as np

from autodiff_core import Graph, Node
from errors import ConfigError, LabError


class LossTerm(Enum):
    CLASS = "class"
    NB = "nb"
    SPARSITY = "sparsity"
    DIRECTION = "direction"
    ID = "id"


@dataclass(frozen=True)
class LossWeights:
    lambda_class: float = 2.0
    lambda_nb: float = 0.3
    lambda_sparsity: float = 1.0
    lambda_direction: float = 1.0
    lambda_id: float = 5.0

    def __post_init__(self):
        negative = [name for name, value in asdict(self).items() if value < 0]
        if negative:
            raise ConfigError(f"loss weights must be >= 0: {', '.join(negative)}")

    def weight(self, term: LossTerm) -> float:
        return getattr(self, f"lambda_{term.value}")


@dataclass
class LossReport:
    """Per-term values and the weighted total for one training step"""
    iteration: int
    terms: Dict[str, float]
    total: float
    grad_norm: float = 0.0
    extras: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_terms(cls, iteration: int, terms: Mapping[LossTerm, float],
                   weights: LossWeights, **extras: float) -> "LossReport":
        values = {term.value: float(terms[term]) for term in LossTerm}
        return cls(iteration=iteration, terms=values, total=weighted_total(terms, weights),
                   extras=dict(extras))

    def to_row(self) -> Dict[str, float]:
        row = {"iteration": self.iteration, "total": self.total}
        row.update({f"loss_{name}": value for name, value in self.terms.items()})
        row["grad_norm"] = self.grad_norm
        row.update(self.extras)
        return row


def _sum_nodes(graph: Graph, nodes: Sequence[Node]) -> Node:
    if not nodes:
        return graph.constant(0.0)
    total = nodes[0]
    for node in nodes[1:]:
        total = graph.add(total, node)
    return total


def sparsity_loss(graph: Graph, directions: Sequence[Node]) -> Node:
    """Sum over attributes of the L1 norm of each normalized direction."""
    return _sum_nodes(graph, [graph.l1_norm(direction) for direction in directions])


def direction_loss(graph: Graph, intensity: Node, directions: Sequence[Node]) -> Node:
    """Sum over attributes and layers of 1 - cos(l_ft^i * P_m, P_m)."""
    rows = float(intensity.shape[0])
    per_attribute = []
    for direction in directions:
        cos = graph.cosine(graph.mul(intensity, direction), direction)
        per_attribute.append(graph.sub(graph.constant(rows), graph.sum(cos)))
    return _sum_nodes(graph, per_attribute)


def neighborhood_loss(graph: Graph, edited: Sequence[Node], original: Node) -> Node:
    """Sum over attributes of the Frobenius distance between edited and original codes."""
    return _sum_nodes(graph, [graph.l2_norm(graph.sub(w_hat, original)) for w_hat in edited])


def classification_loss(graph: Graph, logits: Node, target_bits) -> Node:
    """Mean over attributes of the binary cross-entropy of the logits against 0/1 bits."""
    bits = np.asarray(target_bits, dtype=np.float64).reshape(logits.shape)
    if np.any((bits != 0.0) & (bits != 1.0)):
        raise LabError(f"classification targets must be 0/1 bits, got {bits.tolist()}")
    return graph.bce_with_logits(logits, bits)


def identity_loss(graph: Graph, feat_orig: Node, feat_edit: Node) -> Node:
    """1 - cos between the identity features before and after an edit (in [0, 2])."""
    return graph.sub(graph.constant(1.0), graph.cosine(feat_edit, feat_orig))


def total_loss(graph: Graph, terms: Mapping[LossTerm, Node], weights: LossWeights) -> Node:
    """Weighted sum of the five terms; zero-weighted terms stay out of the graph."""
    missing = [term.value for term in LossTerm if term not in terms]
    if missing:
        raise LabError(f"total_loss needs every term, missing: {', '.join(missing)}")
    weighted = [graph.scale(terms[term], weights.weight(term))
                for term in LossTerm if weights.weight(term) > 0]
    return _sum_nodes(graph, weighted)


def weighted_total(terms: Mapping[LossTerm, float], weights: LossWeights) -> float:
    return float(sum(weights.weight(term) * float(terms[term]) for term in LossTerm
                     if weights.weight(term) > 0))
