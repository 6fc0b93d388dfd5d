# evaluation.py

"""
Metrics for a trained editor: manipulation accuracy, identity similarity,
direction angles, top-k / intensity sweeps, direction recovery and the
ablation table. Tables come back as pandas DataFrames; write_csv emits them.
"""

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from checkpoint_store import Checkpoint
from config import TrainConfig, full_size_config
from editor_model import (EditorParams, bind_inference, count_parameters, edit_single, init_params,
                          normalized_directions)
from errors import EvaluationError
from rng_streams import Purpose, stream
from synthetic_world import SyntheticWorld, annotate, sample_wcode, sample_wplus
from trainer import ABLATIONS, ablation_configs, train

logger = logging.getLogger(__name__)

SPACES = ("wplus", "w")
FEATURE_EPS = 1e-12


# =============================================================================
# Reports
# =============================================================================

@dataclass
class AttributeScore:
    attribute: str
    accuracy: float
    accuracy_to_positive: float
    accuracy_to_negative: float
    edits_to_positive: int
    edits_to_negative: int
    identity_similarity: float
    neighborhood_distance: float


@dataclass
class EvalReport:
    attributes: List[AttributeScore]
    mean_accuracy: float
    identity_similarity: float
    neighborhood_distance: float
    n_samples: int
    seed: int
    space: str = "wplus"
    k: Optional[int] = None
    intensity: float = 1.0

    def to_frame(self) -> pd.DataFrame:
        rows = [asdict(score) for score in self.attributes]
        rows.append({
            "attribute": "mean",
            "accuracy": self.mean_accuracy,
            "accuracy_to_positive": float(np.mean([s.accuracy_to_positive for s in self.attributes])),
            "accuracy_to_negative": float(np.mean([s.accuracy_to_negative for s in self.attributes])),
            "edits_to_positive": sum(s.edits_to_positive for s in self.attributes),
            "edits_to_negative": sum(s.edits_to_negative for s in self.attributes),
            "identity_similarity": self.identity_similarity,
            "neighborhood_distance": self.neighborhood_distance,
        })
        return pd.DataFrame(rows)


@dataclass
class SweepRow:
    k: int
    intensity: float
    accuracy: float
    identity_similarity: float
    neighborhood_distance: float


@dataclass
class SweepResult:
    rows: List[SweepRow] = field(default_factory=list)

    def __post_init__(self):
        self.rows.sort(key=lambda row: (row.k, row.intensity))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(row) for row in self.rows],
                            columns=["k", "intensity", "accuracy", "identity_similarity",
                                     "neighborhood_distance"])

    def lookup(self, k: int, intensity: float = 1.0) -> SweepRow:
        for row in self.rows:
            if row.k == k and row.intensity == intensity:
                return row
        raise KeyError((k, intensity))


# =============================================================================
# Primitives
# =============================================================================

def topk_filter(delta: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest-magnitude entries of each row (ties go to the lower column).

    Works on any array whose last axis is the latent dimension.
    """
    delta = np.asarray(delta, dtype=np.float64)
    d = delta.shape[-1]
    if not 0 <= k <= d:
        raise EvaluationError(f"k must lie in [0, {d}], got {k}")
    if k == d:
        return delta.copy()
    order = np.argsort(-np.abs(delta), axis=-1, kind="stable")
    keep = np.zeros(delta.shape, dtype=bool)
    np.put_along_axis(keep, order[..., :k], True, axis=-1)
    return np.where(keep, delta, 0.0)


def feature_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine similarity along the last axis; identical vectors score exactly 1."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    cos = np.sum(a * b, axis=-1) / ((na + FEATURE_EPS) * (nb + FEATURE_EPS))
    same = np.all(a == b, axis=-1) & (na > 0)
    return np.where(same, 1.0, np.clip(cos, -1.0, 1.0))


def angle_matrix(ckpt: Checkpoint) -> np.ndarray:
    """Pairwise angles between learned directions in degrees (symmetric, zero diagonal)."""
    raw = ckpt.params.directions
    norms = np.linalg.norm(raw, axis=1)
    if np.any(norms <= 1e-12):
        dead = [ckpt.config.attributes[m] for m in np.flatnonzero(norms <= 1e-12)]
        raise EvaluationError(f"zero direction for {', '.join(dead)}")
    unit = raw / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    cos = (cos + cos.T) / 2.0
    angles = np.degrees(np.arccos(cos))
    np.fill_diagonal(angles, 0.0)
    return angles


def direction_recovery(ckpt: Checkpoint) -> np.ndarray:
    """|cos(P_m, u_m)| between each learned direction and the planted one."""
    unit = normalized_directions(ckpt.params, "l2")
    return np.abs(np.sum(unit * ckpt.world.planted, axis=1))


def sparsity_ratio(params: EditorParams) -> float:
    """Mean L1/L2 ratio of the directions: 1 for one-hot, sqrt(d) for uniform."""
    raw = params.directions
    l2 = np.maximum(np.linalg.norm(raw, axis=1), 1e-12)
    return float(np.mean(np.abs(raw).sum(axis=1) / l2))


# =============================================================================
# Edit collection and scoring
# =============================================================================

@dataclass
class EditBatch:
    """Held-out latents with their toggle targets and realized increments"""
    latents: np.ndarray      # n x L x d
    targets: np.ndarray      # n x M
    increments: np.ndarray   # n x M x L x d
    seed: int
    space: str


def collect_edits(ckpt: Checkpoint, n_samples: int, seed: int = 7, space: str = "wplus") -> EditBatch:
    """Sample n held-out latents (one EVAL substream each) and edit every attribute toward its toggle."""
    if n_samples <= 0:
        raise EvaluationError(f"n_samples must be positive, got {n_samples}")
    if space not in SPACES:
        raise EvaluationError(f"space must be one of {SPACES}, got {space!r}")
    world = ckpt.world
    sampler = sample_wplus if space == "wplus" else sample_wcode
    arch = ckpt.config.architecture()
    M = ckpt.config.num_attributes

    latents = np.stack([sampler(world, stream(seed, Purpose.EVAL, i)) for i in range(n_samples)])
    targets = -annotate(world, latents)
    increments = np.empty((n_samples, M) + latents.shape[1:])
    for i, latent in enumerate(latents):
        editor = bind_inference(ckpt.params, arch)
        w = editor.graph.constant(latent)
        intensity = editor.intensities(w)
        for m in range(M):
            increments[i, m] = editor.increment(intensity, m, float(targets[i, m])).value
    return EditBatch(latents=latents, targets=targets, increments=increments, seed=seed, space=space)


def score_edits(ckpt: Checkpoint, edits: EditBatch, k: Optional[int] = None,
                intensity: float = 1.0) -> EvalReport:
    """Apply the collected increments (optionally top-k filtered and scaled) and score them."""
    if intensity <= 0:
        raise EvaluationError(f"intensity must be positive, got {intensity}")
    world = ckpt.world
    increments = edits.increments
    if k is not None:
        increments = topk_filter(increments, k)
    if intensity != 1.0:
        increments = increments * intensity

    edited = edits.latents[:, None] + increments                     # n x M x L x d
    logits = world.classify(world.generate(edited))                  # n x M x M
    own = np.einsum("nmm->nm", logits)
    reached = np.where(own >= 0.0, 1.0, -1.0) == edits.targets       # n x M
    # originals go through the same shaped pass, so an unchanged code scores exactly 1
    originals = np.repeat(edits.latents[:, None], edited.shape[1], axis=1)
    similarity = feature_similarity(world.identity(world.generate(edited)),
                                    world.identity(world.generate(originals)))   # n x M
    distance = np.sqrt(np.sum(increments ** 2, axis=(-2, -1)))       # n x M

    scores = []
    for m, name in enumerate(ckpt.config.attributes):
        positive = edits.targets[:, m] > 0
        scores.append(AttributeScore(
            attribute=name,
            accuracy=float(reached[:, m].mean()),
            accuracy_to_positive=float(reached[positive, m].mean()) if positive.any() else math.nan,
            accuracy_to_negative=float(reached[~positive, m].mean()) if (~positive).any() else math.nan,
            edits_to_positive=int(positive.sum()),
            edits_to_negative=int((~positive).sum()),
            identity_similarity=float(similarity[:, m].mean()),
            neighborhood_distance=float(distance[:, m].mean()),
        ))
    return EvalReport(
        attributes=scores,
        mean_accuracy=float(np.mean([s.accuracy for s in scores])),
        identity_similarity=float(similarity.mean()),
        neighborhood_distance=float(distance.mean()),
        n_samples=len(edits.latents),
        seed=edits.seed,
        space=edits.space,
        k=k,
        intensity=intensity,
    )


def evaluate(ckpt: Checkpoint, n_samples: int = 1000, seed: int = 7, space: str = "wplus",
             k: Optional[int] = None, intensity: float = 1.0) -> EvalReport:
    """Toggle every attribute of n held-out samples and report accuracy and identity similarity."""
    started = time.perf_counter()
    report = score_edits(ckpt, collect_edits(ckpt, n_samples, seed, space), k, intensity)
    logger.info(f"Evaluated {n_samples} {space} samples (seed {seed}) in {time.perf_counter() - started:.1f}s: "
                f"accuracy={report.mean_accuracy:.4f} identity={report.identity_similarity:.4f}")
    return report


# =============================================================================
# Sweeps
# =============================================================================

def sweep(ckpt: Checkpoint, k_list: Sequence[int], intensities: Sequence[float],
          n_samples: int = 1000, seed: int = 7) -> SweepResult:
    """Score every (k, intensity) pair on one shared set of held-out edits."""
    d = ckpt.config.latent_dim
    for k in k_list:
        if not 0 <= k <= d:
            raise EvaluationError(f"k must lie in [0, {d}], got {k}")
    for intensity in intensities:
        if intensity <= 0:
            raise EvaluationError(f"intensity must be positive, got {intensity}")
    edits = collect_edits(ckpt, n_samples, seed)
    rows = []
    for k in sorted(set(int(k) for k in k_list)):
        for intensity in sorted(set(float(x) for x in intensities)):
            report = score_edits(ckpt, edits, k, intensity)
            rows.append(SweepRow(k=k, intensity=intensity, accuracy=report.mean_accuracy,
                                 identity_similarity=report.identity_similarity,
                                 neighborhood_distance=report.neighborhood_distance))
            logger.debug(f"sweep k={k} intensity={intensity:g}: accuracy={report.mean_accuracy:.4f}")
    return SweepResult(rows)


def topk_sweep(ckpt: Checkpoint, k_list: Sequence[int], n_samples: int = 1000, seed: int = 7,
               intensity: float = 1.0) -> SweepResult:
    return sweep(ckpt, k_list, [intensity], n_samples, seed)


def intensity_sweep(ckpt: Checkpoint, k: int, intensities: Sequence[float], n_samples: int = 1000,
                    seed: int = 7) -> SweepResult:
    return sweep(ckpt, [k], intensities, n_samples, seed)


# =============================================================================
# Studies
# =============================================================================

def untrained_checkpoint(config: TrainConfig, world: SyntheticWorld) -> Checkpoint:
    """Random directions with an all-zero IAIP (so l_ft = 0): the chance-level baseline."""
    params = init_params(config.architecture(), stream(config.seed, Purpose.INIT))
    for name in ("rfc1_weight", "cfc_weight", "rfc2_weight"):
        setattr(params, name, np.zeros_like(getattr(params, name)))
    return Checkpoint(config=config, world=world, params=params)


def ablation_study(config: TrainConfig, n_samples: int = 1000, seed: int = 7,
                   variants: Optional[Sequence[str]] = None) -> pd.DataFrame:
    """Train each ablation variant with the same seed and tabulate its metrics."""
    rows = []
    for variant, variant_config in ablation_configs(config, variants).items():
        logger.info(f"Ablation {variant}: {ABLATIONS[variant][0]}")
        ckpt = train(variant_config)
        report = evaluate(ckpt, n_samples, seed)
        recovery = direction_recovery(ckpt)
        rows.append({
            "variant": variant,
            "description": ABLATIONS[variant][0],
            "accuracy": report.mean_accuracy,
            "identity_similarity": report.identity_similarity,
            "neighborhood_distance": report.neighborhood_distance,
            "sparsity_ratio": sparsity_ratio(ckpt.params),
            "direction_recovery": float(recovery.mean()),
            "final_total": ckpt.metrics.get("final_total", math.nan),
        })
    return pd.DataFrame(rows)


def time_edit(config: Optional[TrainConfig] = None, repeats: int = 5) -> Dict[str, float]:
    """Parameter count and best-of-`repeats` wall time of one edit_single at the given dims."""
    if config is None:
        config = full_size_config()
    arch = config.architecture()
    rng = stream(config.seed, Purpose.INIT)
    params = init_params(arch, rng)
    latent = rng.standard_normal((config.num_layers, config.latent_dim))
    timings = []
    for _ in range(max(1, repeats)):
        started = time.perf_counter()
        edit_single(latent, 0, 1, params, arch)
        timings.append(time.perf_counter() - started)
    return {
        "num_layers": float(config.num_layers),
        "latent_dim": float(config.latent_dim),
        "num_attributes": float(config.num_attributes),
        "parameter_count": float(count_parameters(config.num_layers, config.latent_dim, config.num_attributes)),
        "edit_ms": 1000.0 * min(timings),
    }


# =============================================================================
# Tables
# =============================================================================

def angle_frame(ckpt: Checkpoint) -> pd.DataFrame:
    angles = angle_matrix(ckpt)
    names = list(ckpt.config.attributes)
    frame = pd.DataFrame(angles, columns=names)
    frame.insert(0, "attribute", names)
    return frame


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Header plus one row per record, '.' decimals, '\\n' line ends."""
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator="\n", float_format="%.10g")
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path
