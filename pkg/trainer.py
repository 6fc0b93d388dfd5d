# trainer.py

"""
Training loop for the latent editor against a synthetic world.

Each iteration draws a batch of W+ codes, annotates them with the world's
classifier, picks per-attribute targets (toggled labels by default), edits
every attribute, and takes one AdaBelief step on the weighted objective.
"""

import logging
import math
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from autodiff_core import Graph, Node, backward, forward, grad_check
from checkpoint_store import Checkpoint
from config import DatasetMode, TargetMode, TrainConfig
from editor_model import EditorGraph, EditorParams, count_parameters, init_params, normalized_directions
from errors import ConfigError, NonFiniteGradientError, TrainingDivergedError
from objectives import (LossReport, LossTerm, classification_loss, direction_loss, identity_loss,
                        neighborhood_loss, sparsity_loss, total_loss)
from optimizer import OptimizerState, adabelief_step, clip_by_global_norm, global_norm
from rng_streams import Purpose, stream
from synthetic_world import (SyntheticWorld, WorldGraph, annotate, build_latent_pool, build_world,
                             sample_wplus)

logger = logging.getLogger(__name__)

# Rows of the architecture / loss ablation table
ABLATIONS: Dict[str, Tuple[str, Dict[str, bool]]] = {
    "A": ("full model", {}),
    "B": ("w/o direction loss", {"disable_direction_loss": True}),
    "C": ("w/o sparsity loss", {"disable_sparsity_loss": True}),
    "D": ("w/o column mixing", {"disable_cfc": True}),
    "E": ("w/o input embedding", {"disable_input_pe": True}),
    "F": ("w/o output embedding", {"disable_output_embedding": True}),
}

# Entries probed per parameter tensor by the gradient suite
GRADCHECK_COORDINATES = 48

# Central-difference roundoff is ~1e-10 * |f| at eps=1e-6; gradients below
# this multiple of max(1, |f|) are compared absolutely.
GRADCHECK_FLOOR_SCALE = 1e-5


# =============================================================================
# Batches and targets
# =============================================================================

class BatchSource:
    """Training latents: fresh W+ samples, or draws from a fixed style-mixed pool"""

    def __init__(self, config: TrainConfig, world: SyntheticWorld):
        self.config = config
        self.world = world
        self.rng = stream(config.seed, Purpose.DATASET)
        self.pool = None
        if config.dataset_mode == DatasetMode.POOL.value:
            self.pool = build_latent_pool(world, self.rng, config.pool_size, config.pool_permutations)

    def next_batch(self) -> List[np.ndarray]:
        if self.pool is None:
            return [sample_wplus(self.world, self.rng) for _ in range(self.config.batch_size)]
        picks = self.rng.integers(len(self.pool), size=self.config.batch_size)
        return [self.pool[i] for i in picks]


def attribute_targets(config: TrainConfig, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Per-sample, per-attribute training targets in {-1, +1}."""
    if config.target_mode == TargetMode.RANDOM.value:
        return np.where(rng.random(labels.shape) < 0.5, -1.0, 1.0)
    return -labels


def target_bits(labels: np.ndarray, m: int, target: float) -> np.ndarray:
    """0/1 classifier targets: toggled for attribute m, original labels elsewhere."""
    bits = (np.asarray(labels, dtype=np.float64) + 1.0) / 2.0
    bits[m] = (target + 1.0) / 2.0
    return bits[None, :]


# =============================================================================
# Objective
# =============================================================================

def _batch_mean(graph: Graph, nodes: Sequence[Node], batch: int) -> Node:
    total = nodes[0]
    for node in nodes[1:]:
        total = graph.add(total, node)
    return graph.scale(total, 1.0 / batch)


def objective_builder(config: TrainConfig, world: SyntheticWorld, batch: Sequence[np.ndarray],
                      labels: np.ndarray, targets: np.ndarray,
                      sink: Optional[Dict[LossTerm, Node]] = None):
    """Graph builder for the weighted objective over one batch.

    Leaves are the editor parameters (PARAM_NAMES). If `sink` is given, the
    five batch-reduced term nodes are stored in it on every build.
    """
    arch = config.architecture()
    weights = config.loss_weights()
    M = config.num_attributes

    def build(graph: Graph, leaves: Dict[str, Node]) -> Node:
        editor = EditorGraph(graph, arch, leaves)
        scene = WorldGraph(graph, world)
        directions = editor.directions()

        per_sample = {LossTerm.CLASS: [], LossTerm.NB: [], LossTerm.DIRECTION: [], LossTerm.ID: []}
        for b, latent in enumerate(batch):
            w = graph.constant(latent)
            intensity = editor.intensities(w)
            feat_orig = scene.identity(scene.generate(w))
            edited, class_terms, id_terms = [], [], []
            for m in range(M):
                _, w_hat = editor.edit(w, intensity, m, float(targets[b, m]))
                edited.append(w_hat)
                x = scene.generate(w_hat)
                class_terms.append(classification_loss(graph, scene.classify(x),
                                                       target_bits(labels[b], m, targets[b, m])))
                id_terms.append(identity_loss(graph, feat_orig, scene.identity(x)))
            per_sample[LossTerm.CLASS].extend(class_terms)
            per_sample[LossTerm.ID].extend(id_terms)
            per_sample[LossTerm.NB].append(neighborhood_loss(graph, edited, w))
            per_sample[LossTerm.DIRECTION].append(direction_loss(graph, intensity, directions))

        terms = {term: _batch_mean(graph, nodes, len(batch)) for term, nodes in per_sample.items()}
        terms[LossTerm.SPARSITY] = sparsity_loss(graph, directions)
        if sink is not None:
            sink.clear()
            sink.update(terms)
        return total_loss(graph, terms, weights)

    return build


def loss_and_gradients(params: Dict[str, np.ndarray], config: TrainConfig, world: SyntheticWorld,
                       batch: Sequence[np.ndarray], labels: np.ndarray, targets: np.ndarray,
                       iteration: int = 0) -> Tuple[LossReport, Dict[str, np.ndarray]]:
    terms: Dict[LossTerm, Node] = {}
    graph = Graph(objective_builder(config, world, batch, labels, targets, sink=terms))
    total = forward(graph, params)
    report = LossReport(iteration=iteration,
                        terms={term.value: terms[term].item() for term in LossTerm},
                        total=float(total[0, 0]))
    if not math.isfinite(report.total):
        return report, {}
    return report, backward(graph)


# =============================================================================
# Training
# =============================================================================

def _direction_drift(params: Dict[str, np.ndarray], direction_norm: str) -> float:
    """Largest deviation of a normalized direction's norm from 1."""
    unit = normalized_directions(EditorParams.from_dict(params), direction_norm)
    norms = np.abs(unit).sum(axis=1) if direction_norm == "l1" else np.linalg.norm(unit, axis=1)
    return float(np.max(np.abs(norms - 1.0)))


def train(config: TrainConfig, world: Optional[SyntheticWorld] = None,
          on_report: Optional[Callable[[LossReport], None]] = None) -> Checkpoint:
    """Run config.iterations AdaBelief steps and return the trained checkpoint.

    A NaN/Inf loss or gradient raises TrainingDivergedError carrying the last
    checkpoint whose loss was finite.
    """
    if world is None:
        world = build_world(config.world_config())
    arch = config.architecture()
    hyper = config.hyper()
    params = init_params(arch, stream(config.seed, Purpose.INIT)).as_dict()
    state = OptimizerState.zeros_like(params)
    source = BatchSource(config, world)
    history: List[LossReport] = []

    def snapshot(values, opt_state, metrics) -> Checkpoint:
        return Checkpoint(config=config, world=world, params=EditorParams.from_dict(values),
                          optimizer=opt_state, metrics=metrics, history=list(history))

    logger.info(f"Training {count_parameters(config.num_layers, config.latent_dim, config.num_attributes):,} "
                f"parameters for {config.iterations} iterations (batch {config.batch_size}, seed {config.seed})")
    started = time.perf_counter()
    first: Optional[LossReport] = None
    report: Optional[LossReport] = None
    last_good = (params, state)

    for iteration in range(1, config.iterations + 1):
        batch = source.next_batch()
        labels = np.stack([annotate(world, latent) for latent in batch])
        targets = attribute_targets(config, labels, source.rng)
        report, grads = loss_and_gradients(params, config, world, batch, labels, targets, iteration)

        if not math.isfinite(report.total):
            raise TrainingDivergedError(
                f"total loss became {report.total} at iteration {iteration}",
                last_good=snapshot(*last_good, {"iterations": float(last_good[1].step)}),
                iteration=iteration)
        last_good = (params, state)

        if config.clip_grad_norm > 0:
            grads, report.grad_norm = clip_by_global_norm(grads, config.clip_grad_norm)
        else:
            report.grad_norm = global_norm(grads)
        try:
            params, state = adabelief_step(params, grads, state, hyper)
        except NonFiniteGradientError as e:
            raise TrainingDivergedError(f"{e.message} at iteration {iteration}",
                                        last_good=snapshot(*last_good, {"iterations": float(last_good[1].step)}),
                                        iteration=iteration)

        if first is None:
            first = report
        if iteration == 1 or iteration % config.log_every == 0 or iteration == config.iterations:
            report.extras["direction_drift"] = _direction_drift(params, config.direction_norm)
            history.append(report)
            terms = " ".join(f"{name}={value:.4f}" for name, value in report.terms.items())
            logger.info(f"iter {iteration}/{config.iterations} total={report.total:.4f} {terms}")
            if on_report is not None:
                on_report(report)

    elapsed = time.perf_counter() - started
    metrics = {
        "iterations": float(config.iterations),
        "initial_total": first.total,
        "final_total": report.total,
        **{f"final_{name}": value for name, value in report.terms.items()},
        "parameter_count": float(count_parameters(config.num_layers, config.latent_dim, config.num_attributes)),
    }
    logger.info(f"Training finished in {elapsed:.1f}s: total {first.total:.4f} -> {report.total:.4f}")
    return snapshot(params, state, metrics)


# =============================================================================
# Gradient verification
# =============================================================================

def _gradcheck_params(arch, rng: np.random.Generator) -> EditorParams:
    """Initialised parameters with every tensor nonzero, so every path carries gradient."""
    params = init_params(arch, rng)
    values = params.as_dict()
    values["layer_embedding"] = rng.normal(0.0, 0.5, size=values["layer_embedding"].shape)
    for name in ("rfc1_bias", "cfc_bias", "rfc2_bias"):
        values[name] = rng.uniform(0.05, 0.3, size=values[name].shape)
    return EditorParams.from_dict(values)


def verify_gradients(config: TrainConfig, points: int = 20, eps: float = 1e-6,
                     floor: Optional[float] = None, batch_size: int = 1,
                     coordinates: Optional[int] = GRADCHECK_COORDINATES,
                     max_attempts: int = 200) -> List[float]:
    """grad_check the full objective at `points` random (parameters, batch) configurations.

    Each point probes `coordinates` random entries of every parameter tensor
    (None probes all of them). Points closer than 10*eps to a ReLU kink are
    redrawn. Returns the max error per point.
    The relative-error floor defaults to GRADCHECK_FLOOR_SCALE * max(1, |f|).
    """
    world = build_world(config.world_config())
    arch = config.architecture()
    rng = stream(config.seed, Purpose.GRADCHECK)
    errors: List[float] = []
    attempts = 0
    while len(errors) < points:
        attempts += 1
        if attempts > max_attempts:
            raise TrainingDivergedError(f"could not find {points} kink-free gradient check points "
                                        f"in {max_attempts} draws")
        params = _gradcheck_params(arch, rng).as_dict()
        batch = [sample_wplus(world, rng) for _ in range(batch_size)]
        labels = np.stack([annotate(world, latent) for latent in batch])
        targets = attribute_targets(config, labels, rng)
        builder = objective_builder(config, world, batch, labels, targets)

        probe = Graph(builder, record=False)
        value = float(forward(probe, params)[0, 0])
        if probe.relu_margin < 10 * eps:
            logger.debug(f"redrawing gradient check point (relu margin {probe.relu_margin:.2e})")
            continue
        point_floor = GRADCHECK_FLOOR_SCALE * max(1.0, abs(value)) if floor is None else floor
        error = grad_check(builder, params, eps=eps, floor=point_floor, coordinates=coordinates, rng=rng)
        logger.info(f"gradient check point {len(errors) + 1}/{points}: max relative error {error:.2e}")
        errors.append(error)
    return errors


# =============================================================================
# Ablations
# =============================================================================

def ablation_configs(config: TrainConfig, variants: Optional[Sequence[str]] = None) -> Dict[str, TrainConfig]:
    """One config per ablation row, all sharing config's seed and schedule."""
    chosen = list(variants or ABLATIONS)
    unknown = [v for v in chosen if v not in ABLATIONS]
    if unknown:
        raise ConfigError(f"unknown ablation variants: {', '.join(unknown)}", variants=unknown)
    base = config.with_overrides(disable_direction_loss=False, disable_sparsity_loss=False, disable_cfc=False,
                                 disable_input_pe=False, disable_output_embedding=False)
    return {variant: base.with_overrides(**ABLATIONS[variant][1]) for variant in chosen}
