# synthetic_world.py

"""
A fully linear stand-in for the generator / attribute classifier / face
recognizer trio that latent editing is normally trained against.

    x       = A (sum_i rho_i w_i)          generator, A is P x d
    logits  = C x + b                      one linear head per attribute
    feat    = Q x                          identity features, Q _|_ span{A u_m}

Every attribute m has a planted unit direction u_m with C_m A a positive
multiple of u_m, so moving the (rho-weighted) latent along u_m changes exactly
that attribute's logit and leaves the identity features untouched. That makes
direction recovery measurable against truth. A is scaled so the weakest of
those logit slopes equals generator_gain.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from autodiff_core import Graph, Node
from errors import ConfigError, LatentShapeError, WorldBuildError
from rng_streams import Purpose, stream

logger = logging.getLogger(__name__)

# Planted directions are resampled until every pairwise |cos| is below this
MAX_PLANTED_OVERLAP = 0.3
PLANT_ATTEMPTS = 200

# Construction self-checks
UNIT_RESPONSE_TOL = 1e-9
IDENTITY_LEAK_TOL = 1e-9

META_FIELDS = ("num_layers", "latent_dim", "num_attributes", "image_dim", "identity_dim",
               "planted_sparsity", "classifier_bias_scale", "generator_gain", "seed")


@dataclass(frozen=True)
class WorldConfig:
    num_layers: int = 6
    latent_dim: int = 32
    num_attributes: int = 4
    image_dim: int = 64
    identity_dim: int = 16
    layer_weights: Optional[Tuple[float, ...]] = None  # None -> 1 / (1 + i)
    planted_sparsity: Optional[int] = None  # nonzeros per direction, None -> dense
    classifier_bias_scale: float = 0.0
    generator_gain: float = 32.0  # min over attributes of the logit slope along u_m
    seed: int = 7

    def rho(self) -> np.ndarray:
        if self.layer_weights is None:
            return 1.0 / (1.0 + np.arange(self.num_layers, dtype=np.float64))
        rho = np.asarray(self.layer_weights, dtype=np.float64)
        if rho.shape != (self.num_layers,) or np.any(rho <= 0):
            raise WorldBuildError(f"layer_weights must hold {self.num_layers} positive values")
        return rho


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    config: WorldConfig
    mixing: np.ndarray             # A, P x d
    heads: np.ndarray              # C, M x P, unit rows
    biases: np.ndarray             # b, (M,)
    identity_projector: np.ndarray  # Q, q x P, unit rows
    planted: np.ndarray            # U, M x d, unit rows
    layer_weights: np.ndarray      # rho, (L,)
    diagnostics: Dict[str, float] = field(default_factory=dict)

    @property
    def latent_shape(self) -> Tuple[int, int]:
        return self.config.num_layers, self.config.latent_dim

    # Vectorised over any leading axes: w is (..., L, d), x is (..., P)

    def generate(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        if w.shape[-2:] != self.latent_shape:
            raise LatentShapeError(f"latent has shape {w.shape[-2:]}, world expects {self.latent_shape}")
        pooled = np.einsum("l,...ld->...d", self.layer_weights, w)
        return pooled @ self.mixing.T

    def classify(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.heads.T + self.biases

    def identity(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) @ self.identity_projector.T


class WorldGraph:
    """The world's maps as constant nodes of one autodiff graph"""

    def __init__(self, graph: Graph, world: SyntheticWorld):
        self.graph = graph
        self.rho = graph.constant(world.layer_weights[None, :])
        self.mixing_t = graph.constant(world.mixing.T)
        self.heads_t = graph.constant(world.heads.T)
        self.biases = graph.constant(world.biases[None, :])
        self.projector_t = graph.constant(world.identity_projector.T)

    def generate(self, w: Node) -> Node:
        return (self.rho @ w) @ self.mixing_t

    def classify(self, x: Node) -> Node:
        return x @ self.heads_t + self.biases

    def identity(self, x: Node) -> Node:
        return x @ self.projector_t


# =============================================================================
# Construction
# =============================================================================

def _plant_directions(rng: np.random.Generator, d: int, count: int,
                      nonzeros: Optional[int]) -> np.ndarray:
    for attempt in range(1, PLANT_ATTEMPTS + 1):
        planted = np.zeros((count, d))
        if nonzeros is None:
            planted = rng.standard_normal((count, d))
        elif count * nonzeros <= d:
            order = rng.permutation(d)
            for m in range(count):
                support = order[m * nonzeros:(m + 1) * nonzeros]
                planted[m, support] = rng.choice([-1.0, 1.0], size=nonzeros)
        else:
            for m in range(count):
                support = rng.choice(d, size=nonzeros, replace=False)
                planted[m, support] = rng.choice([-1.0, 1.0], size=nonzeros)

        norms = np.linalg.norm(planted, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            continue
        planted /= norms
        overlap = np.abs(planted @ planted.T) - np.eye(count)
        if count == 1 or overlap.max() < MAX_PLANTED_OVERLAP:
            logger.debug(f"planted directions accepted after {attempt} draw(s)")
            return planted
    raise WorldBuildError(
        f"could not draw {count} planted directions with pairwise |cos| < {MAX_PLANTED_OVERLAP} "
        f"in {PLANT_ATTEMPTS} attempts")


def check_world(world: SyntheticWorld) -> Dict[str, float]:
    """Measure the construction invariants; raise WorldBuildError if any is off."""
    response = world.heads @ world.mixing
    response = response / np.linalg.norm(response, axis=1, keepdims=True)
    unit_error = float(max(np.max(np.abs(response - world.planted)),
                           np.max(np.abs(np.linalg.norm(world.planted, axis=1) - 1.0))))
    slopes = np.einsum("mp,pd,md->m", world.heads, world.mixing, world.planted)
    # relative to the weakest logit slope, so the check is scale free
    leak = float(np.max(np.abs(world.identity_projector @ world.mixing @ world.planted.T)) / slopes.min())
    overlap = np.abs(world.planted @ world.planted.T) - np.eye(len(world.planted))
    diagnostics = {
        "max_unit_response_error": unit_error,
        "max_identity_leak": leak,
        "max_planted_overlap": float(overlap.max()) if overlap.size else 0.0,
        "mixing_condition": float(np.linalg.cond(world.mixing)),
        "min_logit_slope": float(slopes.min()),
    }
    if unit_error > UNIT_RESPONSE_TOL:
        raise WorldBuildError(f"classifier heads miss the planted directions by {unit_error:.2e}")
    if leak > IDENTITY_LEAK_TOL:
        raise WorldBuildError(f"identity features respond to planted directions ({leak:.2e})")
    return diagnostics


def build_world(config: WorldConfig) -> SyntheticWorld:
    """Deterministically construct the world for config.seed."""
    L, d, M = config.num_layers, config.latent_dim, config.num_attributes
    P, q = config.image_dim, config.identity_dim
    if q + M > P:
        raise WorldBuildError(f"identity_dim + num_attributes ({q} + {M}) exceeds image_dim {P}")
    if P < d:
        raise WorldBuildError(f"image_dim {P} must be at least latent_dim {d}")
    if M > d:
        raise WorldBuildError(f"cannot plant {M} directions in a {d}-dimensional latent")
    if config.planted_sparsity is not None and not 1 <= config.planted_sparsity <= d:
        raise WorldBuildError(f"planted_sparsity must lie in [1, {d}]")
    if not config.generator_gain > 0:
        raise WorldBuildError(f"generator_gain must be > 0 (got {config.generator_gain})")
    rho = config.rho()

    rng = stream(config.seed, Purpose.WORLD)
    mixing = rng.standard_normal((P, d)) / np.sqrt(d)
    if np.linalg.matrix_rank(mixing) < d:
        raise WorldBuildError("generator mixing matrix is rank deficient")

    planted = _plant_directions(rng, d, M, config.planted_sparsity)

    # Minimum-norm c with A^T c = u_m, rescaled to a unit head, so C_m A is a
    # positive multiple of u_m.
    heads = np.empty((M, P))
    for m in range(M):
        solution, *_ = np.linalg.lstsq(mixing.T, planted[m], rcond=None)
        heads[m] = solution / np.linalg.norm(solution)

    # Scaling A leaves the unit heads and every direction relation unchanged.
    slopes = np.einsum("mp,pd,md->m", heads, mixing, planted)
    mixing = mixing * (config.generator_gain / slopes.min())

    if config.classifier_bias_scale > 0:
        biases = rng.normal(0.0, config.classifier_bias_scale, size=M)
    else:
        biases = np.zeros(M)

    image_dirs = (mixing @ planted.T)  # P x M, columns A u_m
    basis, triangle = np.linalg.qr(image_dirs)
    if np.min(np.abs(np.diag(triangle))) < 1e-10:
        raise WorldBuildError("planted image directions are linearly dependent")
    raw = rng.standard_normal((q, P))
    projected = raw - (raw @ basis) @ basis.T
    norms = np.linalg.norm(projected, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise WorldBuildError("identity projector row vanished after orthogonalisation")
    projector = projected / norms

    for array in (mixing, heads, biases, projector, planted, rho):
        array.setflags(write=False)
    world = SyntheticWorld(config=config, mixing=mixing, heads=heads, biases=biases,
                           identity_projector=projector, planted=planted, layer_weights=rho)
    world.diagnostics.update(check_world(world))
    logger.info(f"Built world L={L} d={d} M={M} P={P} q={q} seed={config.seed} "
                f"(cond(A)={world.diagnostics['mixing_condition']:.2f}, "
                f"max overlap={world.diagnostics['max_planted_overlap']:.3f})")
    return world


# =============================================================================
# Operations
# =============================================================================

def world_generate(world: SyntheticWorld, w: np.ndarray) -> np.ndarray:
    return world.generate(w)


def world_classify(world: SyntheticWorld, x: np.ndarray) -> np.ndarray:
    return world.classify(x)


def world_identity(world: SyntheticWorld, x: np.ndarray) -> np.ndarray:
    return world.identity(x)


def annotate(world: SyntheticWorld, w: np.ndarray) -> np.ndarray:
    """+/-1 attribute labels of latent(s) w; a logit of exactly 0 counts as +1."""
    logits = world.classify(world.generate(w))
    return np.where(logits >= 0.0, 1.0, -1.0)


def sample_wplus(world: SyntheticWorld, rng: np.random.Generator) -> np.ndarray:
    """Style-mix two Gaussian codes: each layer takes one of them at random."""
    L, d = world.latent_shape
    first = rng.standard_normal(d)
    second = rng.standard_normal(d)
    take_first = rng.random(L) < 0.5
    return np.where(take_first[:, None], first, second)


def sample_wcode(world: SyntheticWorld, rng: np.random.Generator) -> np.ndarray:
    """A single Gaussian code repeated on every layer (the W space)."""
    L, d = world.latent_shape
    return np.tile(rng.standard_normal(d), (L, 1))


def build_latent_pool(world: SyntheticWorld, rng: np.random.Generator, pool_size: int,
                      permutations: int) -> np.ndarray:
    """Fixed training pool: every base code is style-mixed with `permutations` random partners."""
    if pool_size < 1 or permutations < 1:
        raise ConfigError(f"pool_size and permutations must be >= 1 (got {pool_size}, {permutations})")
    L, d = world.latent_shape
    base = rng.standard_normal((pool_size, d))
    partners = rng.integers(pool_size, size=(pool_size, permutations))
    masks = rng.random((pool_size, permutations, L)) < 0.5
    pool = np.where(masks[..., None], base[:, None, None, :], base[partners][:, :, None, :])
    pool = pool.reshape(pool_size * permutations, L, d)
    logger.info(f"Built latent pool of {len(pool)} codes ({pool_size} x {permutations})")
    return pool


# =============================================================================
# Records
# =============================================================================

def world_to_records(world: SyntheticWorld, prefix: str = "world/") -> Dict[str, np.ndarray]:
    cfg = world.config
    meta = [float(getattr(cfg, name) if getattr(cfg, name) is not None else 0) for name in META_FIELDS]
    return {
        f"{prefix}meta": np.array([meta]),
        f"{prefix}layer_weights": world.layer_weights[None, :],
        f"{prefix}mixing": world.mixing,
        f"{prefix}heads": world.heads,
        f"{prefix}biases": world.biases[None, :],
        f"{prefix}identity_projector": world.identity_projector,
        f"{prefix}planted": world.planted,
    }


def world_from_records(records: Dict[str, np.ndarray], prefix: str = "world/") -> SyntheticWorld:
    """Rebuild a world from stored tensors (no resampling) and re-check it."""
    meta = dict(zip(META_FIELDS, records[f"{prefix}meta"].reshape(-1)))
    rho = np.array(records[f"{prefix}layer_weights"]).reshape(-1)
    sparsity = int(meta["planted_sparsity"])
    config = WorldConfig(
        num_layers=int(meta["num_layers"]),
        latent_dim=int(meta["latent_dim"]),
        num_attributes=int(meta["num_attributes"]),
        image_dim=int(meta["image_dim"]),
        identity_dim=int(meta["identity_dim"]),
        layer_weights=tuple(float(v) for v in rho),
        planted_sparsity=sparsity or None,
        classifier_bias_scale=float(meta["classifier_bias_scale"]),
        generator_gain=float(meta["generator_gain"]),
        seed=int(meta["seed"]),
    )
    arrays = {
        name: np.array(records[f"{prefix}{name}"])
        for name in ("mixing", "heads", "identity_projector", "planted")
    }
    biases = np.array(records[f"{prefix}biases"]).reshape(-1)
    for array in (*arrays.values(), biases, rho):
        array.setflags(write=False)
    world = SyntheticWorld(config=config, biases=biases, layer_weights=rho, **arrays)
    world.diagnostics.update(check_world(world))
    return world
