# editor_model.py

"""
The latent editor: M learnable global directions, an instance-aware intensity
predictor (IAIP) and per-attribute layer gates.

For a W+ code w (L x d) and an attribute m with target sign a in {-1, 0, +1}:

    l_ft  = IAIP(w)                       L x d, non-negative
    raw   = l_ft * P_m + P_m              per-row intensity on the unit direction
    delta = sigmoid(E_m)^T * (a * raw)    gated per layer
    w'    = w + delta

Several attributes at once are merged by keeping, per entry, the increment of
largest magnitude.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from autodiff_core import Graph, Node
from errors import LabError, LatentShapeError, ShapeError

logger = logging.getLogger(__name__)

PARAM_NAMES = (
    "directions",        # P-hat, M x d
    "layer_embedding",   # E, M x L
    "rfc1_weight",       # 2d x d
    "rfc1_bias",         # 1 x d
    "cfc_weight",        # L x L
    "cfc_bias",          # 1 x L
    "rfc2_weight",       # d x d
    "rfc2_bias",         # 1 x d
)

NORM_FLOOR = 1e-12
PE_BASE = 10000.0


@dataclass(frozen=True)
class EditorArchitecture:
    num_layers: int
    latent_dim: int
    num_attributes: int
    direction_norm: str = "l2"
    use_cfc: bool = True
    use_input_pe: bool = True
    use_output_embedding: bool = True

    def param_shapes(self) -> Dict[str, Tuple[int, int]]:
        L, d, M = self.num_layers, self.latent_dim, self.num_attributes
        return {
            "directions": (M, d),
            "layer_embedding": (M, L),
            "rfc1_weight": (2 * d, d),
            "rfc1_bias": (1, d),
            "cfc_weight": (L, L),
            "cfc_bias": (1, L),
            "rfc2_weight": (d, d),
            "rfc2_bias": (1, d),
        }


@dataclass
class EditorParams:
    directions: np.ndarray
    layer_embedding: np.ndarray
    rfc1_weight: np.ndarray
    rfc1_bias: np.ndarray
    cfc_weight: np.ndarray
    cfc_bias: np.ndarray
    rfc2_weight: np.ndarray
    rfc2_bias: np.ndarray

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(L, d, M)"""
        M, d = self.directions.shape
        return self.layer_embedding.shape[1], d, M

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, values: Dict[str, np.ndarray]) -> "EditorParams":
        missing = [name for name in PARAM_NAMES if name not in values]
        if missing:
            raise LabError(f"editor parameters missing: {', '.join(missing)}")
        params = cls(**{name: np.array(values[name], dtype=np.float64) for name in PARAM_NAMES})
        L, d, M = params.dims
        expected = EditorArchitecture(L, d, M).param_shapes()
        for name in PARAM_NAMES:
            if getattr(params, name).shape != expected[name]:
                raise ShapeError(name, getattr(params, name).shape, expected[name],
                                 reason="parameter shape mismatch")
        return params

    def size(self) -> int:
        return sum(getattr(self, name).size for name in PARAM_NAMES)


def count_parameters(num_layers: int, latent_dim: int, num_attributes: int) -> int:
    """Trainable scalars: directions, layer embedding and the three IAIP layers."""
    L, d, M = num_layers, latent_dim, num_attributes
    return M * d + M * L + (2 * d * d + d) + (L * L + L) + (d * d + d)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(arch: EditorArchitecture, rng: np.random.Generator) -> EditorParams:
    """Glorot-uniform IAIP weights, zero biases, Gaussian directions, zero layer embedding.

    A zero embedding starts every gate at sigmoid(0) = 0.5.
    """
    L, d, M = arch.num_layers, arch.latent_dim, arch.num_attributes
    return EditorParams(
        directions=rng.standard_normal((M, d)) / np.sqrt(d),
        layer_embedding=np.zeros((M, L)),
        rfc1_weight=_glorot(rng, 2 * d, d),
        rfc1_bias=np.zeros((1, d)),
        cfc_weight=_glorot(rng, L, L),
        cfc_bias=np.zeros((1, L)),
        rfc2_weight=_glorot(rng, d, d),
        rfc2_bias=np.zeros((1, d)),
    )


def default_architecture(params: EditorParams, **options) -> EditorArchitecture:
    L, d, M = params.dims
    return EditorArchitecture(L, d, M, **options)


def positional_encoding(num_layers: int, latent_dim: int) -> np.ndarray:
    """Sinusoidal layer encoding, L x d: even columns sin, odd columns cos."""
    if latent_dim % 2:
        raise ShapeError("positional_encoding", (num_layers, latent_dim),
                         reason="latent_dim must be even, got")
    position = np.arange(num_layers, dtype=np.float64)[:, None]
    frequency = PE_BASE ** (-np.arange(0, latent_dim, 2, dtype=np.float64) / latent_dim)
    encoding = np.empty((num_layers, latent_dim))
    encoding[:, 0::2] = np.sin(position * frequency)
    encoding[:, 1::2] = np.cos(position * frequency)
    return encoding


class EditorGraph:
    """The editor's forward pass expressed on one autodiff graph.

    `params` maps every name in PARAM_NAMES to a node (trainable leaves while
    training, constants for inference).
    """

    def __init__(self, graph: Graph, arch: EditorArchitecture, params: Dict[str, Node]):
        self.graph = graph
        self.arch = arch
        self.params = params
        L, d = arch.num_layers, arch.latent_dim
        encoding = positional_encoding(L, d) if arch.use_input_pe else np.zeros((L, d))
        self._encoding = graph.constant(encoding)
        self._directions: Optional[List[Node]] = None
        self._gates: Optional[List[Node]] = None

    @classmethod
    def bind(cls, graph: Graph, arch: EditorArchitecture, params: EditorParams,
             trainable: bool = False) -> "EditorGraph":
        values = params.as_dict()
        if trainable:
            nodes = {name: graph.leaf(name, values[name]) for name in PARAM_NAMES}
        else:
            nodes = {name: graph.constant(values[name]) for name in PARAM_NAMES}
        return cls(graph, arch, nodes)

    def directions(self) -> List[Node]:
        """Unit directions P_m = P-hat_m / max(norm, 1e-12), one 1 x d node each."""
        if self._directions is None:
            g = self.graph
            raw = self.params["directions"]
            self._directions = []
            for m in range(self.arch.num_attributes):
                row = g.slice_rows(raw, m, m + 1)
                norm = g.l1_norm(row) if self.arch.direction_norm == "l1" else g.l2_norm(row)
                if norm.item() <= NORM_FLOOR:
                    norm = g.constant(NORM_FLOOR)
                self._directions.append(g.div(row, norm))
        return self._directions

    def gates(self) -> List[Node]:
        """Per-layer gates sigmoid(E_m)^T, one L x 1 node each."""
        if self._gates is None:
            g = self.graph
            if not self.arch.use_output_embedding:
                ones = g.constant(np.ones((self.arch.num_layers, 1)))
                self._gates = [ones] * self.arch.num_attributes
            else:
                embedding = self.params["layer_embedding"]
                self._gates = [g.sigmoid(g.transpose(g.slice_rows(embedding, m, m + 1)))
                               for m in range(self.arch.num_attributes)]
        return self._gates

    def intensities(self, w: Node) -> Node:
        """IAIP: RFC(2d -> d), CFC across layers, RFC(d -> d); L x d, non-negative."""
        g, p = self.graph, self.params
        if w.shape != (self.arch.num_layers, self.arch.latent_dim):
            raise LatentShapeError(f"latent has shape {w.shape}, editor expects "
                                   f"{(self.arch.num_layers, self.arch.latent_dim)}")
        hidden = g.relu(g.concat_cols(w, self._encoding) @ p["rfc1_weight"] + p["rfc1_bias"])
        if self.arch.use_cfc:
            hidden = g.transpose(g.relu(g.transpose(hidden) @ p["cfc_weight"] + p["cfc_bias"]))
        return g.relu(hidden @ p["rfc2_weight"] + p["rfc2_bias"])

    def raw_increment(self, intensity: Node, m: int) -> Node:
        direction = self.directions()[m]
        return intensity * direction + direction

    def increment(self, intensity: Node, m: int, attr: float) -> Node:
        """Gated, signed increment for attribute m."""
        _check_attr(attr)
        signed = self.graph.scale(self.raw_increment(intensity, m), attr)
        return self.gates()[m] * signed

    def edit(self, w: Node, intensity: Node, m: int, attr: float) -> Tuple[Node, Node]:
        delta = self.increment(intensity, m, attr)
        return delta, w + delta


def _check_attr(attr: float) -> None:
    if attr not in (-1, 0, 1):
        raise LabError(f"attribute target must be -1, 0 or +1, got {attr}")


def _check_index(m: int, count: int) -> None:
    if not 0 <= m < count:
        raise LabError(f"attribute index {m} out of range for {count} attributes")


def bind_inference(params: EditorParams, arch: Optional[EditorArchitecture] = None) -> EditorGraph:
    """A fresh non-recording graph holding the editor with frozen parameters."""
    arch = arch or default_architecture(params)
    return EditorGraph.bind(Graph(record=False), arch, params, trainable=False)


def _latent(editor: EditorGraph, w_org: np.ndarray) -> Node:
    w = np.asarray(w_org, dtype=np.float64)
    expected = (editor.arch.num_layers, editor.arch.latent_dim)
    if w.shape != expected:
        raise LatentShapeError(f"latent has shape {w.shape}, editor expects {expected}")
    return editor.graph.constant(w)


def normalized_directions(params: EditorParams, direction_norm: str = "l2") -> np.ndarray:
    raw = params.directions
    if direction_norm == "l1":
        norms = np.abs(raw).sum(axis=1, keepdims=True)
    else:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
    return raw / np.maximum(norms, NORM_FLOOR)


def iaip_forward(w_org: np.ndarray, params: EditorParams,
                 arch: Optional[EditorArchitecture] = None) -> np.ndarray:
    editor = bind_inference(params, arch)
    return np.array(editor.intensities(_latent(editor, w_org)).value)


class SingleEdit(NamedTuple):
    delta: np.ndarray   # gated increment, L x d
    edited: np.ndarray  # w_org + delta


def edit_single(w_org: np.ndarray, m: int, attr: float, params: EditorParams,
                arch: Optional[EditorArchitecture] = None) -> SingleEdit:
    """(increment, edited latent) for one attribute; attr 0 returns w unchanged."""
    editor = bind_inference(params, arch)
    _check_index(m, editor.arch.num_attributes)
    _check_attr(attr)
    w = _latent(editor, w_org)
    if attr == 0:
        return SingleEdit(delta=np.zeros(w.shape), edited=np.array(w.value))
    delta, edited = editor.edit(w, editor.intensities(w), m, attr)
    return SingleEdit(delta=np.array(delta.value), edited=np.array(edited.value))


def edit_increments(w_org: np.ndarray, attrs: Sequence[float], params: EditorParams,
                    arch: Optional[EditorArchitecture] = None) -> List[np.ndarray]:
    """One gated increment per attribute (zeros where attr is 0), sharing one IAIP pass."""
    editor = bind_inference(params, arch)
    if len(attrs) != editor.arch.num_attributes:
        raise LabError(f"expected {editor.arch.num_attributes} attribute targets, got {len(attrs)}")
    w = _latent(editor, w_org)
    intensity = None
    increments = []
    for m, attr in enumerate(attrs):
        _check_attr(attr)
        if attr == 0:
            increments.append(np.zeros(w.shape))
            continue
        if intensity is None:
            intensity = editor.intensities(w)
        increments.append(np.array(editor.increment(intensity, m, attr).value))
    return increments


def absmax_merge(deltas: Sequence[np.ndarray]) -> np.ndarray:
    """Entry-wise pick of the value with the largest magnitude.

    Ties between +v and -v resolve to +v, so the merge is order independent.
    """
    if not deltas:
        raise LabError("absmax_merge needs at least one increment")
    arrays = [np.asarray(d, dtype=np.float64) for d in deltas]
    if len({a.shape for a in arrays}) != 1:
        raise ShapeError("absmax_merge", *(a.shape for a in arrays))
    stacked = np.stack(arrays)
    magnitude = np.abs(stacked)
    winners = np.where(magnitude == magnitude.max(axis=0), stacked, -np.inf)
    return winners.max(axis=0)


def edit_multi(w_org: np.ndarray, attrs: Sequence[float], params: EditorParams,
               arch: Optional[EditorArchitecture] = None) -> np.ndarray:
    """Edit several attributes at once by absmax-merging their increments."""
    w = np.asarray(w_org, dtype=np.float64)
    increments = edit_increments(w, attrs, params, arch)
    if all(attr == 0 for attr in attrs):
        return w.copy()
    return w + absmax_merge(increments)
