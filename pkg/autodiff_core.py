# autodiff_core.py

"""
Reverse-mode automatic differentiation over dense 2-D float64 tensors.

A Graph is a define-by-run tape: every primitive appends a Node holding its
cached output and an adjoint closure, so the node list is already in
topological order and backward is a single reversed sweep. Tensors are plain
numpy arrays marked read-only; scalars are 1x1.

    graph = Graph(lambda g, leaves: g.sum(g.mul(leaves["x"], leaves["x"])))
    forward(graph, {"x": [[3.0]]})     # -> [[9.]]
    backward(graph)["x"]               # -> [[6.]]
"""

import logging
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from errors import LabError, NotScalarError, ShapeError

logger = logging.getLogger(__name__)

Tensor = np.ndarray
Adjoint = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]
Builder = Callable[["Graph", Dict[str, "Node"]], "Node"]

COS_EPS = 1e-12


def as_tensor(value, op: str = "tensor") -> np.ndarray:
    """Copy value into a read-only 2-D float64 array (scalars -> 1x1, vectors -> 1xn)."""
    array = np.array(value, dtype=np.float64)
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    elif array.ndim != 2:
        raise ShapeError(op, array.shape, reason="expected a 2-D tensor, got")
    array.setflags(write=False)
    return array


def _broadcast_dim(op: str, a: Tuple[int, int], b: Tuple[int, int], axis: int) -> int:
    x, y = a[axis], b[axis]
    if x == y or y == 1:
        return x
    if x == 1:
        return y
    raise ShapeError(op, a, b)


def _broadcast_shape(op: str, a: Tuple[int, int], b: Tuple[int, int]) -> Tuple[int, int]:
    return _broadcast_dim(op, a, b, 0), _broadcast_dim(op, a, b, 1)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    """Sum grad back down to an operand that was broadcast along rows or columns."""
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


class Node:
    """One recorded value in a Graph"""

    __slots__ = ("graph", "index", "value", "op", "inputs", "requires_grad", "name", "adjoint")

    def __init__(self, graph: "Graph", index: int, value: np.ndarray, op: str,
                 inputs: Tuple["Node", ...], requires_grad: bool,
                 adjoint: Optional[Adjoint] = None, name: Optional[str] = None):
        self.graph = graph
        self.index = index
        self.value = value
        self.op = op
        self.inputs = inputs
        self.requires_grad = requires_grad
        self.adjoint = adjoint
        self.name = name

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def T(self) -> "Node":
        return self.graph.transpose(self)

    def item(self) -> float:
        return float(self.value[0, 0])

    def __add__(self, other: "Node") -> "Node":
        return self.graph.add(self, other)

    def __sub__(self, other: "Node") -> "Node":
        return self.graph.sub(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return self.graph.mul(self, other)

    def __truediv__(self, other: "Node") -> "Node":
        return self.graph.div(self, other)

    def __matmul__(self, other: "Node") -> "Node":
        return self.graph.matmul(self, other)

    def __neg__(self) -> "Node":
        return self.graph.scale(self, -1.0)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Node({self.op}{label}, shape={self.shape})"


class Graph:
    """Define-by-run tape of primitive ops.

    With record=False no adjoints are kept, which is what inference and the
    finite-difference probes use.
    """

    def __init__(self, builder: Optional[Builder] = None, record: bool = True):
        self.builder = builder
        self.record = record
        self.reset()

    def reset(self) -> None:
        self.nodes: List[Node] = []
        self.leaves: Dict[str, Node] = {}
        self.root: Optional[Node] = None
        self.relu_margin = math.inf

    # ------------------------------------------------------------------ leaves

    def leaf(self, name: str, value, requires_grad: bool = True) -> Node:
        if name in self.leaves:
            raise LabError(f"leaf {name!r} bound twice")
        node = self._append(as_tensor(value, name), "leaf", (), requires_grad and self.record, None, name)
        self.leaves[name] = node
        return node

    def constant(self, value) -> Node:
        return self._append(as_tensor(value), "const", (), False, None, None)

    def _append(self, value, op, inputs, requires_grad, adjoint, name=None) -> Node:
        node = Node(self, len(self.nodes), value, op, inputs, requires_grad, adjoint, name)
        self.nodes.append(node)
        return node

    def _emit(self, op: str, value: np.ndarray, inputs: Sequence[Node], adjoint: Adjoint) -> Node:
        for node in inputs:
            if node.graph is not self:
                raise LabError(f"{op}: input {node!r} belongs to another graph")
        if not np.all(np.isfinite(value)):
            logger.debug(f"{op} produced non-finite values")
        value.setflags(write=False)
        requires = self.record and any(node.requires_grad for node in inputs)
        return self._append(value, op, tuple(inputs), requires, adjoint if requires else None)

    # -------------------------------------------------------------- primitives

    def matmul(self, a: Node, b: Node) -> Node:
        if a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        av, bv = a.value, b.value
        return self._emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def transpose(self, a: Node) -> Node:
        return self._emit("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))

    def add(self, a: Node, b: Node) -> Node:
        _broadcast_shape("add", a.shape, b.shape)
        sa, sb = a.shape, b.shape
        return self._emit("add", a.value + b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a: Node, b: Node) -> Node:
        _broadcast_shape("sub", a.shape, b.shape)
        sa, sb = a.shape, b.shape
        return self._emit("sub", a.value - b.value, (a, b),
                          lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))

    def mul(self, a: Node, b: Node) -> Node:
        _broadcast_shape("mul", a.shape, b.shape)
        av, bv = a.value, b.value
        return self._emit("mul", av * bv, (a, b),
                          lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))

    def div(self, a: Node, b: Node) -> Node:
        _broadcast_shape("div", a.shape, b.shape)
        av, bv = a.value, b.value
        return self._emit("div", av / bv, (a, b),
                          lambda g: (_unbroadcast(g / bv, av.shape),
                                     _unbroadcast(-g * av / (bv * bv), bv.shape)))

    def scale(self, a: Node, factor: float) -> Node:
        factor = float(factor)
        return self._emit("scale", a.value * factor, (a,), lambda g: (g * factor,))

    def relu(self, a: Node) -> Node:
        av = a.value
        if av.size:
            self.relu_margin = min(self.relu_margin, float(np.min(np.abs(av))))
        mask = av > 0.0
        return self._emit("relu", np.where(mask, av, 0.0), (a,), lambda g: (g * mask,))

    def sigmoid(self, a: Node) -> Node:
        out = expit(a.value)
        return self._emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))

    def concat_cols(self, *parts: Node) -> Node:
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1:
            raise ShapeError("concat_cols", *(p.shape for p in parts))
        bounds = np.cumsum([0] + [p.shape[1] for p in parts])

        def adjoint(g):
            return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

        return self._emit("concat_cols", np.concatenate([p.value for p in parts], axis=1), parts, adjoint)

    def slice_rows(self, a: Node, start: int, stop: int) -> Node:
        if not 0 <= start < stop <= a.shape[0]:
            raise ShapeError("slice_rows", a.shape, reason=f"rows [{start}:{stop}] out of range for")
        shape = a.shape

        def adjoint(g):
            full = np.zeros(shape)
            full[start:stop] = g
            return (full,)

        return self._emit("slice_rows", a.value[start:stop].copy(), (a,), adjoint)

    def slice_cols(self, a: Node, start: int, stop: int) -> Node:
        if not 0 <= start < stop <= a.shape[1]:
            raise ShapeError("slice_cols", a.shape, reason=f"cols [{start}:{stop}] out of range for")
        shape = a.shape

        def adjoint(g):
            full = np.zeros(shape)
            full[:, start:stop] = g
            return (full,)

        return self._emit("slice_cols", a.value[:, start:stop].copy(), (a,), adjoint)

    def sum(self, a: Node) -> Node:
        shape = a.shape
        return self._emit("sum", np.array([[a.value.sum()]]), (a,),
                          lambda g: (np.full(shape, g[0, 0]),))

    def mean(self, a: Node) -> Node:
        shape, size = a.shape, a.value.size
        return self._emit("mean", np.array([[a.value.mean()]]), (a,),
                          lambda g: (np.full(shape, g[0, 0] / size),))

    def l1_norm(self, a: Node) -> Node:
        sign = np.sign(a.value)
        return self._emit("l1_norm", np.array([[np.abs(a.value).sum()]]), (a,),
                          lambda g: (g[0, 0] * sign,))

    def l2_norm(self, a: Node) -> Node:
        av = a.value
        norm = float(np.linalg.norm(av))

        def adjoint(g):
            if norm == 0.0:
                return (np.zeros_like(av),)
            return (g[0, 0] * av / norm,)

        return self._emit("l2_norm", np.array([[norm]]), (a,), adjoint)

    def cosine(self, a: Node, b: Node) -> Node:
        """Row-wise cosine similarity; b may be a single row broadcast over a's rows.

        Each norm is guarded by COS_EPS, so zero rows give cosine 0.
        """
        if a.shape[1] != b.shape[1] or b.shape[0] not in (1, a.shape[0]):
            raise ShapeError("cosine", a.shape, b.shape)
        av = a.value
        bv = np.broadcast_to(b.value, av.shape)
        na = np.linalg.norm(av, axis=1, keepdims=True)
        nb = np.linalg.norm(bv, axis=1, keepdims=True)
        denom = (na + COS_EPS) * (nb + COS_EPS)
        out = np.sum(av * bv, axis=1, keepdims=True) / denom
        inv_a = np.divide(1.0, na * (na + COS_EPS), out=np.zeros_like(na), where=na > 0)
        inv_b = np.divide(1.0, nb * (nb + COS_EPS), out=np.zeros_like(nb), where=nb > 0)
        b_shape = b.shape

        def adjoint(g):
            grad_a = g * (bv / denom - out * av * inv_a)
            grad_b = g * (av / denom - out * bv * inv_b)
            return grad_a, _unbroadcast(grad_b, b_shape)

        return self._emit("cosine", out, (a, b), adjoint)

    def bce_with_logits(self, logits: Node, targets) -> Node:
        """Mean binary cross-entropy of logits against constant 0/1 targets."""
        t = as_tensor(targets, "bce_with_logits")
        if t.shape != logits.shape:
            raise ShapeError("bce_with_logits", logits.shape, t.shape)
        z = logits.value
        size = z.size
        # softplus(z) - t*z == -[t log s(z) + (1-t) log(1-s(z))], stable for large |z|
        losses = np.logaddexp(0.0, z) - t * z
        return self._emit("bce_with_logits", np.array([[losses.mean()]]), (logits,),
                          lambda g: (g[0, 0] * (expit(z) - t) / size,))

    # ---------------------------------------------------------------- backward

    def backward(self, root: Optional[Node] = None) -> Dict[str, np.ndarray]:
        """Gradient of the scalar root with respect to every trainable leaf."""
        if root is None:
            root = self.root
        if root is None:
            raise LabError("backward called before forward")
        if root.shape != (1, 1):
            raise NotScalarError(f"backward needs a scalar root, got shape {root.shape}")

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[root.index] = np.ones((1, 1))
        for node in reversed(self.nodes[:root.index + 1]):
            g = grads[node.index]
            if g is None or node.adjoint is None:
                continue
            for parent, contribution in zip(node.inputs, node.adjoint(g)):
                if contribution is None or not parent.requires_grad:
                    continue
                previous = grads[parent.index]
                grads[parent.index] = contribution if previous is None else previous + contribution

        result = {}
        for name, leaf in self.leaves.items():
            if not leaf.requires_grad:
                continue
            g = grads[leaf.index]
            result[name] = np.zeros(leaf.shape) if g is None else np.array(g, dtype=np.float64)
        return result


def forward(graph: Graph, leaf_values: Dict[str, object]) -> np.ndarray:
    """Rebuild the graph from its builder with the given leaves; return the root value."""
    if graph.builder is None:
        raise LabError("graph has no builder to run forward")
    graph.reset()
    leaves = {name: graph.leaf(name, value) for name, value in leaf_values.items()}
    root = graph.builder(graph, leaves)
    if not isinstance(root, Node) or root.graph is not graph:
        raise LabError("builder must return a node of the graph it was given")
    graph.root = root
    return root.value


def backward(graph: Graph) -> Dict[str, np.ndarray]:
    return graph.backward()


def _scalar_at(function: Builder, point: Dict[str, np.ndarray]) -> float:
    graph = Graph(function, record=False)
    value = forward(graph, point)
    if value.shape != (1, 1):
        raise NotScalarError(f"grad_check needs a scalar function, got shape {value.shape}")
    return float(value[0, 0])


def _probe_indices(shape: Tuple[int, int], coordinates: Optional[int],
                   rng: Optional[np.random.Generator]):
    size = int(np.prod(shape))
    if coordinates is None or coordinates >= size:
        return list(np.ndindex(shape))
    rng = rng or np.random.default_rng(0)
    chosen = np.sort(rng.choice(size, size=coordinates, replace=False))
    return [np.unravel_index(flat, shape) for flat in chosen]


def grad_check(function: Builder, point: Dict[str, object], eps: float = 1e-6,
               floor: float = 1e-12, coordinates: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    error = |analytic - numeric| / max(floor, |analytic| + |numeric|), maximised
    over every coordinate of every leaf, or over `coordinates` randomly chosen
    coordinates per leaf when that is set.
    """
    point = {name: np.array(as_tensor(value, name)) for name, value in point.items()}
    graph = Graph(function)
    forward(graph, point)
    if graph.relu_margin < 10 * eps:
        logger.warning(f"grad_check point lies within {graph.relu_margin:.2e} of a ReLU kink")
    analytic = backward(graph)

    worst = 0.0
    for name, base in point.items():
        for index in _probe_indices(base.shape, coordinates, rng):
            probe = dict(point)
            shifted = base.copy()
            shifted[index] = base[index] + eps
            probe[name] = shifted
            f_plus = _scalar_at(function, probe)
            shifted = base.copy()
            shifted[index] = base[index] - eps
            probe[name] = shifted
            f_minus = _scalar_at(function, probe)
            numeric = (f_plus - f_minus) / (2.0 * eps)
            exact = analytic[name][index]
            error = abs(exact - numeric) / max(floor, abs(exact) + abs(numeric))
            worst = max(worst, error)
    return worst


def _away_from_zero(values: np.ndarray, margin: float = 0.1) -> np.ndarray:
    return np.where(values >= 0, 1.0, -1.0) * np.maximum(np.abs(values), margin)


def primitive_cases(rng: np.random.Generator) -> Dict[str, Tuple[Builder, Dict[str, np.ndarray]]]:
    """One random (builder, point) probe per primitive, each reduced to a scalar.

    Outputs are weighted by fixed random matrices before summing so every
    adjoint sees a non-uniform upstream gradient.
    """
    rows, cols, inner = (int(n) for n in rng.integers(2, 5, size=3))
    x = rng.standard_normal((rows, cols))
    y = rng.standard_normal((rows, cols))
    w = rng.standard_normal((cols, inner))
    row = rng.standard_normal((1, cols))
    targets = (rng.random((rows, cols)) < 0.5).astype(float)
    weights = {
        shape: rng.standard_normal(shape)
        for shape in [(rows, cols), (rows, inner), (cols, rows), (rows, 2 * cols),
                      (1, cols), (rows, cols - 1), (rows, 1)]
    }

    def weighted(g: Graph, node: Node) -> Node:
        return g.sum(g.mul(node, g.constant(weights[node.shape])))

    return {
        "matmul": (lambda g, v: weighted(g, g.matmul(v["x"], v["w"])), {"x": x, "w": w}),
        "transpose": (lambda g, v: weighted(g, g.transpose(v["x"])), {"x": x}),
        "add": (lambda g, v: weighted(g, g.add(v["x"], v["r"])), {"x": x, "r": row}),
        "sub": (lambda g, v: weighted(g, g.sub(v["x"], v["y"])), {"x": x, "y": y}),
        "mul": (lambda g, v: weighted(g, g.mul(v["x"], v["r"])), {"x": x, "r": row}),
        "div": (lambda g, v: weighted(g, g.div(v["x"], v["y"])), {"x": x, "y": _away_from_zero(y, 0.5)}),
        "scale": (lambda g, v: weighted(g, g.scale(v["x"], -1.7)), {"x": x}),
        "relu": (lambda g, v: weighted(g, g.relu(v["x"])), {"x": _away_from_zero(x)}),
        "sigmoid": (lambda g, v: weighted(g, g.sigmoid(v["x"])), {"x": x}),
        "concat_cols": (lambda g, v: weighted(g, g.concat_cols(v["x"], v["y"])), {"x": x, "y": y}),
        "slice_rows": (lambda g, v: weighted(g, g.slice_rows(v["x"], 0, 1)), {"x": x}),
        "slice_cols": (lambda g, v: weighted(g, g.slice_cols(v["x"], 1, cols)), {"x": x}),
        "sum": (lambda g, v: g.sum(g.mul(v["x"], v["x"])), {"x": x}),
        "mean": (lambda g, v: g.mean(g.mul(v["x"], v["y"])), {"x": x, "y": y}),
        "l1_norm": (lambda g, v: g.l1_norm(v["x"]), {"x": _away_from_zero(x)}),
        "l2_norm": (lambda g, v: g.l2_norm(v["x"]), {"x": x}),
        "cosine": (lambda g, v: weighted(g, g.cosine(v["x"], v["r"])), {"x": x, "r": row}),
        "bce_with_logits": (lambda g, v: g.bce_with_logits(v["x"], targets), {"x": x}),
    }


# Gradients smaller than this are compared absolutely: central differences
# carry ~1e-10 of roundoff at eps=1e-6, which swamps a relative measure near 0.
SUITE_FLOOR = 1e-2


def check_primitives(rng: np.random.Generator, trials: int = 100, eps: float = 1e-6,
                     floor: float = SUITE_FLOOR) -> Dict[str, float]:
    """Worst grad_check error per primitive over `trials` random probes."""
    worst: Dict[str, float] = {}
    for _ in range(trials):
        for op, (builder, point) in primitive_cases(rng).items():
            worst[op] = max(worst.get(op, 0.0), grad_check(builder, point, eps=eps, floor=floor))
    return worst
