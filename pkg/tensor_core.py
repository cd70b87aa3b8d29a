"""
Tensor Core
===========
Dense float64 tensors, an append-only reverse-mode tape (``Graph``) and the
three optimizers used across the project (plain gradient descent, Adam and
Adadelta).

The tape records eagerly: every op computes its forward value the moment it
is appended, saves whatever its backward rule needs, and hands back a
``Node`` handle.  ``gradients`` walks the tape once in reverse id order,
which is a valid topological order because inputs always have smaller ids.

```python
g = Graph()
w = g.leaf(np.ones((2, 2)), requires_grad=True)
x = g.constant([[1.0], [0.0]])
loss = (w @ x).sum()
grads = gradients(g, loss)          # {w.id: Tensor([[1, 0], [1, 0]])}
```
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from errors import ContractError, NumericError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------

class Tensor:
    """A float64 array plus the ``requires_grad`` flag."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data: Any, requires_grad: bool = False):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.data.shape)

    def flat(self) -> np.ndarray:
        """Row-major flat view of the values."""
        return self.data.ravel()

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


Backward = Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class _Record:
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray
    requires_grad: bool
    backward: Backward | None = None
    saved: dict[str, Any] = field(default_factory=dict)


class Node:
    """Handle to one tape entry; arithmetic operators append new entries."""

    __slots__ = ("graph", "id")

    def __init__(self, graph: "Graph", node_id: int):
        self.graph = graph
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    @property
    def saved(self) -> dict[str, Any]:
        return self.graph.nodes[self.id].saved

    def __add__(self, other): return self.graph.add(self, other)
    def __radd__(self, other): return self.graph.add(other, self)
    def __sub__(self, other): return self.graph.sub(self, other)
    def __rsub__(self, other): return self.graph.sub(other, self)
    def __mul__(self, other): return self.graph.mul(self, other)
    def __rmul__(self, other): return self.graph.mul(other, self)
    def __neg__(self): return self.graph.mul(self, -1.0)
    def __matmul__(self, other): return self.graph.matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Node":
        return self.graph.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Node":
        return self.graph.mean(self, axis=axis, keepdims=keepdims)

    def log(self) -> "Node": return self.graph.log(self)
    def exp(self) -> "Node": return self.graph.exp(self)
    def tanh(self) -> "Node": return self.graph.tanh(self)
    def sigmoid(self) -> "Node": return self.graph.sigmoid(self)

    def reshape(self, *shape: int) -> "Node":
        return self.graph.reshape(self, shape)

    def __repr__(self) -> str:
        return f"Node(id={self.id}, op={self.graph.nodes[self.id].op}, shape={self.shape})"


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# The tape
# ---------------------------------------------------------------------------

class Graph:
    """Append-only list of op records; node ids are list positions."""

    def __init__(self) -> None:
        self.nodes: list[_Record] = []

    def __len__(self) -> int:
        return len(self.nodes)

    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~ plumbing ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

    def _push(
        self,
        op: str,
        inputs: Sequence[Node],
        value: np.ndarray,
        backward: Backward | None = None,
        saved: dict[str, Any] | None = None,
    ) -> Node:
        ids = tuple(n.id for n in inputs)
        needs_grad = any(self.nodes[i].requires_grad for i in ids)
        self.nodes.append(
            _Record(
                op=op,
                inputs=ids,
                value=np.asarray(value, dtype=DTYPE),
                requires_grad=needs_grad,
                backward=backward if needs_grad else None,
                saved=saved or {},
            )
        )
        return Node(self, len(self.nodes) - 1)

    def lift(self, x: Any) -> Node:
        """Return ``x`` if it is a node of this graph, else a constant leaf."""
        if isinstance(x, Node):
            if x.graph is not self:
                raise ContractError("node belongs to a different graph")
            return x
        return self.constant(x)

    def leaf(self, value: Any, requires_grad: bool = False) -> Node:
        data = value.data if isinstance(value, Tensor) else value
        if isinstance(value, Tensor):
            requires_grad = requires_grad or value.requires_grad
        arr = np.array(data, dtype=DTYPE)
        self.nodes.append(_Record(op="leaf", inputs=(), value=arr, requires_grad=requires_grad))
        return Node(self, len(self.nodes) - 1)

    def constant(self, value: Any) -> Node:
        return self.leaf(value, requires_grad=False)

    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~ elementwise ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

    def _broadcast_pair(self, a: Any, b: Any, op: str) -> tuple[Node, Node]:
        a, b = self.lift(a), self.lift(b)
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError as exc:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc
        return a, b

    def add(self, a: Any, b: Any) -> Node:
        a, b = self._broadcast_pair(a, b, "add")
        sa, sb = a.shape, b.shape
        return self._push(
            "add", (a, b), a.value + b.value,
            lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    def sub(self, a: Any, b: Any) -> Node:
        a, b = self._broadcast_pair(a, b, "sub")
        sa, sb = a.shape, b.shape
        return self._push(
            "sub", (a, b), a.value - b.value,
            lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def mul(self, a: Any, b: Any) -> Node:
        a, b = self._broadcast_pair(a, b, "mul")
        va, vb = a.value, b.value
        return self._push(
            "mul", (a, b), va * vb,
            lambda g: (_unbroadcast(g * vb, va.shape), _unbroadcast(g * va, vb.shape)),
        )

    def exp(self, x: Node) -> Node:
        out = np.exp(x.value)
        return self._push("exp", (x,), out, lambda g: (g * out,))

    def log(self, x: Node) -> Node:
        v = x.value
        if np.any(v <= 0.0):
            raise NumericError("log of a non-positive value; clamp probabilities first")
        return self._push("log", (x,), np.log(v), lambda g: (g / v,))

    def tanh(self, x: Node) -> Node:
        out = np.tanh(x.value)
        return self._push("tanh", (x,), out, lambda g: (g * (1.0 - out * out),))

    def sigmoid(self, x: Node) -> Node:
        out = 0.5 * (1.0 + np.tanh(0.5 * x.value))
        return self._push("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))

    def leaky_relu(self, x: Node, slope: float = 0.2) -> Node:
        v = x.value
        scale = np.where(v > 0.0, 1.0, slope)
        return self._push("leaky_relu", (x,), v * scale, lambda g: (g * scale,))

    def clip(self, x: Node, lo: float, hi: float) -> Node:
        v = x.value
        inside = (v >= lo) & (v <= hi)
        return self._push("clip", (x,), np.clip(v, lo, hi), lambda g: (g * inside,))

    def softmax(self, x: Node, axis: int = -1) -> Node:
        v = x.value
        e = np.exp(v - v.max(axis=axis, keepdims=True))
        out = e / e.sum(axis=axis, keepdims=True)

        def backward(g: np.ndarray):
            return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

        return self._push("softmax", (x,), out, backward)

    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~ reductions ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

    def sum(self, x: Node, axis: int | None = None, keepdims: bool = False) -> Node:
        shape = x.shape

        def backward(g: np.ndarray):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return self._push("sum", (x,), x.value.sum(axis=axis, keepdims=keepdims), backward)

    def mean(self, x: Node, axis: int | None = None, keepdims: bool = False) -> Node:
        count = x.value.size if axis is None else x.shape[axis]
        if count == 0:
            raise ShapeError("mean over an empty axis")
        return self.mul(self.sum(x, axis=axis, keepdims=keepdims), 1.0 / count)

    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~ structure ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

    def reshape(self, x: Node, shape: Sequence[int]) -> Node:
        old = x.shape
        try:
            out = x.value.reshape(tuple(shape))
        except ValueError as exc:
            raise ShapeError(f"reshape: {old} -> {tuple(shape)}") from exc
        return self._push("reshape", (x,), out, lambda g: (g.reshape(old),))

    def concat(self, xs: Sequence[Any], axis: int = -1) -> Node:
        nodes = [self.lift(x) for x in xs]
        try:
            out = np.concatenate([n.value for n in nodes], axis=axis)
        except ValueError as exc:
            raise ShapeError(f"concat: {[n.shape for n in nodes]}") from exc
        bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]
        return self._push(
            "concat", nodes, out, lambda g: tuple(np.split(g, bounds, axis=axis))
        )

    def matmul(self, a: Any, b: Any) -> Node:
        a, b = self.lift(a), self.lift(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        va, vb = a.value, b.value
        return self._push("matmul", (a, b), va @ vb, lambda g: (g @ vb.T, va.T @ g))

    def embedding(self, table: Node, ids: Sequence[int] | np.ndarray) -> Node:
        idx = np.asarray(ids, dtype=np.int64)
        rows = table.shape[0]
        if idx.size and (idx.min() < 0 or idx.max() >= rows):
            raise ContractError(f"embedding id out of range [0, {rows})")
        tshape = table.shape

        def backward(g: np.ndarray):
            out = np.zeros(tshape, dtype=DTYPE)
            np.add.at(out, idx, g)
            return (out,)

        return self._push("embedding", (table,), table.value[idx], backward)

    # ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~ image ops ~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~~

    def conv2d(self, x: Node, w: Node, stride: int = 1, padding: int = 0) -> Node:
        """Cross-correlation of NCHW input with (O, C, kh, kw) filters."""
        xv, wv = x.value, w.value
        if xv.ndim != 4 or wv.ndim != 4 or xv.shape[1] != wv.shape[1]:
            raise ShapeError(f"conv2d: input {xv.shape} with filters {wv.shape}")
        kh, kw = wv.shape[2:]
        xp = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if xp.shape[2] < kh or xp.shape[3] < kw:
            raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input")
        cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
        cols = cols[:, :, ::stride, ::stride]
        out = np.einsum("nchwij,ocij->nohw", cols, wv, optimize=True)
        ho, wo = out.shape[2:]

        def backward(g: np.ndarray):
            dw = np.einsum("nchwij,nohw->ocij", cols, g, optimize=True)
            dcols = np.einsum("nohw,ocij->nchwij", g, wv, optimize=True)
            dxp = np.zeros(xp.shape, dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                        j:j + stride * (wo - 1) + 1:stride] += dcols[..., i, j]
            h, wdt = xv.shape[2:]
            return dxp[:, :, padding:padding + h, padding:padding + wdt], dw

        return self._push("conv2d", (x, w), out, backward)

    def upsample2d(self, x: Node, scale: int) -> Node:
        """Nearest-neighbour upsampling of an NCHW tensor."""
        v = x.value
        if v.ndim != 4:
            raise ShapeError(f"upsample2d expects NCHW, got {v.shape}")
        n, c, h, w = v.shape
        out = v.repeat(scale, axis=2).repeat(scale, axis=3)
        return self._push(
            "upsample2d", (x,), out,
            lambda g: (g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)),),
        )

    def batch_norm(
        self,
        x: Node,
        gamma: Node,
        beta: Node,
        running_mean: np.ndarray,
        running_var: np.ndarray,
        train: bool,
        eps: float = 1e-5,
    ) -> Node:
        """Per-channel normalization over (N, H, W) for 4-D or N for 2-D input.

        In train mode the batch statistics used are left in ``node.saved``
        (``mean``, ``var``) so the caller can fold them into its buffers.
        """
        v = x.value
        if v.ndim == 4:
            axes, bshape = (0, 2, 3), (1, -1, 1, 1)
        elif v.ndim == 2:
            axes, bshape = (0,), (1, -1)
        else:
            raise ShapeError(f"batch_norm expects 2-D or 4-D input, got {v.shape}")
        ga = gamma.value.reshape(bshape)
        be = beta.value.reshape(bshape)

        if not train:
            inv = 1.0 / np.sqrt(np.asarray(running_var).reshape(bshape) + eps)
            xhat = (v - np.asarray(running_mean).reshape(bshape)) * inv

            def backward_eval(g: np.ndarray):
                return (g * ga * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes))

            return self._push("batch_norm", (x, gamma, beta), ga * xhat + be, backward_eval)

        m = v.size // v.shape[1]
        if m < 2:
            raise ShapeError("batch_norm in train mode needs at least 2 values per channel")
        mu = v.mean(axis=axes, keepdims=True)
        var = v.var(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (v - mu) * inv

        def backward_train(g: np.ndarray):
            dxhat = g * ga
            dx = (inv / m) * (
                m * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
            )
            return (dx, (g * xhat).sum(axis=axes), g.sum(axis=axes))

        return self._push(
            "batch_norm", (x, gamma, beta), ga * xhat + be, backward_train,
            saved={"mean": mu.ravel(), "var": var.ravel(), "count": m},
        )

    def dropout(self, x: Node, p: float, rng: np.random.Generator | None, train: bool) -> Node:
        if not train or p == 0.0:
            return x
        if rng is None:
            raise ContractError("dropout in train mode needs an RNG stream")
        mask = (rng.random(x.shape) >= p) / (1.0 - p)
        return self._push("dropout", (x,), x.value * mask, lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# Evaluation and reverse mode
# ---------------------------------------------------------------------------

def _node_id(graph: Graph, node: Node | int) -> int:
    nid = node.id if isinstance(node, Node) else int(node)
    if not 0 <= nid < len(graph.nodes):
        raise ContractError(f"node {nid} does not exist")
    return nid


def evaluate(graph: Graph, node: Node | int) -> Tensor:
    """Forward value of ``node`` (a copy, so callers cannot edit the tape)."""
    return Tensor(graph.nodes[_node_id(graph, node)].value)


def gradients(graph: Graph, scalar_node: Node | int) -> dict[int, Tensor]:
    """dL/dleaf for every ``requires_grad`` leaf, zeros where L does not reach."""
    root = _node_id(graph, scalar_node)
    if graph.nodes[root].value.size != 1:
        raise ContractError(f"gradients need a scalar node, got shape {graph.nodes[root].value.shape}")

    pending: dict[int, np.ndarray] = {root: np.ones_like(graph.nodes[root].value)}
    out: dict[int, Tensor] = {}
    for i in range(root, -1, -1):
        rec = graph.nodes[i]
        g = pending.pop(i, None)
        if rec.op == "leaf":
            if rec.requires_grad:
                out[i] = Tensor(g if g is not None else np.zeros_like(rec.value))
            continue
        if g is None or rec.backward is None:
            continue
        for j, gj in zip(rec.inputs, rec.backward(g)):
            if gj is None or not graph.nodes[j].requires_grad:
                continue
            pending[j] = pending[j] + gj if j in pending else gj

    for i, rec in enumerate(graph.nodes):
        if rec.op == "leaf" and rec.requires_grad and i not in out:
            out[i] = Tensor(np.zeros_like(rec.value))
    return out


def named_gradients(graph: Graph, loss: Node, nodes: Mapping[str, Node]) -> dict[str, np.ndarray]:
    """``gradients`` keyed by parameter name, restricted to trainable leaves."""
    grads = gradients(graph, loss)
    return {name: grads[n.id].data for name, n in nodes.items() if n.id in grads}


# ---------------------------------------------------------------------------
# Parameter collections
# ---------------------------------------------------------------------------

@dataclass
class ParamBundle:
    """Ordered name → array parameters plus non-trainable buffers."""

    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def manifest(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(name, tuple(arr.shape)) for name, arr in self.params.items()]

    @property
    def size(self) -> int:
        return int(sum(arr.size for arr in self.params.values()))

    def copy(self):
        return replace(
            self,
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
        )

    def with_params(self, updates: Mapping[str, np.ndarray]):
        """New bundle with ``updates`` replacing same-named parameters."""
        merged = {k: np.array(updates.get(k, v), dtype=DTYPE) for k, v in self.params.items()}
        return replace(self, params=merged, buffers={k: v.copy() for k, v in self.buffers.items()})

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    def bind(self, graph: Graph, trainable: bool | tuple[str, ...] = True) -> dict[str, Node]:
        """Put every parameter on ``graph`` as a leaf.

        ``trainable`` is either a flag for all parameters or a tuple of name
        prefixes whose leaves require gradients.
        """
        def wants_grad(name: str) -> bool:
            if isinstance(trainable, bool):
                return trainable
            return name.startswith(trainable)

        return {name: graph.leaf(arr, requires_grad=wants_grad(name)) for name, arr in self.params.items()}

    def equals(self, other: "ParamBundle") -> bool:
        """Bitwise equality of names, shapes and values."""
        def same(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
            return list(a) == list(b) and all(
                a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
            )

        return same(self.params, other.params) and same(self.buffers, other.buffers)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

OPTIMIZER_KINDS = ("sgd", "adam", "adadelta")


@dataclass
class OptimizerState:
    kind: str
    lr: float
    betas: tuple[float, float] = (0.9, 0.999)
    rho: float = 0.9
    eps: float = 1e-8
    step: int = 0
    moments: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)


def make_optimizer(kind: str, lr: float, **hyper: Any) -> OptimizerState:
    if kind not in OPTIMIZER_KINDS:
        raise ContractError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZER_KINDS}")
    if kind == "adadelta":
        hyper.setdefault("eps", 1e-6)
    return OptimizerState(kind=kind, lr=float(lr), **hyper)


def _slot(state: OptimizerState, slot: str, name: str, like: np.ndarray) -> np.ndarray:
    acc = state.moments.get(slot, {}).get(name)
    if acc is None:
        return np.zeros_like(like)
    if acc.shape != like.shape:
        raise ShapeError(f"optimizer slot {slot}[{name}] has shape {acc.shape}, parameter {like.shape}")
    return acc


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One textbook update; returns new parameters and a new state."""
    if list(params) != list(grads):
        raise ShapeError(f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step refused")

    new = OptimizerState(
        kind=state.kind, lr=state.lr, betas=state.betas, rho=state.rho,
        eps=state.eps, step=state.step + 1, moments={},
    )
    t = new.step
    updated: dict[str, np.ndarray] = {}
    for name, theta in params.items():
        g = np.asarray(grads[name], dtype=DTYPE)
        if state.kind == "sgd":
            updated[name] = theta - state.lr * g
        elif state.kind == "adam":
            b1, b2 = state.betas
            m = b1 * _slot(state, "m", name, theta) + (1.0 - b1) * g
            v = b2 * _slot(state, "v", name, theta) + (1.0 - b2) * g * g
            new.moments.setdefault("m", {})[name] = m
            new.moments.setdefault("v", {})[name] = v
            m_hat = m / (1.0 - b1 ** t)
            v_hat = v / (1.0 - b2 ** t)
            updated[name] = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        else:  # adadelta
            rho = state.rho
            sq = rho * _slot(state, "square_avg", name, theta) + (1.0 - rho) * g * g
            acc = _slot(state, "acc_delta", name, theta)
            delta = np.sqrt(acc + state.eps) / np.sqrt(sq + state.eps) * g
            new.moments.setdefault("square_avg", {})[name] = sq
            new.moments.setdefault("acc_delta", {})[name] = rho * acc + (1.0 - rho) * delta * delta
            updated[name] = theta - state.lr * delta
    # carry slots of parameters not touched this step
    for slot, table in state.moments.items():
        for name, acc in table.items():
            new.moments.setdefault(slot, {}).setdefault(name, acc)
    return updated, new


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def rng_stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent Philox stream addressed by ``(seed, *path)``.

    Streams are derived, never advanced from a shared parent, so a resumed
    run draws exactly the numbers a fresh run would.
    """
    key = tuple(p if isinstance(p, int) else zlib.crc32(p.encode("utf-8")) for p in path)
    if any(k < 0 for k in key):
        raise ContractError(f"rng path entries must be non-negative: {path}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))
