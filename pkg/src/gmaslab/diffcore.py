"""Tape-based reverse-mode automatic differentiation over float64 arrays.

Every op appends a record to the active :class:`Graph`.  Adjoints are written
with the same recorded ops, so a backward pass run with ``create_graph=True``
appends the gradient computation to the tape and its result can be
differentiated again (double backpropagation).

Usage::

    w = Tensor(np.ones(3), requires_grad=True)
    with Graph():
        y = sum_(tanh(w) * w)
        (dw,) = gradient(y, [w])
"""

from __future__ import annotations

import struct
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor", "Graph", "ShapeError", "DifferentiationError", "DivergenceError",
    "add", "sub", "mul", "div", "neg", "scale", "matmul", "affine", "tanh",
    "sum_", "mean", "abs_", "square", "l2norm", "linf_norm", "max_with_scalar",
    "exp", "dot", "concat", "reshape", "transpose", "broadcast_to", "sum_to",
    "slice_axis", "no_record", "forward_op", "apply_op", "gradient", "gradient_as_graph",
    "jacobian", "batch_jacobian", "Adam", "save_checkpoint", "load_checkpoint",
]


class ShapeError(ValueError):
    """Operand shapes do not conform to an op's rules."""


class DifferentiationError(RuntimeError):
    """A requested derivative cannot be formed."""


class DivergenceError(FloatingPointError):
    """A non-finite value reached the optimizer."""


class Tensor:
    """A float64 array, optionally linked to a node of the active graph."""

    __slots__ = ("data", "graph", "node", "requires_grad", "name", "__weakref__")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.graph: Graph | None = None
        self.node: int | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def __repr__(self) -> str:
        tag = f", node={self.node}" if self.node is not None else ""
        return f"Tensor({np.array2string(self.data, precision=4)}{tag})"

    def __len__(self) -> int:
        return len(self.data)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass(eq=False)
class _Node:
    kind: str
    inputs: tuple[Tensor, ...]
    input_ids: tuple[int | None, ...]
    vjp: Callable | None
    out: Tensor | None
    second_order: bool = True


_ACTIVE: list["Graph"] = []


@dataclass(eq=False)
class Graph:
    """Append-only tape of op records.

    Node ids are list positions, so inputs always precede their consumers.
    Leaf tensors (``requires_grad=True``) get a node the first time an op on
    this graph consumes them.
    """

    nodes: list[_Node] = field(default_factory=list)
    backward_nodes: int = 0
    _leaf_ids: dict[int, int] = field(default_factory=dict, repr=False)
    _paused: int = field(default=0, repr=False)
    _in_backward: bool = field(default=False, repr=False)

    def __enter__(self) -> Graph:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def leaves(self) -> list[Tensor]:
        return [self.nodes[i].out for i in self._leaf_ids.values()]

    def node_id(self, t: Tensor) -> int | None:
        if t.graph is self:
            return t.node
        if t.requires_grad:
            return self._leaf_ids.get(id(t))
        return None

    def _resolve(self, t: Tensor) -> int | None:
        if t.graph is self:
            return t.node
        if not t.requires_grad:
            return None
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), (), None, t))
            self._leaf_ids[id(t)] = nid
        return nid

    def count(self, kind: str | None = None) -> int:
        return sum(1 for n in self.nodes if kind is None or n.kind == kind)


def active_graph() -> Graph | None:
    return _ACTIVE[-1] if _ACTIVE else None


@contextmanager
def no_record():
    """Evaluate ops as constants even while a graph is active."""
    g = active_graph()
    if g is not None:
        g._paused += 1
    try:
        yield
    finally:
        if g is not None:
            g._paused -= 1


def apply_op(kind: str, inputs: Sequence[Tensor], data: np.ndarray,
             vjp: Callable, second_order: bool = True) -> Tensor:
    """Wrap ``data`` as the output of ``kind`` and record it if a graph is live.

    ``vjp(g, *inputs, out)`` returns one adjoint (or None) per input and must
    be built from recorded ops when ``second_order`` is True.
    """
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.graph = None
    out.node = None
    out.requires_grad = False
    out.name = None
    g = active_graph()
    if g is None or g._paused:
        return out
    ids = tuple(g._resolve(t) for t in inputs)
    if all(i is None for i in ids):
        return out
    out.graph = g
    out.node = len(g.nodes)
    g.nodes.append(_Node(kind, tuple(inputs), ids, vjp, out, second_order))
    if g._in_backward:
        g.backward_nodes += 1
    return out


def _shape_error(kind: str, *tensors: Tensor, why: str = "") -> ShapeError:
    shapes = ", ".join(str(t.shape) for t in tensors)
    return ShapeError(f"{kind}: incompatible shapes {shapes}" + (f" ({why})" if why else ""))


def _broadcast_shape(kind: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(kind, a, b) from None


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    return g if g.shape == shape else sum_to(g, shape)


# -- shape plumbing ---------------------------------------------------------

def broadcast_to(x, shape) -> Tensor:
    x = _t(x)
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {shape}") from None
    return apply_op("broadcast_to", (x,), data, lambda g, x, out: (sum_to(g, x.shape),))


def sum_to(x, shape) -> Tensor:
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    x = _t(x)
    shape = tuple(shape)
    lead = x.ndim - len(shape)
    if lead < 0:
        raise ShapeError(f"sum_to: cannot reduce {x.shape} to {shape}")
    axes = tuple(range(lead)) + tuple(
        lead + i for i, n in enumerate(shape) if n == 1 and x.shape[lead + i] != 1)
    data = x.data.sum(axis=axes, keepdims=True) if axes else x.data
    data = data.reshape(shape)
    return apply_op("sum_to", (x,), data, lambda g, x, out: (broadcast_to(g, x.shape),))


def reshape(x, shape) -> Tensor:
    x = _t(x)
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from None
    return apply_op("reshape", (x,), data, lambda g, x, out: (reshape(g, x.shape),))


def transpose(x) -> Tensor:
    x = _t(x)
    if x.ndim != 2:
        raise _shape_error("transpose", x, why="needs a matrix")
    return apply_op("transpose", (x,), x.data.T.copy(), lambda g, x, out: (transpose(g),))


def slice_axis(x, start: int, stop: int, axis: int = -1) -> Tensor:
    x = _t(x)
    axis = axis % x.ndim
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    data = x.data[tuple(index)].copy()

    def vjp(g, x, out):
        before = list(x.shape)
        before[axis] = start
        after = list(x.shape)
        after[axis] = x.shape[axis] - stop
        parts = [Tensor(np.zeros(before)), g, Tensor(np.zeros(after))]
        return (concat([p for p in parts if p.shape[axis] > 0], axis=axis),)

    return apply_op("slice", (x,), data, vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = tuple(_t(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no inputs")
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise _shape_error("concat", *ts) from None
    ax = axis % data.ndim
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def vjp(g, *args):
        return tuple(slice_axis(g, int(bounds[i]), int(bounds[i + 1]), ax)
                     for i in range(len(ts)))

    return apply_op("concat", ts, data, vjp)


# -- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("add", a, b)
    return apply_op("add", (a, b), a.data + b.data,
                    lambda g, a, b, out: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("sub", a, b)
    return apply_op("sub", (a, b), a.data - b.data,
                    lambda g, a, b, out: (_unbroadcast(g, a.shape),
                                          _unbroadcast(scale(g, -1.0), b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("mul", a, b)
    return apply_op("mul", (a, b), a.data * b.data,
                    lambda g, a, b, out: (_unbroadcast(mul(g, b), a.shape),
                                          _unbroadcast(mul(g, a), b.shape)))


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _broadcast_shape("div", a, b)

    def vjp(g, a, b, out):
        ga = div(g, b)
        return _unbroadcast(ga, a.shape), _unbroadcast(scale(mul(ga, out), -1.0), b.shape)

    return apply_op("div", (a, b), a.data / b.data, vjp)


def scale(x, c: float) -> Tensor:
    x = _t(x)
    c = float(c)
    return apply_op("scale", (x,), x.data * c, lambda g, x, out: (scale(g, c),))


def neg(x) -> Tensor:
    return scale(x, -1.0)


def square(x) -> Tensor:
    x = _t(x)
    return apply_op("square", (x,), x.data * x.data,
                    lambda g, x, out: (mul(g, scale(x, 2.0)),))


def exp(x) -> Tensor:
    x = _t(x)
    return apply_op("exp", (x,), np.exp(x.data), lambda g, x, out: (mul(g, out),))


def tanh(x) -> Tensor:
    x = _t(x)
    return apply_op("tanh", (x,), np.tanh(x.data),
                    lambda g, x, out: (mul(g, sub(1.0, square(out))),))


def abs_(x) -> Tensor:
    """Elementwise |x|; the adjoint uses subgradient 0 at the kink."""
    x = _t(x)
    return apply_op("abs", (x,), np.abs(x.data),
                    lambda g, x, out: (mul(g, Tensor(np.sign(x.data))),))


def max_with_scalar(x, c: float = 0.0) -> Tensor:
    """Elementwise max(x, c); the adjoint is 0 where x == c."""
    x = _t(x)
    c = float(c)
    return apply_op("max_with_scalar", (x,), np.maximum(x.data, c),
                    lambda g, x, out: (mul(g, Tensor((x.data > c).astype(np.float64))),))


# -- reductions -------------------------------------------------------------

def _keep(g: Tensor, shape: tuple[int, ...], axis, keepdims: bool) -> Tensor:
    """Reshape a reduced adjoint so it broadcasts back over ``shape``."""
    if keepdims:
        return g
    if axis is None:
        return reshape(g, (1,) * len(shape))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return reshape(g, kept)


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)
    return apply_op("sum", (x,), data,
                    lambda g, x, out: (broadcast_to(_keep(g, x.shape, axis, keepdims), x.shape),))


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _t(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def dot(u, v, axis: int = -1) -> Tensor:
    """Inner product along ``axis`` (row-wise for batched inputs)."""
    u, v = _t(u), _t(v)
    if u.shape != v.shape:
        raise _shape_error("dot", u, v)
    data = np.asarray((u.data * v.data).sum(axis=axis), dtype=np.float64)

    def vjp(g, u, v, out):
        ge = _keep(g, u.shape, axis, False)
        return mul(ge, v), mul(ge, u)

    return apply_op("dot", (u, v), data, vjp)


def l2norm(x, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the adjoint at the origin is taken as 0."""
    x = _t(x)
    data = np.sqrt(np.asarray((x.data * x.data).sum(axis=axis, keepdims=keepdims)))

    def vjp(g, x, out):
        ge = _keep(g, x.shape, axis, keepdims)
        oe = _keep(out, x.shape, axis, keepdims)
        safe = add(oe, Tensor((oe.data == 0.0).astype(np.float64)))
        return (mul(ge, div(x, safe)),)

    return apply_op("l2norm", (x,), np.asarray(data, dtype=np.float64), vjp)


def linf_norm(x, axis=None, keepdims: bool = False) -> Tensor:
    """max |x_i|; ties send the adjoint to the first maximiser."""
    x = _t(x)
    ax = np.abs(x.data)
    data = np.asarray(ax.max(axis=axis, keepdims=keepdims), dtype=np.float64)

    def vjp(g, x, out):
        if axis is None:
            mask = np.zeros(x.size)
            mask[np.argmax(ax)] = 1.0
            mask = mask.reshape(x.shape)
        else:
            idx = np.expand_dims(np.argmax(ax, axis=axis), axis)
            mask = np.zeros(x.shape)
            np.put_along_axis(mask, idx, 1.0, axis=axis)
        ge = _keep(g, x.shape, axis, keepdims)
        return (mul(ge, Tensor(mask * np.sign(x.data))),)

    return apply_op("linf_norm", (x,), data, vjp)


# -- linear algebra ---------------------------------------------------------

def _outer(a: Tensor, b: Tensor) -> Tensor:
    return matmul(reshape(a, (a.shape[0], 1)), reshape(b, (1, b.shape[0])))


def matmul(a, b) -> Tensor:
    """Matrix product for [m,k]@[k,n] or [k]@[k,n]."""
    a, b = _t(a), _t(b)
    if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise _shape_error("matmul", a, b)

    def vjp(g, a, b, out):
        ga = matmul(g, transpose(b))
        gb = _outer(a, g) if a.ndim == 1 else matmul(transpose(a), g)
        return ga, gb

    return apply_op("matmul", (a, b), a.data @ b.data, vjp)


def affine(x, w, b) -> Tensor:
    """x @ w + b for x of shape [k] or [batch, k]."""
    x, w, b = _t(x), _t(w), _t(b)
    if (w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[0]
            or b.shape != (w.shape[1],)):
        raise _shape_error("affine", x, w, b)

    def vjp(g, x, w, b, out):
        gx = matmul(g, transpose(w))
        gw = _outer(x, g) if x.ndim == 1 else matmul(transpose(x), g)
        return gx, gw, _unbroadcast(g, b.shape)

    return apply_op("affine", (x, w, b), x.data @ w.data + b.data, vjp)


_FORWARD = {
    "add": add, "sub": sub, "mul": mul, "matmul": matmul, "affine": affine,
    "tanh": tanh, "sum": sum_, "mean": mean, "abs": abs_, "square": square,
    "l2norm": l2norm, "linf_norm": linf_norm, "max_with_scalar": max_with_scalar,
    "exp": exp, "dot": dot, "scale": scale, "div": div,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Dispatch by op name; ``concat`` takes its tensors as one sequence."""
    if kind == "concat":
        return concat(inputs[0] if len(inputs) == 1 else inputs, **kwargs)
    try:
        fn = _FORWARD[kind]
    except KeyError:
        raise ValueError(f"unknown op {kind!r}") from None
    return fn(*inputs, **kwargs)


# -- differentiation --------------------------------------------------------

def _backward(output: Tensor, wrt: Sequence[Tensor], create_graph: bool) -> list[Tensor]:
    if output.size != 1:
        raise ShapeError(f"gradient: output must be scalar, got shape {output.shape}")
    g = output.graph
    if g is None:
        return [Tensor(np.zeros(t.shape)) for t in wrt]
    targets = [g.node_id(t) for t in wrt]
    keep = {i for i in targets if i is not None}
    if not keep:
        return [Tensor(np.zeros(t.shape)) for t in wrt]
    # only nodes downstream of some wrt node can carry a useful adjoint
    live = set(keep)
    for nid in range(min(keep) + 1, output.node + 1):
        if any(i in live for i in g.nodes[nid].input_ids):
            live.add(nid)
    if output.node not in live:
        return [Tensor(np.zeros(t.shape)) for t in wrt]
    adj: dict[int, Tensor] = {output.node: Tensor(np.ones(output.shape))}
    results: dict[int, Tensor] = {}

    pushed = create_graph and active_graph() is not g
    if pushed:
        _ACTIVE.append(g)
    if not create_graph:
        g._paused += 1
    g._in_backward = create_graph
    try:
        for nid in range(output.node, -1, -1):
            gout = adj.pop(nid, None)
            if gout is None:
                continue
            if nid in keep:
                results[nid] = gout
            node = g.nodes[nid]
            if node.vjp is None:
                continue
            if create_graph and not node.second_order:
                raise DifferentiationError(
                    f"op {node.kind!r} has no second-order adjoint")
            grads = node.vjp(gout, *node.inputs, node.out)
            for iid, gi in zip(node.input_ids, grads):
                if iid is None or gi is None or iid not in live:
                    continue
                prev = adj.get(iid)
                adj[iid] = gi if prev is None else add(prev, gi)
    finally:
        g._in_backward = False
        if not create_graph:
            g._paused -= 1
        if pushed:
            _ACTIVE.pop()

    out = []
    for t, nid in zip(wrt, targets):
        r = results.get(nid) if nid is not None else None
        out.append(r if r is not None else Tensor(np.zeros(t.shape)))
    return out


def gradient(output: Tensor, wrt: Tensor | Sequence[Tensor]):
    """Reverse-mode gradient of a scalar; unreachable inputs get zeros.

    Returns a list matching ``wrt`` (or a single tensor if one was given).
    The results are constants, detached from the graph.
    """
    if isinstance(wrt, Tensor):
        return gradient(output, [wrt])[0]
    return [Tensor(r.data) for r in _backward(output, list(wrt), create_graph=False)]


def gradient_as_graph(output: Tensor, wrt: Tensor | Sequence[Tensor]):
    """Like :func:`gradient`, but the result stays on the tape.

    Anything computed from the returned tensors can be differentiated again,
    including with respect to parameters that ``output`` depends on.
    """
    if isinstance(wrt, Tensor):
        return gradient_as_graph(output, [wrt])[0]
    return _backward(output, list(wrt), create_graph=True)


def jacobian(output: Tensor, wrt: Tensor) -> Tensor:
    """Jacobian of a vector output, one reverse pass per row."""
    if output.ndim != 1:
        raise ShapeError(f"jacobian: output must be a vector, got shape {output.shape}")
    rows = []
    for i in range(output.shape[0]):
        e = np.zeros(output.shape)
        e[i] = 1.0
        rows.append(gradient(dot(output, Tensor(e)), wrt).data)
    return Tensor(np.stack(rows))


def batch_jacobian(output: Tensor, wrt: Tensor) -> Tensor:
    """Per-row Jacobians of a [batch, m] output w.r.t. a [batch, n] input.

    Rows of the batch must be computed independently of one another; the
    result has shape [batch, m, n].
    """
    if output.ndim != 2 or wrt.ndim != 2 or output.shape[0] != wrt.shape[0]:
        raise _shape_error("batch_jacobian", output, wrt)
    cols = []
    for i in range(output.shape[1]):
        e = np.zeros(output.shape)
        e[:, i] = 1.0
        cols.append(gradient(sum_(mul(output, Tensor(e))), wrt).data)
    return Tensor(np.stack(cols, axis=1))


# -- optimisation -----------------------------------------------------------

class Adam:
    """Adam over a fixed list of leaf tensors, updated in place."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[Tensor | np.ndarray] | Mapping[Tensor, Tensor]) -> None:
        if isinstance(grads, Mapping):
            grads = [grads[p] for p in self.params]
        gs = [g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in grads]
        if len(gs) != len(self.params):
            raise ValueError("one gradient per parameter required")
        for p, g in zip(self.params, gs):
            if not np.all(np.isfinite(g)):
                raise DivergenceError(f"non-finite gradient for {p.name or 'parameter'}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, gs)):
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


# -- checkpoints ------------------------------------------------------------

CKPT_MAGIC = b"GMASCKPT"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, params: Mapping[str, Tensor | np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        for name, value in params.items():
            arr = np.asarray(value.data if isinstance(value, Tensor) else value,
                             dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a GMASCKPT file")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    while pos < len(buf):
        (n,) = struct.unpack_from("<I", buf, pos)
        name = buf[pos + 4:pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (rank,) = struct.unpack_from("<I", buf, pos)
        dims = struct.unpack_from(f"<{rank}I", buf, pos + 4)
        pos += 4 + 4 * rank
        count = int(np.prod(dims)) if rank else 1
        out[name] = np.reshape(np.frombuffer(buf, dtype="<f8", count=count, offset=pos), dims).copy()
        pos += 8 * count
    return out


def params_equal(a: Iterable[Tensor], b: Iterable[Tensor]) -> bool:
    return all(np.array_equal(x.data, y.data) for x, y in zip(a, b))
