"""Minimal reverse-mode automatic differentiation on top of numpy.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure that pushes the output gradient back into them. :func:`backward`
topologically orders the recorded nodes (a :class:`Graph`) and sweeps them
in reverse, accumulating into ``.grad`` buffers.

All values are float64 and there is no batch dimension.
"""
from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class EmptyInputError(ValueError):
    """A reduction was asked to operate on zero elements."""


class ContractError(ValueError):
    """A precondition of the differentiation engine was violated."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "op", "node_id", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op
        self.node_id = next(_node_ids)
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar; broadcasting here is numpy's (trailing-aligned)
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(values) -> Tensor:
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, parents=tuple(parents) if needs else (), op=op)
    if needs:
        out._backward = backward_fn
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (numpy trailing-aligned broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# graph + backward


class Graph:
    """Topologically ordered view of the nodes that feed ``output``.

    Built by iterative depth-first search over ``parents``; order is a pure
    function of graph structure, so sweeps are deterministic.
    """

    def __init__(self, output: Tensor):
        self.output = output
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if node.node_id in seen:
                continue
            seen.add(node.node_id)
            stack.append((node, True))
            for parent in reversed(node.parents):
                if parent.node_id not in seen:
                    stack.append((parent, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if not n.parents and n.requires_grad]


def backward(loss: Tensor) -> Graph:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph(loss)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node._backward is None:
            _accumulate(node, g)
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    return graph


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# ops named by the network


def pointwise_conv(x: Tensor, weight: Tensor, bias: Tensor, exact: bool = False) -> Tensor:
    """Kernel-size-1 convolution: ``out[c, n] = bias[c] + sum_k W[c, k] x[k, n]``.

    With ``exact=True`` each column is reduced in the same fixed order, so
    permuting the points permutes the output bit for bit. BLAS gives no
    such guarantee (edge columns may take a different kernel), and the
    explicit product costs ``C_out x C_in x N`` memory, so it is opt-in.
    """
    if x.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(
            f"pointwise_conv expects input [C_in x N], weights [C_out x C_in], bias [C_out]; "
            f"got {x.shape}, {weight.shape}, {bias.shape}"
        )
    if weight.shape[1] != x.shape[0] or bias.shape[0] != weight.shape[0]:
        raise DimensionError(
            f"pointwise_conv channel mismatch: input {x.shape}, weights {weight.shape}, bias {bias.shape}"
        )
    xd, wd = x.data, weight.data
    if exact:
        prod = np.ascontiguousarray(wd)[:, :, None] * np.ascontiguousarray(xd)[None, :, :]
        out = np.ascontiguousarray(prod).sum(axis=1) + bias.data[:, None]
    else:
        out = wd @ xd + bias.data[:, None]

    def back(g):
        return (wd.T @ g, g @ xd.T, g.sum(axis=1))

    return _make(out, (x, weight, bias), "pointwise_conv", back)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Fully connected layer on a vector ``[C_in]`` -> ``[C_out]``."""
    if x.ndim != 1:
        raise DimensionError(f"dense expects a vector, got {x.shape}")
    return reshape(pointwise_conv(reshape(x, (x.shape[0], 1)), weight, bias), (weight.shape[0],))


def global_avg_pool(x: Tensor) -> Tensor:
    """Channel-wise mean over points, summed in sorted order so point order cannot change the bits."""
    if x.ndim != 2:
        raise DimensionError(f"global_avg_pool expects [C x N], got {x.shape}")
    n = x.shape[1]
    if n == 0:
        raise EmptyInputError("global_avg_pool over zero points")
    # contiguity matters too: numpy picks the reduction order from the memory layout
    out = np.ascontiguousarray(np.sort(x.data, axis=1)).sum(axis=1) / n

    def back(g):
        return (np.repeat(g[:, None] / n, n, axis=1),)

    return _make(out, (x,), "global_avg_pool", back)


def global_max_pool(x: Tensor) -> Tensor:
    """Channel-wise max over points; ties route gradient to the lowest index."""
    if x.ndim != 2:
        raise DimensionError(f"global_max_pool expects [C x N], got {x.shape}")
    if x.shape[1] == 0:
        raise EmptyInputError("global_max_pool over zero points")
    idx = np.argmax(x.data, axis=1)
    rows = np.arange(x.shape[0])
    out = x.data[rows, idx]

    def back(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return _make(out, (x,), "global_max_pool", back)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _make(s, (x,), "sigmoid", lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), "relu", lambda g: (g * mask,))


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ValueError(f"unknown activation {kind!r}")


def _align_left(a_shape: tuple[int, ...], b_shape: tuple[int, ...]) -> tuple[int, ...]:
    if len(b_shape) > len(a_shape):
        raise DimensionError(f"cannot broadcast {b_shape} onto {a_shape}")
    padded = tuple(b_shape) + (1,) * (len(a_shape) - len(b_shape))
    for da, db in zip(a_shape, padded):
        if db != 1 and db != da:
            raise DimensionError(f"cannot broadcast {b_shape} onto {a_shape}")
    return padded


def elementwise(a: Tensor, b: Tensor, kind: str, broadcast: bool = False) -> Tensor:
    """Element-wise add/mul of ``b`` onto ``a``.

    With ``broadcast=True`` ``b``'s dims are aligned from the left, so a
    ``[C]`` vector added to a ``[C x N]`` map lands on every column.
    """
    if kind not in ("add", "mul"):
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if not broadcast and a.shape != b.shape:
        raise DimensionError(f"elementwise {kind} shape mismatch: {a.shape} vs {b.shape}")
    if a.shape != b.shape:
        b = reshape(b, _align_left(a.shape, b.shape))
    return add(a, b) if kind == "add" else mul(a, b)


# ---------------------------------------------------------------------------
# generic arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _make(out, (a, b), "add", lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _make(out, (a, b), "sub", lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        return (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape))

    return _make(ad * bd, (a, b), "mul", back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def back(g):
        return (_unbroadcast(g / bd, a.shape), _unbroadcast(-g * ad / (bd * bd), b.shape))

    return _make(out, (a, b), "div", back)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _make(e, (a,), "exp", lambda g: (g * e,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), "log", lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    s = np.sqrt(a.data)
    return _make(s, (a,), "sqrt", lambda g: (g * 0.5 / s,))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), "square", lambda g: (2.0 * g * ad,))


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """``max(a, floor)``; gradient passes only where ``a >= floor``."""
    mask = a.data >= floor
    return _make(np.where(mask, a.data, floor), (a,), "clamp_min", lambda g: (g * mask,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """numpy ``matmul`` semantics, including batch broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return (_unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape))

    return _make(ad @ bd, (a, b), "matmul", back)


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if a.data.size == 0:
        raise EmptyInputError("mean over zero elements")
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def tmin(a: Tensor, axis: int) -> Tensor:
    """Minimum along ``axis``; the first minimizing index receives the gradient."""
    idx = np.argmin(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return _make(out, (a,), "min", back)


def norm(a: Tensor, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``; subgradient 0 where the norm vanishes."""
    n = np.sqrt((a.data * a.data).sum(axis=axis))

    def back(g):
        safe = np.where(n > 0, n, 1.0)
        scale = np.where(n > 0, g / safe, 0.0)
        return (a.data * np.expand_dims(scale, axis),)

    return _make(n, (a,), "norm", back)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), "transpose", lambda g: (np.transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def back(g):
        ga = np.zeros(shape)
        np.add.at(ga, index, g)
        return (ga,)

    return _make(a.data[index], (a,), "getitem", back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(out, tensors, "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def repeat_columns(v: Tensor, n: int) -> Tensor:
    """Tile a ``[C]`` vector into a ``[C x n]`` map."""
    return _make(np.repeat(v.data[:, None], n, axis=1), (v,), "repeat_columns", lambda g: (g.sum(axis=1),))


def log_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max()
    lse = np.log(np.exp(shifted).sum())
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,), "log_softmax", lambda g: (g - soft * g.sum(),))


def softmax(a: Tensor) -> Tensor:
    return exp(log_softmax(a))


# ---------------------------------------------------------------------------
# rotation-specific fused ops


def normalize_quaternions(q: Tensor, eps: float = 1e-12) -> Tensor:
    """Row-normalize ``[N x 4]`` raw quaternions to unit length."""
    from .geometry import DegenerateRotationError

    n = np.sqrt((q.data * q.data).sum(axis=-1, keepdims=True))
    if np.any(n < eps):
        raise DegenerateRotationError(f"raw quaternion norm below {eps}: min {float(n.min()):.3e}")
    u = q.data / n

    def back(g):
        return ((g - u * (g * u).sum(axis=-1, keepdims=True)) / n,)

    return _make(u, (q,), "normalize_quaternions", back)


def quat_to_rotmat(q: Tensor) -> Tensor:
    """``[..., 4]`` unit quaternions (w, x, y, z) -> ``[..., 3, 3]`` rotation matrices.

    Uses the homogeneous-free form, so the result is orthonormal only for
    unit input; callers normalize first.
    """
    qd = q.data
    w, x, y, z = qd[..., 0], qd[..., 1], qd[..., 2], qd[..., 3]
    r = np.empty(qd.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - w * z)
    r[..., 0, 2] = 2 * (x * z + w * y)
    r[..., 1, 0] = 2 * (x * y + w * z)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - w * x)
    r[..., 2, 0] = 2 * (x * z - w * y)
    r[..., 2, 1] = 2 * (y * z + w * x)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)

    def back(g):
        g00, g01, g02 = g[..., 0, 0], g[..., 0, 1], g[..., 0, 2]
        g10, g11, g12 = g[..., 1, 0], g[..., 1, 1], g[..., 1, 2]
        g20, g21, g22 = g[..., 2, 0], g[..., 2, 1], g[..., 2, 2]
        gq = np.empty_like(qd)
        gq[..., 0] = 2 * (-z * g01 + y * g02 + z * g10 - x * g12 - y * g20 + x * g21)
        gq[..., 1] = 2 * (y * g01 + z * g02 + y * g10 - 2 * x * g11 - w * g12 + z * g20 + w * g21 - 2 * x * g22)
        gq[..., 2] = 2 * (-2 * y * g00 + x * g01 + w * g02 + x * g10 + z * g12 - w * g20 + z * g21 - 2 * y * g22)
        gq[..., 3] = 2 * (-2 * z * g00 - w * g01 + x * g02 + w * g10 - 2 * z * g11 + y * g12 + x * g20 + y * g21)
        return (gq,)

    return _make(r, (q,), "quat_to_rotmat", back)


def nearest_distance(points: Tensor, query: np.ndarray) -> Tensor:
    """For each batch ``i`` and query row ``j``: ``min_k ||query[j] - points[i, k]||``.

    ``points`` is ``[N x K x 3]``, ``query`` a constant ``[M x 3]``; returns
    ``[N x M]``. Only the winning ``k`` receives gradient.
    """
    p = points.data
    q = np.asarray(query, dtype=np.float64)
    d2 = (q * q).sum(-1)[None, :, None] - 2.0 * (q[None] @ np.swapaxes(p, -1, -2)) + (p * p).sum(-1)[:, None, :]
    k = np.argmin(d2, axis=2)  # [N, M]
    rows = np.arange(p.shape[0])[:, None]
    diff = p[rows, k] - q[None]  # [N, M, 3]
    dist = np.sqrt((diff * diff).sum(-1))

    def back(g):
        scale = np.where(dist > 0, g / np.where(dist > 0, dist, 1.0), 0.0)
        gp = np.zeros_like(p)
        np.add.at(gp, (np.broadcast_to(rows, k.shape), k), diff * scale[..., None])
        return (gp,)

    return _make(dist, (points,), "nearest_distance", back)
