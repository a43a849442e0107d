"""Minimal reverse-mode gradient engine over dense float64 matrices.

Supplies exactly the operations the two scoring models need (matmul,
row-softmax, row layer-norm, dropout, relu, sigmoid, slicing/concatenation
of rows, bias/gain broadcasting and scalar reductions). Every operation's
gradient is validated against central finite differences in the test suite.

Values are float64 throughout, independent of the float32 storage format,
so finite-difference checks stay well conditioned.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Structurally incompatible operands."""


class Node:
    """One value in the computation graph.

    `parents` and `vjps` are aligned: vjps[k](upstream_grad) returns the
    gradient contribution for parents[k]. Gradients are accumulated (never
    overwritten), so diamond-shaped graphs are handled correctly.
    """

    __slots__ = ("value", "grad", "op", "parents", "vjps", "requires_grad", "name")

    def __init__(self, value, op="leaf", parents=(), vjps=(), requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.op = op
        self.parents = tuple(parents)
        self.vjps = tuple(vjps)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.name = name

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape}, name={self.name!r})"


def param(value: np.ndarray, name: str) -> Node:
    """A named leaf parameter; backward() reports its gradient under `name`."""
    return Node(value, op="param", requires_grad=True, name=name)


def constant(value: np.ndarray) -> Node:
    """A leaf that does not require gradients (e.g. input features)."""
    return Node(value, op="const")


def _check_2d(x: Node, op: str) -> None:
    if x.value.ndim != 2:
        raise ShapeError(f"{op}: expected a matrix, got shape {x.value.shape}")


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.value.shape} x {b.value.shape}")
    return Node(
        a.value @ b.value,
        op="matmul",
        parents=(a, b),
        vjps=(lambda g: g @ b.value.T, lambda g: a.value.T @ g),
    )


def matmul_nt(a: Node, b: Node) -> Node:
    """a @ b.T without materializing a transpose node."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[1]:
        raise ShapeError(f"matmul_nt: incompatible shapes {a.value.shape} x {b.value.shape}^T")
    return Node(
        a.value @ b.value.T,
        op="matmul_nt",
        parents=(a, b),
        vjps=(lambda g: g @ b.value, lambda g: g.T @ a.value),
    )


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: shape mismatch {a.value.shape} vs {b.value.shape}")
    # the second vjp copies: backward() takes ownership of returned arrays,
    # and the same upstream gradient may not be donated twice
    return Node(a.value + b.value, op="add", parents=(a, b), vjps=(lambda g: g, lambda g: g.copy()))


def add_bias(a: Node, b: Node) -> Node:
    """Add a length-N bias vector to every row of an (M, N) matrix."""
    _check_2d(a, "add_bias")
    if b.value.shape != (a.value.shape[1],):
        raise ShapeError(f"add_bias: bias shape {b.value.shape} vs matrix {a.value.shape}")
    return Node(
        a.value + b.value[None, :],
        op="add_bias",
        parents=(a, b),
        vjps=(lambda g: g, lambda g: g.sum(axis=0)),
    )


def mul_gain(a: Node, w: Node) -> Node:
    """Multiply every row of an (M, N) matrix by a length-N gain vector."""
    _check_2d(a, "mul_gain")
    if w.value.shape != (a.value.shape[1],):
        raise ShapeError(f"mul_gain: gain shape {w.value.shape} vs matrix {a.value.shape}")
    return Node(
        a.value * w.value[None, :],
        op="mul_gain",
        parents=(a, w),
        vjps=(lambda g: g * w.value[None, :], lambda g: (g * a.value).sum(axis=0)),
    )


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return Node(a.value * c, op="scale", parents=(a,), vjps=(lambda g: g * c,))


def relu(a: Node) -> Node:
    mask = a.value > 0
    return Node(np.where(mask, a.value, 0.0), op="relu", parents=(a,), vjps=(lambda g: g * mask,))


def sigmoid(a: Node) -> Node:
    x = a.value
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return Node(s, op="sigmoid", parents=(a,), vjps=(lambda g: g * s * (1.0 - s),))


def softmax_rows(a: Node) -> Node:
    _check_2d(a, "softmax_rows")
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return Node(
        s,
        op="softmax_rows",
        parents=(a,),
        vjps=(lambda g: s * (g - (g * s).sum(axis=1, keepdims=True)),),
    )


def layer_norm_rows(a: Node, eps: float = 1e-5) -> Node:
    """Normalize each row to zero mean / unit variance (no affine)."""
    _check_2d(a, "layer_norm_rows")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    n = a.value.shape[1]
    mu = a.value.mean(axis=1, keepdims=True)
    xc = a.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def vjp(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        return inv * (g - gm - xhat * gx)

    # keep n referenced for clarity of the per-row reduction size
    del n
    return Node(xhat, op="layer_norm", parents=(a,), vjps=(vjp,))


def dropout(a: Node, p: float, rng: np.random.Generator | None, train: bool) -> Node:
    """Inverted dropout. Eval mode is exactly the identity (returns `a`)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in train mode needs a generator")
    keep = (rng.random(a.value.shape) >= p) / (1.0 - p)
    return Node(a.value * keep, op="dropout", parents=(a,), vjps=(lambda g: g * keep,))


def mean_all(a: Node) -> Node:
    size = a.value.size
    return Node(
        a.value.mean(),
        op="mean_all",
        parents=(a,),
        vjps=(lambda g: np.full(a.value.shape, float(g) / size),),
    )


def slice_rows(a: Node, start: int, stop: int) -> Node:
    _check_2d(a, "slice_rows")
    if not 0 <= start < stop <= a.value.shape[0]:
        raise ShapeError(f"slice_rows: [{start}:{stop}] out of range for shape {a.value.shape}")

    def vjp(g):
        out = np.zeros_like(a.value)
        out[start:stop] = g
        return out

    return Node(a.value[start:stop].copy(), op="slice_rows", parents=(a,), vjps=(vjp,))


def slice_cols(a: Node, start: int, stop: int) -> Node:
    _check_2d(a, "slice_cols")
    if not 0 <= start < stop <= a.value.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for shape {a.value.shape}")

    def vjp(g):
        out = np.zeros_like(a.value)
        out[:, start:stop] = g
        return out

    return Node(a.value[:, start:stop].copy(), op="slice_cols", parents=(a,), vjps=(vjp,))


def concat_cols(nodes: list[Node]) -> Node:
    if not nodes:
        raise ShapeError("concat_cols: empty node list")
    rows = {n.value.shape[0] for n in nodes}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ: {sorted(rows)}")
    sizes = [n.value.shape[1] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(k):
        return lambda g: g[:, offsets[k]:offsets[k + 1]]

    return Node(
        np.concatenate([n.value for n in nodes], axis=1),
        op="concat_cols",
        parents=tuple(nodes),
        vjps=tuple(make_vjp(k) for k in range(len(nodes))),
    )


def concat_rows(nodes: list[Node]) -> Node:
    if not nodes:
        raise ShapeError("concat_rows: empty node list")
    cols = {n.value.shape[1] for n in nodes}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ: {sorted(cols)}")
    sizes = [n.value.shape[0] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(k):
        return lambda g: g[offsets[k]:offsets[k + 1]]

    return Node(
        np.concatenate([n.value for n in nodes], axis=0),
        op="concat_rows",
        parents=tuple(nodes),
        vjps=tuple(make_vjp(k) for k in range(len(nodes))),
    )


def attach_objective(pred: Node, loss_value: float, grad_wrt_pred: np.ndarray) -> Node:
    """Couple an externally computed scalar objective to the graph.

    The returned scalar node carries `loss_value`; its backward pass routes
    `grad_wrt_pred` (the objective's gradient with respect to `pred`) into
    the graph, scaled by the upstream seed.
    """
    grad_wrt_pred = np.asarray(grad_wrt_pred, dtype=np.float64)
    if grad_wrt_pred.shape != pred.value.shape:
        raise ShapeError(
            f"attach_objective: gradient shape {grad_wrt_pred.shape} vs prediction {pred.value.shape}"
        )
    return Node(
        float(loss_value),
        op="objective",
        parents=(pred,),
        vjps=(lambda g: float(g) * grad_wrt_pred,),
    )


def backward(loss: Node) -> dict[str, np.ndarray]:
    """Accumulate gradients from a scalar loss; returns {param name: grad}.

    Visits each node once in reverse topological order. Nodes that do not
    require gradients are skipped entirely, so gradients are never computed
    into constant inputs.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.value.shape}")

    # iterative post-order DFS over grad-requiring nodes
    topo: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.value)
    grads: dict[str, np.ndarray] = {}
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            contrib = vjp(g)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += contrib
        if node.op == "param" and node.name is not None:
            grads[node.name] = node.grad
    return grads
