"""Minimal reverse-mode automatic differentiation over dense 2-D arrays.

Every value is a matrix (row vectors are shaped 1 x d). Operations build an
implicit tape through parent links; ``backward`` walks it once in reverse
topological order. float32 is the default precision; graphs built from
float64 leaves stay in float64 (used by the finite-difference checks).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "EmptyInputError",
    "GraphError",
    "constant",
    "parameter",
    "matmul",
    "add",
    "mul",
    "scale",
    "relu",
    "sigmoid",
    "add_row",
    "take_rows",
    "edge_mean",
    "mean_rows",
    "sum_rows",
    "sum_all",
    "concat_cols",
    "concat_rows",
    "softmax_row",
    "bce_with_logits",
    "elementwise",
    "reduce",
    "backward",
    "assert_finite",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy the operation's contract."""


class EmptyInputError(ValueError):
    """A reduction or concatenation received nothing to work on."""


class GraphError(RuntimeError):
    """Tape misuse: non-scalar loss or repeated backward on one tape."""


class Tensor:
    """A node in the computation graph.

    Leaves are created through :func:`constant` / :func:`parameter`; interior
    nodes through the op functions. ``grad`` is populated on trainable leaves
    by :func:`backward`.
    """

    __slots__ = ("value", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None):
        value = np.asarray(value)
        if value.ndim != 2:
            raise ShapeError(f"tensors are 2-D matrices, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = parents
        self._backward_fn = backward_fn
        self._consumed = False

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        kind = "param" if (self.requires_grad and not self._parents) else "tensor"
        return f"<{kind} {self.value.shape[0]}x{self.value.shape[1]}>"


def constant(value, dtype=np.float32):
    """Wrap an array as a non-trainable leaf."""
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 1:
        arr = arr[None, :]
    return Tensor(arr)


def parameter(value, dtype=np.float32):
    """Wrap an array as a trainable leaf."""
    arr = np.array(value, dtype=dtype)
    if arr.ndim == 1:
        arr = arr[None, :]
    return Tensor(arr, requires_grad=True)


def _wants_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _check_same_shape(a, b, op):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def matmul(a, b):
    """Matrix product; grads dA = dC @ B^T, dB = A^T @ dC."""
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: inner dims of {a.value.shape} and {b.value.shape} differ")
    out_val = a.value @ b.value

    def bwd(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(out_val, _wants_grad(a, b), (a, b), bwd)


def add(a, b):
    _check_same_shape(a, b, "add")

    def bwd(g):
        return g, g

    return Tensor(a.value + b.value, _wants_grad(a, b), (a, b), bwd)


def mul(a, b):
    """Elementwise (Hadamard) product."""
    _check_same_shape(a, b, "mul")

    def bwd(g):
        return g * b.value, g * a.value

    return Tensor(a.value * b.value, _wants_grad(a, b), (a, b), bwd)


def scale(x, k):
    """Multiply by a python scalar (the only broadcasting allowed)."""
    k = float(k)

    def bwd(g):
        return (g * k,)

    return Tensor(x.value * k, x.requires_grad, (x,), bwd)


def relu(x):
    out_val = np.maximum(x.value, 0)

    def bwd(g):
        return (g * (x.value > 0),)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def sigmoid(x):
    """Logistic function, computed in the overflow-safe branch form."""
    v = x.value
    out_val = np.empty_like(v)
    pos = v >= 0
    out_val[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out_val[~pos] = ev / (1.0 + ev)

    def bwd(g):
        return (g * out_val * (1.0 - out_val),)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def add_row(x, row):
    """Add a 1 x d row vector to every row of an n x d matrix."""
    if row.value.shape != (1, x.value.shape[1]):
        raise ShapeError(f"add_row: row {row.value.shape} does not fit matrix {x.value.shape}")

    def bwd(g):
        return g, g.sum(axis=0, keepdims=True)

    return Tensor(x.value + row.value, _wants_grad(x, row), (x, row), bwd)


def take_rows(x, idx):
    """Gather rows by index; duplicate indices accumulate in the gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows: index must be 1-D")
    out_val = x.value[idx]

    def bwd(g):
        gx = np.zeros_like(x.value)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


class EdgePlan:
    """Pre-sorted index structure for repeated edge_mean calls on one edge list.

    Grouped offsets let forward/backward run through add.reduceat instead of
    per-edge scatters; build once per (edge list, num_rows) and reuse.
    """

    __slots__ = ("num_rows", "num_edges", "counts",
                 "fwd_src", "fwd_starts", "fwd_groups",
                 "bwd_dst", "bwd_starts", "bwd_groups")

    def __init__(self, src, dst, num_rows):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if src.shape != dst.shape or src.ndim != 1:
            raise ShapeError("EdgePlan: src and dst must be equal-length 1-D index arrays")
        self.num_rows = int(num_rows)
        self.num_edges = len(src)
        self.counts = np.bincount(dst, minlength=num_rows)

        by_dst = np.argsort(dst, kind="stable")
        sorted_dst = dst[by_dst]
        self.fwd_src = src[by_dst]
        self.fwd_starts = np.flatnonzero(np.r_[True, sorted_dst[1:] != sorted_dst[:-1]])
        self.fwd_groups = sorted_dst[self.fwd_starts] if len(sorted_dst) else sorted_dst

        by_src = np.argsort(src, kind="stable")
        sorted_src = src[by_src]
        self.bwd_dst = dst[by_src]
        self.bwd_starts = np.flatnonzero(np.r_[True, sorted_src[1:] != sorted_src[:-1]])
        self.bwd_groups = sorted_src[self.bwd_starts] if len(sorted_src) else sorted_src


def edge_mean(x, src=None, dst=None, num_rows=None, plan=None):
    """Per-destination mean of source rows over an edge list.

    out[i] = mean of x[s] over edges (s -> i); rows with no incoming edge
    stay zero. The edge list is constant data; gradients flow through x only.
    Callers that aggregate the same edge list repeatedly pass a prebuilt
    EdgePlan instead of raw index arrays.
    """
    if plan is None:
        plan = EdgePlan(src, dst, num_rows)
    counts = plan.counts
    out_val = np.zeros((plan.num_rows, x.value.shape[1]), dtype=x.value.dtype)
    if plan.num_edges:
        sums = np.add.reduceat(x.value[plan.fwd_src], plan.fwd_starts, axis=0)
        out_val[plan.fwd_groups] = sums / counts[plan.fwd_groups, None].astype(x.value.dtype)

    def bwd(g):
        gx = np.zeros_like(x.value)
        if plan.num_edges:
            weighted = g[plan.bwd_dst] / counts[plan.bwd_dst, None].astype(g.dtype)
            gx[plan.bwd_groups] = np.add.reduceat(weighted, plan.bwd_starts, axis=0)
        return (gx,)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def mean_rows(x):
    if x.value.shape[0] == 0:
        raise EmptyInputError("mean_rows: zero rows")
    n = x.value.shape[0]
    out_val = x.value.mean(axis=0, keepdims=True)

    def bwd(g):
        return (np.repeat(g / n, n, axis=0),)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def sum_rows(x):
    if x.value.shape[0] == 0:
        raise EmptyInputError("sum_rows: zero rows")
    n = x.value.shape[0]
    out_val = x.value.sum(axis=0, keepdims=True)

    def bwd(g):
        return (np.repeat(g, n, axis=0),)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def sum_all(x):
    """Sum every entry into a 1 x 1 scalar."""
    out_val = np.full((1, 1), x.value.sum(), dtype=x.value.dtype)

    def bwd(g):
        return (np.full_like(x.value, g[0, 0]),)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def concat_cols(tensors):
    """Stack matrices side by side; all operands need the same row count."""
    tensors = list(tensors)
    if not tensors:
        raise EmptyInputError("concat_cols: empty operand list")
    rows = tensors[0].value.shape[0]
    for t in tensors[1:]:
        if t.value.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ ({rows} vs {t.value.shape[0]})")
    out_val = np.concatenate([t.value for t in tensors], axis=1)
    widths = [t.value.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return Tensor(out_val, _wants_grad(*tensors), tuple(tensors), bwd)


def concat_rows(tensors):
    """Stack matrices top to bottom; all operands need the same column count."""
    tensors = list(tensors)
    if not tensors:
        raise EmptyInputError("concat_rows: empty operand list")
    cols = tensors[0].value.shape[1]
    for t in tensors[1:]:
        if t.value.shape[1] != cols:
            raise ShapeError(f"concat_rows: column counts differ ({cols} vs {t.value.shape[1]})")
    out_val = np.concatenate([t.value for t in tensors], axis=0)
    heights = [t.value.shape[0] for t in tensors]
    offsets = np.cumsum([0] + heights)

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1], :] for i in range(len(tensors)))

    return Tensor(out_val, _wants_grad(*tensors), tuple(tensors), bwd)


def softmax_row(x):
    """Row-wise softmax, max-shifted for stability; rows sum to 1."""
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    out_val = ex / ex.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * out_val).sum(axis=1, keepdims=True)
        return (out_val * (g - dot),)

    return Tensor(out_val, x.requires_grad, (x,), bwd)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy from raw scores, in the stable softplus form.

    labels is a constant matrix of 0/1 values with the same shape as logits.
    Returns a 1 x 1 scalar.
    """
    if isinstance(labels, Tensor):
        labels = labels.value
    labels = np.asarray(labels, dtype=logits.value.dtype)
    if labels.shape != logits.value.shape:
        raise ShapeError(f"bce_with_logits: labels {labels.shape} vs logits {logits.value.shape}")
    z = logits.value
    # softplus(z) - y*z == -(y*log(sig(z)) + (1-y)*log(1-sig(z)))
    softplus = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    n = z.size
    out_val = np.full((1, 1), (softplus - labels * z).sum() / n, dtype=z.dtype)

    def bwd(g):
        p = np.empty_like(z)
        pos = z >= 0
        p[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        p[~pos] = ez / (1.0 + ez)
        return ((p - labels) * (g[0, 0] / n),)

    return Tensor(out_val, logits.requires_grad, (logits,), bwd)


_ELEMENTWISE = {"add": add, "mul": mul, "relu": relu, "sigmoid": sigmoid, "scale": scale}
_REDUCE = {"mean_rows": mean_rows, "sum_rows": sum_rows, "concat_cols": concat_cols,
           "softmax_row": softmax_row}


def elementwise(kind, *operands):
    """Dispatch to the pointwise op named by ``kind``."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*operands)


def reduce(kind, operands):
    """Dispatch to the reduction op named by ``kind``.

    concat_cols takes a list of tensors; the other kinds take a single tensor.
    """
    try:
        fn = _REDUCE[kind]
    except KeyError:
        raise ValueError(f"unknown reduce kind {kind!r}") from None
    return fn(operands)


def _topo_order(loss):
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, params=()):
    """Propagate gradients from a scalar loss back to trainable leaves.

    Returns a dict mapping each reached trainable leaf to its gradient; any
    tensor passed in ``params`` that the loss does not depend on is included
    with a zero gradient. Leaves also get their ``grad`` attribute set.
    A tape can be walked only once; a second call raises GraphError.
    """
    if loss.value.shape != (1, 1):
        raise GraphError(f"backward needs a 1x1 scalar loss, got shape {loss.value.shape}")
    if loss._consumed:
        raise GraphError("backward already ran on this tape")
    loss._consumed = True

    grads = {id(loss): np.ones_like(loss.value)}
    result = {}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward_fn is not None:
            parent_grads = node._backward_fn(g)
            for p, pg in zip(node._parents, parent_grads):
                if not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] += pg
                else:
                    grads[id(p)] = pg
        elif node.requires_grad:
            node.grad = g
            result[node] = g
    for p in params:
        if p not in result:
            zero = np.zeros_like(p.value)
            p.grad = zero
            result[p] = zero
    return result


def assert_finite(x, name="tensor"):
    """Debug check: raise if the tensor holds NaN or Inf."""
    if not np.all(np.isfinite(x.value)):
        raise FloatingPointError(f"{name} contains non-finite values")
    return x
