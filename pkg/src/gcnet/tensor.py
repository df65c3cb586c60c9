"""Dense float32 tensors with reverse-mode automatic differentiation.

Every operation records an op node linking the output tensor to its inputs,
so a scalar loss can be differentiated with ``Tensor.backward()``.  The op
set is deliberately small: matrix product, broadcast add/mul, relu, the
[0,1] clamp used for mask weights, a hard-threshold binarizer with a
straight-through gradient, softmax cross entropy, mean pooling, flatten,
squared L2 norm, and scalar scaling.  Arithmetic is 32-bit throughout.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionError, NumericError

DTYPE = np.float32

# Threshold above which a continuous mask weight binarizes to 1.
BINARIZE_THRESHOLD = 0.5

# Every op output is checked for NaN/Inf; non-finite values are an error
# state, not something to propagate.  Disable only for profiling.
FINITE_CHECKS = True


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=DTYPE)
    return arr


class OpNode:
    """One record in the computation graph: the op that produced a tensor."""

    __slots__ = ("op", "parents", "backward_fn")

    def __init__(self, op: str, parents: Sequence["Tensor"], backward_fn: Callable):
        self.op = op
        self.parents = tuple(parents)
        # backward_fn(grad) -> tuple of gradient arrays aligned with parents
        # (None for parents that do not require grad).
        self.backward_fn = backward_fn


class Tensor:
    """A dense n-d float32 array, optionally tracked for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_array(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[OpNode] = None
        self.name = name

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # -- gradient bookkeeping ------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """A view of the same data cut off from the graph."""
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad=None):
        """Reverse-mode sweep from this tensor.

        ``grad`` defaults to 1 and may be omitted only for scalars.  Visits
        each reachable op node exactly once, in reverse topological order,
        accumulating (summing) gradients where paths meet.
        """
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without grad on a non-scalar tensor")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=DTYPE)
            if grad.shape != self.data.shape:
                raise DimensionError(
                    f"seed gradient shape {grad.shape} != tensor shape {self.data.shape}"
                )
        graph = CompGraph(self)
        self.grad = grad if self.grad is None else self.grad + grad
        for t in reversed(graph.nodes):
            node = t.node
            if node is None or t.grad is None:
                continue
            parent_grads = node.backward_fn(t.grad)
            for parent, pgrad in zip(node.parents, parent_grads):
                if pgrad is None or not parent.requires_grad:
                    continue
                pgrad = pgrad.astype(DTYPE, copy=False)
                if parent.grad is None:
                    parent.grad = pgrad.copy()
                else:
                    parent.grad = parent.grad + pgrad


class CompGraph:
    """Topologically ordered op records reachable from a root tensor.

    ``nodes`` lists tensors with inputs before the ops that consume them;
    the backward pass walks it once in reverse.  Construction is iterative,
    so graph depth is not limited by the interpreter recursion limit.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in visited:
                continue
            visited.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in tensor.node.parents:
                    if id(parent) not in visited:
                        stack.append((parent, False))
        self.nodes = order


def _check_finite(arr: np.ndarray, op: str) -> None:
    if FINITE_CHECKS and not np.isfinite(arr).all():
        raise NumericError(f"non-finite values produced by op '{op}'")


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    data = np.asarray(data, dtype=DTYPE)
    _check_finite(data, op)
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out.node = OpNode(op, parents, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- ops ----------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product a[m,k] @ b[k,n]."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def backward(grad):
        ga = grad @ b.data.T if a.requires_grad else None
        gb = a.data.T @ grad if b.requires_grad else None
        return ga, gb

    return _make("matmul", out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum with numpy broadcasting (e.g. bias rows)."""
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add shapes {a.data.shape} + {b.data.shape}") from exc

    def backward(grad):
        ga = _unbroadcast(grad, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(grad, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make("add", out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product with broadcasting; used for mask application."""
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul shapes {a.data.shape} * {b.data.shape}") from exc

    def backward(grad):
        ga = _unbroadcast(grad * b.data, a.data.shape) if a.requires_grad else None
        gb = _unbroadcast(grad * a.data, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _make("mul", out, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar (loss weighting)."""
    s = DTYPE(s)
    out = a.data * s

    def backward(grad):
        return (grad * s,)

    return _make("scale", out, (a,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, DTYPE(0))

    def backward(grad):
        return (grad * (x.data > 0),)

    return _make("relu", out, (x,), backward)


def relu1(x: Tensor) -> Tensor:
    """Clamp to [0,1]; gradient is 1 strictly inside (0,1) and 0 outside."""
    out = np.clip(x.data, DTYPE(0), DTYPE(1))

    def backward(grad):
        inside = (x.data > 0) & (x.data < 1)
        return (grad * inside,)

    return _make("relu1", out, (x,), backward)


def binarize_ste(phi: Tensor) -> Tensor:
    """Hard threshold 1[phi > 1/2] with a straight-through gradient.

    The forward output is exactly 0 or 1 (0.5 maps to 0, the inequality is
    strict).  The backward rule passes the upstream gradient through
    unchanged; range gating is delegated to the relu1 usually composed
    before this op.
    """
    out = (phi.data > DTYPE(BINARIZE_THRESHOLD)).astype(DTYPE)

    def backward(grad):
        return (grad,)

    return _make("binarize_ste", out, (phi,), backward)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax logits.

    Numerically stabilized by max-subtraction, so huge logits do not
    overflow.  ``labels`` is an integer vector with one entry per row.
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.data.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.data.shape[0]:
        raise DimensionError(
            f"labels shape {labels.shape} does not match batch {logits.data.shape[0]}"
        )
    n, c = logits.data.shape
    if labels.min() < 0 or labels.max() >= c:
        raise IndexError(f"label out of range [0,{c}): {labels.min()}..{labels.max()}")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    # log-prob via shifted logits keeps log(0) out of the picture
    log_z = np.log(exp.sum(axis=1))
    nll = log_z - shifted[np.arange(n), labels]
    out = np.asarray(nll.mean(), dtype=DTYPE)

    def backward(grad):
        g = probs.copy()
        g[np.arange(n), labels] -= 1
        return (g * (grad / DTYPE(n)),)

    return _make("softmax_cross_entropy", out, (logits,), backward)


def mean_pool(x: Tensor, block) -> Tensor:
    """Average non-overlapping blocks over the trailing axes.

    ``block`` is an int (last axis) or a tuple matching the trailing axes;
    each pooled axis length must be divisible by its block size.
    """
    block = (block,) if isinstance(block, int) else tuple(block)
    shape = x.data.shape
    if len(block) > len(shape):
        raise DimensionError(f"block {block} has more axes than tensor {shape}")
    lead = shape[: len(shape) - len(block)]
    tail = shape[len(shape) - len(block):]
    for dim, b in zip(tail, block):
        if b < 1 or dim % b != 0:
            raise DimensionError(f"axis of length {dim} not divisible by block {b}")
    # interleave (n_i, b_i) pairs then average all block axes at once
    split = []
    for dim, b in zip(tail, block):
        split.extend((dim // b, b))
    reshaped = x.data.reshape(*lead, *split)
    pool_axes = tuple(len(lead) + 2 * i + 1 for i in range(len(block)))
    out = reshaped.mean(axis=pool_axes)
    count = DTYPE(math.prod(block))

    def backward(grad):
        g = np.expand_dims(grad, pool_axes)
        g = np.broadcast_to(g, reshaped.shape) / count
        return (g.reshape(shape).astype(DTYPE),)

    return _make("mean_pool", out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    """Collapse all axes after the first into one."""
    if x.data.ndim < 2:
        raise DimensionError(f"flatten expects >=2-D input, got {x.data.shape}")
    shape = x.data.shape
    out = x.data.reshape(shape[0], -1)

    def backward(grad):
        return (grad.reshape(shape),)

    return _make("flatten", out, (x,), backward)


def l2_norm_sq(x: Tensor) -> Tensor:
    """Sum of squared entries as a scalar tensor."""
    out = np.asarray((x.data * x.data).sum(dtype=DTYPE), dtype=DTYPE)

    def backward(grad):
        return (DTYPE(2) * x.data * grad,)

    return _make("l2_norm_sq", out, (x,), backward)


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Left-to-right sum of same-shape tensors (objective assembly)."""
    if not tensors:
        raise DimensionError("add_n of an empty sequence")
    total = tensors[0]
    for t in tensors[1:]:
        total = add(total, t)
    return total
