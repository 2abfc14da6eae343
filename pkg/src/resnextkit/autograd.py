"""Reverse-mode automatic differentiation over numpy arrays.

The graph is recorded during forward execution: every operation returns a
Variable holding its value, its operands and a closure implementing the
backward rule. backward() replays the closures once, in reverse topological
order, accumulating gradients by addition. A central finite-difference
oracle (float64) is provided for validating every backward rule.
"""

from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor


class Variable:
    """A value in the computation graph, optionally carrying a gradient.

    Leaf variables with requires_grad=True are trainable parameters; interior
    variables are produced by operations and keep references to their parents
    plus the backward closure for their op.
    """

    __slots__ = ("value", "grad", "requires_grad", "name", "_parents", "_backward", "_backward_done")

    def __init__(
        self,
        value: np.ndarray,
        requires_grad: bool = False,
        name: str | None = None,
        parents: Sequence["Variable"] = (),
        backward: Callable[[], None] | None = None,
    ):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self._parents = tuple(parents)
        self._backward = backward
        self._backward_done = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def accumulate_grad(self, g: np.ndarray) -> None:
        """Add g into this variable's grad slot, allocating on first use."""
        if self.grad is None:
            self.grad = np.array(g, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        tag = self.name or "variable"
        return f"Variable({tag}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def param(value: np.ndarray, name: str | None = None) -> Variable:
    """Wrap an array as a trainable leaf."""
    return Variable(value, requires_grad=True, name=name)


def constant(value: np.ndarray, name: str | None = None) -> Variable:
    """Wrap an array as a non-trainable leaf."""
    return Variable(value, requires_grad=False, name=name)


def _topo_order(root: Variable) -> list[Variable]:
    """Iterative post-order DFS; avoids recursion limits on deep networks."""
    order: list[Variable] = []
    visited: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Variable) -> dict[int, np.ndarray]:
    """Propagate d(root)/d(v) to every requires_grad variable reachable from root.

    root must hold a single element. Returns a map from id(parameter) to its
    gradient array; gradients are also left in each parameter's grad slot.
    Calling backward twice on the same root without zero_grads raises.
    """
    if root.value.size != 1:
        raise ValueError(f"backward: root must be a scalar, got shape {root.value.shape}")
    if root._backward_done:
        raise RuntimeError("backward: already called on this root; call zero_grads and rerun forward")
    root._backward_done = True

    order = _topo_order(root)
    root.accumulate_grad(np.ones_like(root.value))
    grads: dict[int, np.ndarray] = {}
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()
        if node._parents:
            # interior node: release the closure and grad buffer eagerly so
            # large activations are reclaimed while the walk proceeds
            node._backward = None
            if node is not root:
                node.grad = None
        elif node.requires_grad and node.grad is not None:
            grads[id(node)] = node.grad
    return grads


def zero_grads(params: Iterable[Variable]) -> None:
    """Clear the gradient slot of every given variable."""
    for p in params:
        p.grad = None


def finite_diff_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, computed in float64.

    f must be deterministic; each element is perturbed by +/- eps and the
    slope (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps) recorded.
    """
    if eps <= 0:
        raise ValueError(f"finite_diff_gradient: eps must be positive, got {eps}")
    x64 = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x64)
    flat = x64.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x64))
        flat[i] = orig - eps
        f_minus = float(f(x64))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise FloatingPointError(f"finite_diff_gradient: non-finite f at element {i}")
        gflat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max over elements of |a-b| / max(|a|, |b|, 1e-8)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


# ---------------------------------------------------------------------------
# graph-building arithmetic shared by the layer set
# ---------------------------------------------------------------------------

def add(a: Variable, b: Variable) -> Variable:
    """Elementwise sum; gradients flow unchanged to both operands."""
    if a.value.shape != b.value.shape:
        raise tensor.ShapeError(f"add: shape mismatch {a.value.shape} vs {b.value.shape}")
    value = tensor.add(a.value, b.value) if a.value.ndim == 4 else a.value + b.value
    out = Variable(value, parents=(a, b))

    def _bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad)
        if b.requires_grad:
            b.accumulate_grad(out.grad)

    out._backward = _bwd
    return out


def add_n(terms: Sequence[Variable]) -> Variable:
    """Sum of several same-shape variables (n-ary shortcut aggregation)."""
    if len(terms) == 0:
        raise ValueError("add_n: empty term list")
    shape = terms[0].value.shape
    for t in terms[1:]:
        if t.value.shape != shape:
            raise tensor.ShapeError(f"add_n: shape mismatch {t.value.shape} vs {shape}")
    total = terms[0].value.copy()
    for t in terms[1:]:
        total += t.value
    out = Variable(total, parents=tuple(terms))

    def _bwd():
        for t in terms:
            if t.requires_grad:
                t.accumulate_grad(out.grad)

    out._backward = _bwd
    return out


def mul(a: Variable, b: Variable) -> Variable:
    """Elementwise product of same-shape variables."""
    if a.value.shape != b.value.shape:
        raise tensor.ShapeError(f"mul: shape mismatch {a.value.shape} vs {b.value.shape}")
    out = Variable(a.value * b.value, parents=(a, b))

    def _bwd():
        if a.requires_grad:
            a.accumulate_grad(out.grad * b.value)
        if b.requires_grad:
            b.accumulate_grad(out.grad * a.value)

    out._backward = _bwd
    return out


def sum_all(a: Variable) -> Variable:
    """Reduce to a single-element scalar (the usual backward() root)."""
    out = Variable(np.asarray(a.value.sum(), dtype=a.value.dtype), parents=(a,))

    def _bwd():
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.value, out.grad))

    out._backward = _bwd
    return out


def concat_channels(parts: Sequence[Variable]) -> Variable:
    """Channel-axis concatenation; backward routes grad slices to each part."""
    value = tensor.concat_channels([p.value for p in parts])
    out = Variable(value, parents=tuple(parts))
    sizes = [p.value.shape[1] for p in parts]

    def _bwd():
        offset = 0
        for p, k in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate_grad(out.grad[:, offset:offset + k])
            offset += k

    out._backward = _bwd
    return out


def split_channels(x: Variable, sizes: Sequence[int]) -> list[Variable]:
    """Split along the channel axis into len(sizes) variables."""
    values = tensor.split_channels(x.value, sizes)
    outs = []
    offset = 0
    for v, k in zip(values, sizes):
        start = offset
        part = Variable(v, parents=(x,))

        def _bwd(part=part, start=start, k=k):
            if x.requires_grad:
                g = np.zeros_like(x.value)
                g[:, start:start + k] = part.grad
                x.accumulate_grad(g)

        part._backward = _bwd
        outs.append(part)
        offset += k
    return outs
