"""Minimal reverse-mode autodiff over dense 2-D float64 arrays.

Every value is a matrix: column vectors are (n, 1), row vectors (1, n) and
scalars (1, 1).  Ops build an implicit tape by linking each output tensor to
its parents together with a vector-Jacobian closure; ``backward`` replays the
tape in reverse topological order.  There is no broadcasting except adding a
row vector to a matrix — every other shape coercion is explicit.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class Tensor:
    """A 2-D float64 array plus an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.values = np.ascontiguousarray(arr)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[Array], tuple[Array | None, ...]] | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Operator sugar for the common ops; everything else is a module function.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _result(values: Array, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(values)
    out._parents = parents
    out._vjp = vjp
    return out


def _require_shape(op: str, t: Tensor, shape: tuple[int, int]) -> None:
    if t.shape != shape:
        raise ValueError(f"{op}: expected shape {shape}, got {t.shape}")


def constant(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def parameter(values, name: str = "") -> Tensor:
    return Tensor(values, requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _result(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over a's rows."""
    if a.shape == b.shape:
        return _result(a.values + b.values, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _result(
            a.values + b.values, (a, b), lambda g: (g, g.sum(axis=0, keepdims=True))
        )
    raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_shape("mul", b, a.shape)
    av, bv = a.values, b.values
    return _result(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _result(a.values * s, (a,), lambda g: (g * s,))


def transpose(a: Tensor) -> Tensor:
    return _result(a.values.T.copy(), (a,), lambda g: (g.T,))


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if axis not in (0, 1):
        raise ValueError(f"concat: axis must be 0 or 1, got {axis}")
    if not parts:
        raise ValueError("concat: no tensors given")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum(sizes)[:-1]

    def vjp(g: Array):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(np.concatenate([p.values for p in parts], axis=axis), tuple(parts), vjp)


def row_gather(a: Tensor, indices) -> Tensor:
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"row_gather: indices must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ValueError(f"row_gather: index out of range for {a.shape[0]} rows")

    def vjp(g: Array):
        ga = np.zeros_like(a.values)
        np.add.at(ga, idx, g)
        return (ga,)

    return _result(a.values[idx], (a,), vjp)


def row_scatter_update(a: Tensor, indices, rows: Tensor) -> Tensor:
    """Copy of ``a`` with rows at ``indices`` replaced by ``rows``."""
    idx = np.asarray(indices, dtype=np.intp)
    if len(np.unique(idx)) != len(idx):
        raise ValueError("row_scatter_update: indices must be unique")
    _require_shape("row_scatter_update", rows, (len(idx), a.shape[1]))
    out = a.values.copy()
    out[idx] = rows.values

    def vjp(g: Array):
        ga = g.copy()
        ga[idx] = 0.0
        return (ga, g[idx])

    return _result(out, (a, rows), vjp)


def relu(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.maximum(av, 0.0), (a,), lambda g: (g * (av > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.values)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: Array) -> Array:
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log(a: Tensor) -> Tensor:
    av = a.values
    return _result(np.log(av), (a,), lambda g: (g / av,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    av = a.values
    inside = (av >= lo) & (av <= hi)
    return _result(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def powc(a: Tensor, exponent: float) -> Tensor:
    """Elementwise power by a constant exponent."""
    av = a.values
    e = float(exponent)
    return _result(av**e, (a,), lambda g: (g * e * av ** (e - 1.0),))


def masked_softmax(a: Tensor, mask: Array) -> Tensor:
    """Row softmax of ``a + mask``; mask is an additive constant, -inf allowed.

    Each row must keep at least one finite entry after masking.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ValueError(f"masked_softmax: mask shape {mask.shape} != {a.shape}")
    z = a.values + mask
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g: Array):
        inner = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - inner),)

    return _result(p, (a,), vjp)


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    return _reduce(a, axis, mean=False)


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    return _reduce(a, axis, mean=True)


def _reduce(a: Tensor, axis: int | None, mean: bool) -> Tensor:
    n, m = a.shape
    if axis is None:
        denom = n * m if mean else 1
        out = np.array([[a.values.sum() / denom]])
        return _result(out, (a,), lambda g: (np.full((n, m), g[0, 0] / denom),))
    if axis == 0:
        denom = n if mean else 1
        out = a.values.sum(axis=0, keepdims=True) / denom
        return _result(out, (a,), lambda g: (np.repeat(g, n, axis=0) / denom,))
    if axis == 1:
        denom = m if mean else 1
        out = a.values.sum(axis=1, keepdims=True) / denom
        return _result(out, (a,), lambda g: (np.repeat(g, m, axis=1) / denom,))
    raise ValueError(f"reduce: axis must be None, 0 or 1, got {axis}")


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root: Tensor) -> list[Tensor]:
    # Iterative DFS: tapes routinely exceed the recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def compute_grads(loss: Tensor) -> dict[int, Array]:
    """Gradients of a scalar ``loss`` keyed by ``id(tensor)``, without
    mutating any ``grad`` slot.  Safe to run concurrently on tapes that share
    parameter leaves."""
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar-shaped, got {loss.shape}")
    grads: dict[int, Array] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return grads


def backward(loss: Tensor, seed: float = 1.0) -> None:
    """Populate ``grad`` on every ``requires_grad`` tensor the loss depends on.

    Gradients accumulate across calls until ``zero_grad``.
    """
    if loss.values.size != 1:
        raise ValueError(f"backward: loss must be scalar-shaped, got {loss.shape}")
    grads = compute_grads(loss)
    for node in _toposort(loss):
        if not node.requires_grad:
            continue
        g = grads.get(id(node))
        if g is None:
            continue
        g = g * seed if seed != 1.0 else g
        node.grad = g.copy() if node.grad is None else node.grad + g


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(a: Array, b: Array, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-6,
    floor: float = 1e-6,
) -> dict:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` must be a deterministic closure over ``params`` returning a scalar
    tensor.  Returns a report with per-tensor max relative error and a global
    pass flag.
    """
    for p in params.values():
        p.zero_grad()
    backward(f())
    analytic = {
        name: (np.zeros_like(p.values) if p.grad is None else p.grad.copy())
        for name, p in params.items()
    }

    report: dict = {"passed": True, "max_rel_err": 0.0, "tensors": {}}
    for name, p in params.items():
        numeric = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        num_flat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = f().values.item()
            flat[i] = orig - step
            lo = f().values.item()
            flat[i] = orig
            num_flat[i] = (hi - lo) / (2.0 * step)
        err = relative_error(analytic[name], numeric, floor=floor)
        report["tensors"][name] = {"max_rel_err": err, "passed": err < tol}
        report["max_rel_err"] = max(report["max_rel_err"], err)
    report["passed"] = all(t["passed"] for t in report["tensors"].values())
    return report
