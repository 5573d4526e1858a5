"""
Reverse-mode differentiation over a tape of 2-D float64 matrices.

Every value is a matrix: vectors are (1, d) rows and scalars are (1, 1).
Operations append a node to the tape; `Tape.backward` walks the tape in
reverse, applying the vector-Jacobian product registered for each
operation in `_VJP`.
"""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.special import softmax as _softmax

from app.errors import ContractError

logger = logging.getLogger(__name__)


def as_matrix(value) -> np.ndarray:
    """Coerce scalars and vectors to the 2-D float64 layout the tape uses."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ContractError(f"tape values must be at most 2-D, got shape {arr.shape}")
    return arr


class ParameterStore:
    """Named leaf matrices with gradient accumulators, in registration order."""

    def __init__(self):
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> np.ndarray:
        if name in self.values:
            raise ContractError(f"parameter {name!r} is already registered")
        matrix = as_matrix(value).copy()
        self.values[name] = matrix
        self.grads[name] = np.zeros_like(matrix)
        return matrix

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self) -> List[str]:
        return list(self.values)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return int(sum(v.size for v in self.values.values()))

    def zero_grad(self):
        for name in self.grads:
            self.grads[name] = np.zeros_like(self.values[name])

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.values.items()}

    def load(self, values: Dict[str, np.ndarray]):
        """Overwrite parameter values; names and shapes must match exactly."""
        if set(values) != set(self.values):
            missing = sorted(set(self.values) - set(values))
            extra = sorted(set(values) - set(self.values))
            raise ContractError(f"parameter names differ (missing {missing}, unexpected {extra})")
        for name, value in values.items():
            matrix = as_matrix(value)
            if matrix.shape != self.values[name].shape:
                raise ContractError(
                    f"parameter {name!r} has shape {self.values[name].shape}, got {matrix.shape}"
                )
            self.values[name] = matrix.copy()

    def first_non_finite(self) -> Optional[str]:
        for name, value in self.values.items():
            if not np.all(np.isfinite(value)):
                return name
        return None


@dataclass
class _Node:
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    cache: Any = None
    param: Optional[str] = None


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "index")
    __array_priority__ = 100

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.tape.grad_of(self)

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() needs a single-element value, got shape {self.shape}")
        return float(self.value[0, 0])

    def _lift(self, other) -> "Var":
        return other if isinstance(other, Var) else self.tape.const(other)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, float(other))
        return add(self, self._lift(other))

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -float(other))
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(neg(self), float(other))
        return sub(self._lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, self._lift(other))

    def __rmatmul__(self, other):
        return matmul(self._lift(other), self)

    @property
    def T(self) -> "Var":
        return transpose(self)

    def __repr__(self) -> str:
        node = self.tape.nodes[self.index]
        return f"Var(op={node.op!r}, shape={node.value.shape})"


class Tape:
    """
    Append-only record of one forward computation.

    Args:
        store: Parameter store that `param` reads from and `backward` accumulates into
    """

    def __init__(self, store: Optional[ParameterStore] = None):
        self.store = store
        self.nodes: List[_Node] = []
        self._bound: Dict[str, int] = {}
        self._grads: Optional[List[Optional[np.ndarray]]] = None

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, op: str, inputs: Sequence[Var], value: np.ndarray, cache: Any = None,
              param: Optional[str] = None) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ContractError("operands belong to a different tape")
        self.nodes.append(_Node(op, tuple(v.index for v in inputs), value, cache, param))
        self._grads = None
        return Var(self, len(self.nodes) - 1)

    def const(self, value) -> Var:
        return self._push("const", (), as_matrix(value).copy())

    def param(self, name: str) -> Var:
        """Leaf bound to a stored parameter; repeated calls return the same node."""
        if self.store is None or name not in self.store:
            raise ContractError(f"unknown parameter {name!r}")
        if name not in self._bound:
            var = self._push("param", (), self.store.values[name], param=name)
            self._bound[name] = var.index
        return Var(self, self._bound[name])

    def backward(self, root: Var, accumulate: bool = True) -> Dict[str, np.ndarray]:
        """
        Reverse accumulation from a single-element root.

        Args:
            root: Scalar output of the computation
            accumulate: Add parameter gradients into the store's accumulators

        Returns:
            Gradient of the root with respect to every parameter bound on this tape
        """
        if root.tape is not self:
            raise ContractError("root belongs to a different tape")
        if root.value.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {root.shape}")

        grads: List[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[root.index] = np.ones_like(root.value)
        for index in range(root.index, -1, -1):
            g = grads[index]
            node = self.nodes[index]
            if g is None or not node.inputs:
                continue
            input_values = [self.nodes[i].value for i in node.inputs]
            for i, contribution in zip(node.inputs, _VJP[node.op](g, input_values, node.value, node.cache)):
                if contribution is None:
                    continue
                grads[i] = contribution if grads[i] is None else grads[i] + contribution
        self._grads = grads

        result: Dict[str, np.ndarray] = {}
        for name, index in self._bound.items():
            g = grads[index]
            result[name] = np.zeros_like(self.nodes[index].value) if g is None else g
            if accumulate:
                self.store.grads[name] = self.store.grads[name] + result[name]
        return result

    def grad_of(self, var: Var) -> Optional[np.ndarray]:
        if self._grads is None:
            return None
        g = self._grads[var.index]
        return np.zeros_like(var.value) if g is None else g


# ---------------------------------------------------------------------------
# Forward operations
# ---------------------------------------------------------------------------

def _broadcast_ok(a: Tuple[int, int], b: Tuple[int, int]) -> bool:
    if a == b:
        return True
    for small, big in ((a, b), (b, a)):
        if small == (1, 1):
            return True
        if small[0] == 1 and small[1] == big[1]:
            return True
    return False


def _check_broadcast(op: str, a: Var, b: Var):
    if not _broadcast_ok(a.shape, b.shape):
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == (1, 1):
        return np.sum(g).reshape(1, 1)
    if shape[0] == 1 and g.shape[0] != 1:
        g = np.sum(g, axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = np.sum(g, axis=1, keepdims=True)
    return g


def matmul(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return a.tape._push("matmul", (a, b), a.value @ b.value)


def transpose(a: Var) -> Var:
    return a.tape._push("transpose", (a,), a.value.T.copy())


def add(a: Var, b: Var) -> Var:
    _check_broadcast("add", a, b)
    return a.tape._push("add", (a, b), a.value + b.value)


def sub(a: Var, b: Var) -> Var:
    _check_broadcast("sub", a, b)
    return a.tape._push("sub", (a, b), a.value - b.value)


def mul(a: Var, b: Var) -> Var:
    _check_broadcast("mul", a, b)
    return a.tape._push("mul", (a, b), a.value * b.value)


def neg(a: Var) -> Var:
    return a.tape._push("neg", (a,), -a.value)


def scale(a: Var, c: float) -> Var:
    return a.tape._push("scale", (a,), a.value * c, cache=c)


def add_scalar(a: Var, c: float) -> Var:
    return a.tape._push("add_scalar", (a,), a.value + c)


def tanh(a: Var) -> Var:
    return a.tape._push("tanh", (a,), np.tanh(a.value))


def relu(a: Var) -> Var:
    return a.tape._push("relu", (a,), np.maximum(a.value, 0.0))


def logistic(a: Var) -> Var:
    return a.tape._push("logistic", (a,), expit(a.value))


def exp(a: Var) -> Var:
    return a.tape._push("exp", (a,), np.exp(a.value))


def log(a: Var) -> Var:
    return a.tape._push("log", (a,), np.log(a.value))


def square(a: Var) -> Var:
    return a.tape._push("square", (a,), a.value * a.value)


def identity(a: Var) -> Var:
    return a


def softmax_rows(a: Var) -> Var:
    """Row-wise softmax; max-subtracted so it is shift invariant."""
    return a.tape._push("softmax_rows", (a,), _softmax(a.value, axis=1))


def sum_all(a: Var) -> Var:
    return a.tape._push("sum_all", (a,), np.sum(a.value).reshape(1, 1))


def mean_all(a: Var) -> Var:
    if a.value.size == 0:
        raise ContractError("mean of an empty matrix")
    return a.tape._push("mean_all", (a,), np.mean(a.value).reshape(1, 1))


def sum_cols(a: Var) -> Var:
    """Sum across columns: (n, d) -> (n, 1)."""
    return a.tape._push("sum_cols", (a,), np.sum(a.value, axis=1, keepdims=True))


def mean_rows(a: Var) -> Var:
    """Mean down the rows: (n, d) -> (1, d)."""
    if a.shape[0] == 0:
        raise ContractError("mean over zero rows")
    return a.tape._push("mean_rows", (a,), np.mean(a.value, axis=0, keepdims=True))


def clip(a: Var, lo: float, hi: float) -> Var:
    """Clamp to [lo, hi]; the gradient is zero wherever the clamp is active."""
    return a.tape._push("clip", (a,), np.clip(a.value, lo, hi), cache=(lo, hi))


def minimum(a: Var, b: Var) -> Var:
    """Elementwise minimum; ties send the gradient to `a`."""
    if a.shape != b.shape:
        raise ContractError(f"minimum: shapes differ, {a.shape} vs {b.shape}")
    mask = a.value <= b.value
    return a.tape._push("minimum", (a, b), np.where(mask, a.value, b.value), cache=mask)


def concat_rows(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ContractError("concat_rows needs at least one input")
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise ContractError(f"concat_rows: column counts differ {sorted(widths)}")
    sizes = [p.shape[0] for p in parts]
    return parts[0].tape._push("concat_rows", tuple(parts), np.vstack([p.value for p in parts]), cache=sizes)


# ---------------------------------------------------------------------------
# Vector-Jacobian products: (upstream grad, input values, output value, cache) -> input grads
# ---------------------------------------------------------------------------

def _vjp_concat_rows(g, xs, y, sizes):
    bounds = np.cumsum([0] + list(sizes))
    return [g[bounds[i]:bounds[i + 1]] for i in range(len(sizes))]


def _vjp_softmax_rows(g, xs, y, cache):
    return [y * (g - np.sum(g * y, axis=1, keepdims=True))]


def _vjp_clip(g, xs, y, bounds):
    lo, hi = bounds
    return [g * ((xs[0] > lo) & (xs[0] < hi))]


_VJP: Dict[str, Callable[..., List[Optional[np.ndarray]]]] = {
    "matmul": lambda g, xs, y, c: [g @ xs[1].T, xs[0].T @ g],
    "transpose": lambda g, xs, y, c: [g.T],
    "add": lambda g, xs, y, c: [_unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)],
    "sub": lambda g, xs, y, c: [_unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)],
    "mul": lambda g, xs, y, c: [_unbroadcast(g * xs[1], xs[0].shape), _unbroadcast(g * xs[0], xs[1].shape)],
    "neg": lambda g, xs, y, c: [-g],
    "scale": lambda g, xs, y, c: [g * c],
    "add_scalar": lambda g, xs, y, c: [g],
    "tanh": lambda g, xs, y, c: [g * (1.0 - y * y)],
    "relu": lambda g, xs, y, c: [g * (xs[0] > 0.0)],
    "logistic": lambda g, xs, y, c: [g * y * (1.0 - y)],
    "exp": lambda g, xs, y, c: [g * y],
    "log": lambda g, xs, y, c: [g / xs[0]],
    "square": lambda g, xs, y, c: [2.0 * xs[0] * g],
    "softmax_rows": _vjp_softmax_rows,
    "sum_all": lambda g, xs, y, c: [np.full_like(xs[0], g[0, 0])],
    "mean_all": lambda g, xs, y, c: [np.full_like(xs[0], g[0, 0] / xs[0].size)],
    "sum_cols": lambda g, xs, y, c: [np.broadcast_to(g, xs[0].shape).copy()],
    "mean_rows": lambda g, xs, y, c: [np.broadcast_to(g / xs[0].shape[0], xs[0].shape).copy()],
    "clip": _vjp_clip,
    "minimum": lambda g, xs, y, mask: [g * mask, g * ~mask],
    "concat_rows": _vjp_concat_rows,
}
