"""Central finite-difference checks of tape gradients."""
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from app.neural.tape import ParameterStore, Tape, Var

LossBuilder = Callable[[Tape], Var]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _evaluate(build: LossBuilder, store: ParameterStore) -> float:
    return build(Tape(store)).item()


def numeric_gradient(build: LossBuilder, store: ParameterStore, name: str, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the built scalar with respect to one parameter."""
    original = store.values[name]
    grad = np.zeros_like(original)
    for idx in np.ndindex(original.shape):
        plus = original.copy()
        plus[idx] += h
        store.values[name] = plus
        f_plus = _evaluate(build, store)
        minus = original.copy()
        minus[idx] -= h
        store.values[name] = minus
        f_minus = _evaluate(build, store)
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    store.values[name] = original
    return grad


def analytic_gradients(build: LossBuilder, store: ParameterStore) -> Dict[str, np.ndarray]:
    tape = Tape(store)
    root = build(tape)
    grads = tape.backward(root, accumulate=False)
    return {name: grads.get(name, np.zeros_like(value)) for name, value in store.values.items()}


def check_gradients(build: LossBuilder, store: ParameterStore, names: Optional[Iterable[str]] = None,
                    h: float = 1e-5) -> Dict[str, float]:
    """
    Compare tape gradients with central differences.

    Args:
        build: Function that records the loss on a fresh tape and returns its root
        store: Parameters to differentiate with respect to
        names: Subset of parameter names (all by default)
        h: Finite-difference step

    Returns:
        Largest relative error per parameter
    """
    analytic = analytic_gradients(build, store)
    errors: Dict[str, float] = {}
    for name in (names or store.names()):
        numeric = numeric_gradient(build, store, name, h)
        errors[name] = float(np.max(relative_error(analytic[name], numeric)))
    return errors
