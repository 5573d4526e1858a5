"""Adam with per-parameter learning rates and global gradient-norm clipping."""
from typing import Dict, Mapping, Optional

import numpy as np

from app.neural.tape import ParameterStore


def global_grad_norm(store: ParameterStore) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in store.grads.values())))


def clip_grad_norm(store: ParameterStore, max_norm: float) -> float:
    """
    Rescale all accumulated gradients so their joint L2 norm is at most max_norm.

    Returns:
        float: Norm before clipping
    """
    norm = global_grad_norm(store)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for name in store.grads:
            store.grads[name] = store.grads[name] * factor
    return norm


class Adam:
    """
    Adam optimiser over a parameter store.

    Args:
        store: Parameters to update
        learning_rates: Learning rate per parameter name
        beta1: First-moment decay
        beta2: Second-moment decay
        eps: Denominator floor
    """

    def __init__(self, store: ParameterStore, learning_rates: Mapping[str, float],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        missing = [name for name in store if name not in learning_rates]
        if missing:
            raise ValueError(f"no learning rate for parameters {missing}")
        self.store = store
        self.learning_rates: Dict[str, float] = dict(learning_rates)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.steps = 0
        self._m = {name: np.zeros_like(v) for name, v in store.values.items()}
        self._v = {name: np.zeros_like(v) for name, v in store.values.items()}

    def step(self):
        self.steps += 1
        bias1 = 1.0 - self.beta1 ** self.steps
        bias2 = 1.0 - self.beta2 ** self.steps
        for name, value in self.store.values.items():
            g = self.store.grads[name]
            self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            m_hat = self._m[name] / bias1
            v_hat = self._v[name] / bias2
            self.store.values[name] = value - self.learning_rates[name] * m_hat / (np.sqrt(v_hat) + self.eps)


def group_learning_rates(store: ParameterStore, groups: Mapping[str, float],
                         default: Optional[float] = None) -> Dict[str, float]:
    """
    Map parameter names to learning rates by longest matching name prefix.

    Args:
        store: Parameter store
        groups: Prefix -> learning rate
        default: Rate for parameters no prefix matches (error if None)
    """
    rates: Dict[str, float] = {}
    prefixes = sorted(groups, key=len, reverse=True)
    for name in store:
        match = next((p for p in prefixes if name.startswith(p)), None)
        if match is None:
            if default is None:
                raise ValueError(f"parameter {name!r} matches no learning-rate group")
            rates[name] = default
        else:
            rates[name] = groups[match]
    return rates
