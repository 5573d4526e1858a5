"""Graph and flat encoders plus the shared-encoder Gaussian actor-critic."""
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.env.graph import HOMOGENEOUS_RELATION, to_homogeneous
from app.errors import ContractError
from app.models.data_models import RELATIONS, Observation, PolicyOutput
from app.neural import tape as ad
from app.neural.layers import Dense, RelGnnLayer, mean_pool, relgnn_forward
from app.neural.tape import ParameterStore, Tape, Var

LOG_2PI = math.log(2.0 * math.pi)

ENCODER_KINDS = ("hetero", "homogeneous", "flat")


class GraphEncoder:
    """Stack of relation-typed graph layers followed by mean pooling."""

    def __init__(self, in_dim: int, hidden_dim: int, n_layers: int,
                 relations: Sequence[str] = RELATIONS, activation: str = "tanh", prefix: str = "encoder"):
        if n_layers < 1:
            raise ContractError("a graph encoder needs at least one layer")
        self.relations = tuple(relations)
        self.layers: List[RelGnnLayer] = []
        dim = in_dim
        for i in range(n_layers):
            self.layers.append(RelGnnLayer(f"{prefix}.gnn{i}", self.relations, dim, hidden_dim, activation))
            dim = hidden_dim
        self.out_dim = hidden_dim

    def register(self, store: ParameterStore, rng: np.random.Generator):
        for layer in self.layers:
            layer.register(store, rng)

    def prepare(self, observation: Observation):
        return observation.graph

    def encode(self, tape: Tape, observation: Observation) -> Var:
        graph = self.prepare(observation)
        H = tape.const(graph.features)
        for layer in self.layers:
            H = relgnn_forward(tape, layer, graph, H)
        return mean_pool(H)


class HomogeneousGraphEncoder(GraphEncoder):
    """Same stack over the graph with every relation merged into one."""

    def __init__(self, in_dim: int, hidden_dim: int, n_layers: int, activation: str = "tanh",
                 prefix: str = "encoder"):
        super().__init__(in_dim, hidden_dim, n_layers, (HOMOGENEOUS_RELATION,), activation, prefix)

    def prepare(self, observation: Observation):
        return to_homogeneous(observation.graph)


class FlatEncoder:
    """Dense tanh stack over the flattened state vector."""

    def __init__(self, in_dim: int, hidden_dim: int, n_layers: int, prefix: str = "encoder"):
        if n_layers < 1:
            raise ContractError("a flat encoder needs at least one layer")
        self.layers: List[Dense] = []
        dim = in_dim
        for i in range(n_layers):
            self.layers.append(Dense(f"{prefix}.dense{i}", dim, hidden_dim, "tanh"))
            dim = hidden_dim
        self.out_dim = hidden_dim

    def register(self, store: ParameterStore, rng: np.random.Generator):
        for layer in self.layers:
            layer.register(store, rng)

    def encode(self, tape: Tape, observation: Observation) -> Var:
        x = tape.const(observation.flat)
        for layer in self.layers:
            x = layer(tape, x)
        return x


def gaussian_log_prob(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> float:
    """Diagonal Gaussian log-density of one sample."""
    x, mean, log_std = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (x, mean, log_std))
    z = (x - mean) * np.exp(-log_std)
    return float(-0.5 * np.sum(z * z) - np.sum(log_std) - 0.5 * len(x) * LOG_2PI)


def gaussian_entropy(log_std: np.ndarray) -> float:
    log_std = np.asarray(log_std, dtype=np.float64).reshape(-1)
    return float(np.sum(log_std) + 0.5 * len(log_std) * (1.0 + LOG_2PI))


def log_prob_var(actions: Var, mean: Var, log_std: Var) -> Var:
    """Per-row Gaussian log-density on the tape: (T, n) actions -> (T, 1)."""
    n = mean.shape[1]
    z = ad.mul(actions - mean, ad.exp(ad.neg(log_std)))
    return ad.scale(ad.sum_cols(ad.square(z)), -0.5) - ad.sum_all(log_std) - 0.5 * n * LOG_2PI


def entropy_var(log_std: Var) -> Var:
    n = log_std.shape[1]
    return ad.sum_all(log_std) + 0.5 * n * (1.0 + LOG_2PI)


class ActorCritic:
    """
    Shared encoder feeding a Gaussian actor head and a value head.

    Parameter names are prefixed `encoder.`, `actor.` and `critic.`; the
    state-independent log standard deviation is `actor.log_std`.
    """

    def __init__(self, encoder, action_dim: int, hidden_dim: int = 64, seed=0,
                 log_std_init: float = math.log(0.5), log_std_min: float = -5.0, log_std_max: float = 1.0):
        self.encoder = encoder
        self.action_dim = action_dim
        self.log_std_bounds = (log_std_min, log_std_max)
        self.actor = [
            Dense("actor.dense0", encoder.out_dim, hidden_dim, "tanh"),
            Dense("actor.dense1", hidden_dim, action_dim),
        ]
        self.critic = [
            Dense("critic.dense0", encoder.out_dim, hidden_dim, "tanh"),
            Dense("critic.dense1", hidden_dim, 1),
        ]
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.store = ParameterStore()
        encoder.register(self.store, rng)
        for layer in self.actor + self.critic:
            layer.register(self.store, rng)
        self.store.add("actor.log_std", np.full((1, action_dim), log_std_init))

    def parameter_count(self) -> int:
        return self.store.count()

    def forward(self, tape: Tape, observations: Sequence[Observation]) -> Tuple[Var, Var, Var]:
        """
        Batched forward pass over a rollout.

        Returns:
            Means (T, n), clamped log std (1, n) and values (T, 1)
        """
        if not observations:
            raise ContractError("forward needs at least one observation")
        embeddings = ad.concat_rows([self.encoder.encode(tape, obs) for obs in observations])
        mean = embeddings
        for layer in self.actor:
            mean = layer(tape, mean)
        value = embeddings
        for layer in self.critic:
            value = layer(tape, value)
        lo, hi = self.log_std_bounds
        log_std = ad.clip(tape.param("actor.log_std"), lo, hi)
        return mean, log_std, value

    def policy_forward(self, observation: Observation, rng: Optional[np.random.Generator] = None,
                       deterministic: bool = False) -> PolicyOutput:
        """
        Evaluate the policy on one observation and draw a raw action.

        Args:
            observation: Current state
            rng: Generator for the Gaussian sample (unused when deterministic)
            deterministic: Return the mean instead of sampling

        Returns:
            PolicyOutput: Mean, log std, raw action, its log-density and the state value
        """
        tape = Tape(self.store)
        mean_var, log_std_var, value_var = self.forward(tape, [observation])
        mean = mean_var.value[0].copy()
        log_std = log_std_var.value[0].copy()
        if deterministic:
            sample = mean.copy()
        else:
            if rng is None:
                raise ContractError("sampling needs a random generator")
            sample = mean + np.exp(log_std) * rng.standard_normal(len(mean))
        return PolicyOutput(
            mean=mean,
            log_std=log_std,
            sample=sample,
            log_prob=gaussian_log_prob(sample, mean, log_std),
            value=value_var.item(),
        )


def build_encoder(kind: str, node_dim: int, flat_dim: int, hidden_dim: int, n_layers: int):
    if kind == "hetero":
        return GraphEncoder(node_dim, hidden_dim, n_layers)
    if kind == "homogeneous":
        return HomogeneousGraphEncoder(node_dim, hidden_dim, n_layers)
    if kind == "flat":
        return FlatEncoder(flat_dim, hidden_dim, n_layers)
    raise ContractError(f"Unknown encoder kind {kind!r}; expected one of {ENCODER_KINDS}")
