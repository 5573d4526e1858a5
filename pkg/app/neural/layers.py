"""Dense and relation-typed graph layers built on the differentiation tape."""
from dataclasses import dataclass
from typing import Callable, Dict, Tuple

import numpy as np

from app.errors import ContractError
from app.models.data_models import HeteroGraph
from app.neural import tape as ad
from app.neural.tape import ParameterStore, Tape, Var

ACTIVATIONS: Dict[str, Callable[[Var], Var]] = {
    "tanh": ad.tanh,
    "relu": ad.relu,
    "logistic": ad.logistic,
    "identity": ad.identity,
}


def activation(name: str) -> Callable[[Var], Var]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ContractError(f"Unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}")


def init_uniform(rng: np.random.Generator, shape: Tuple[int, int], fan_in: int) -> np.ndarray:
    """Uniform initialisation in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def forward_dense(W: Var, b: Var, x: Var) -> Var:
    """
    Affine map of row inputs: x W^T + b.

    Args:
        W: Weight (out, in)
        b: Bias row (1, out)
        x: Inputs (n, in)

    Returns:
        Var: Outputs (n, out)
    """
    if x.shape[1] != W.shape[1]:
        raise ContractError(f"dense input has {x.shape[1]} columns, weight expects {W.shape[1]}")
    if b.shape != (1, W.shape[0]):
        raise ContractError(f"dense bias must have shape (1, {W.shape[0]}), got {b.shape}")
    return ad.matmul(x, ad.transpose(W)) + b


@dataclass(frozen=True)
class Dense:
    """Fully connected layer stored as `<name>.W` (out, in) and `<name>.b` (1, out)."""
    name: str
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def register(self, store: ParameterStore, rng: np.random.Generator):
        store.add(f"{self.name}.W", init_uniform(rng, (self.out_dim, self.in_dim), self.in_dim))
        store.add(f"{self.name}.b", init_uniform(rng, (1, self.out_dim), self.in_dim))

    def param_names(self) -> Tuple[str, ...]:
        return (f"{self.name}.W", f"{self.name}.b")

    def __call__(self, tape: Tape, x: Var) -> Var:
        out = forward_dense(tape.param(f"{self.name}.W"), tape.param(f"{self.name}.b"), x)
        return activation(self.activation)(out)


@dataclass(frozen=True)
class RelGnnLayer:
    """
    Graph layer with one weight matrix per relation plus a self-loop weight.

    Parameters are stored as `<name>.W_<relation>` and `<name>.W_0`, each (out, in).
    """
    name: str
    relations: Tuple[str, ...]
    in_dim: int
    out_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if len(set(self.relations)) != len(self.relations):
            raise ContractError("relation types must be listed once each")

    def weight_name(self, relation: str) -> str:
        return f"{self.name}.W_{relation}"

    @property
    def self_weight_name(self) -> str:
        return f"{self.name}.W_0"

    def register(self, store: ParameterStore, rng: np.random.Generator):
        for relation in self.relations:
            store.add(self.weight_name(relation), init_uniform(rng, (self.out_dim, self.in_dim), self.in_dim))
        store.add(self.self_weight_name, init_uniform(rng, (self.out_dim, self.in_dim), self.in_dim))

    def param_names(self) -> Tuple[str, ...]:
        return tuple(self.weight_name(r) for r in self.relations) + (self.self_weight_name,)


def relgnn_forward(tape: Tape, layer: RelGnnLayer, graph: HeteroGraph, H: Var) -> Var:
    """
    One message-passing step with unnormalised sum aggregation per relation.

    h'_v = act( sum_r sum_{u in N_r(v)} W_r h_u + W_0 h_v )

    Args:
        tape: Tape holding the layer parameters
        layer: Layer definition
        graph: Graph whose adjacency drives the aggregation
        H: Node embeddings (N, in)

    Returns:
        Var: New node embeddings (N, out)
    """
    if H.shape[0] != graph.num_nodes:
        raise ContractError(f"embedding has {H.shape[0]} rows for {graph.num_nodes} nodes")
    unknown = [r for r in graph.relations() if r not in layer.relations]
    if unknown:
        raise ContractError(f"layer {layer.name!r} has no weights for relations {unknown}")

    out = ad.matmul(H, ad.transpose(tape.param(layer.self_weight_name)))
    for relation in layer.relations:
        adjacency = graph.adjacency(relation)
        if not adjacency.any():
            continue
        messages = ad.matmul(tape.const(adjacency), H)
        out = out + ad.matmul(messages, ad.transpose(tape.param(layer.weight_name(relation))))
    return activation(layer.activation)(out)


def mean_pool(H: Var) -> Var:
    """Arithmetic mean of node rows, (N, d) -> (1, d)."""
    if H.shape[0] < 1:
        raise ContractError("cannot pool an empty graph")
    return ad.mean_rows(H)
