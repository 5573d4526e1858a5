"""Heterogeneous graph and flat state views of an environment state."""
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.models.data_models import NODE_TYPES, AntennaLayout, HeteroGraph, Scenario
from app.utils.units import linear_to_db

HOMOGENEOUS_RELATION = "linked"

_ONE_HOT = {name: np.eye(len(NODE_TYPES))[i] for i, name in enumerate(NODE_TYPES)}


def node_feature_dim(include_context: bool = False) -> int:
    return len(NODE_TYPES) + 3 + (1 if include_context else 0)


def _context_column(scenario: Scenario, n_antennas: int, last_rates: Optional[Sequence[float]],
                    last_snrs: Optional[Sequence[float]]) -> np.ndarray:
    rates = np.zeros(scenario.num_users) if last_rates is None else np.asarray(last_rates, dtype=np.float64)
    if last_snrs is None:
        snr_feature = np.zeros(scenario.num_targets)
    else:
        # dB / 10 keeps the scalar near unit scale; a zero SNR is floored at -100 dB
        snr_feature = np.array([max(linear_to_db(v), -100.0) / 10.0 for v in last_snrs])
    return np.concatenate([np.zeros(n_antennas), rates, snr_feature])[:, None]


def build_graph(scenario: Scenario, layout: AntennaLayout, position_scale: float,
                include_context: bool = False, last_rates: Optional[Sequence[float]] = None,
                last_snrs: Optional[Sequence[float]] = None) -> HeteroGraph:
    """
    Build the heterogeneous graph of antennas, users and targets.

    Nodes are ordered antennas, then users, then targets. Every antenna-user
    pair is linked by "communicates", every antenna-target pair by "senses"
    and every user-target pair by "interference"; each edge is stored once
    per direction.

    Args:
        scenario: Scenario with user and target positions
        layout: Current antenna layout
        position_scale: Divisor applied to positions (m)
        include_context: Append the last rate / SNR scalar to every node
        last_rates: Per-user rates of the previous slot
        last_snrs: Per-target linear sensing SNRs of the previous slot

    Returns:
        HeteroGraph: Graph with one-hot type plus scaled position features
    """
    n_ant, n_usr, n_tgt = layout.size, scenario.num_users, scenario.num_targets
    node_types: List[str] = ["antenna"] * n_ant + ["user"] * n_usr + ["target"] * n_tgt
    positions = np.vstack([layout.positions, scenario.users, scenario.targets]) / position_scale
    one_hot = np.stack([_ONE_HOT[t] for t in node_types])
    features = np.hstack([one_hot, positions])
    if include_context:
        features = np.hstack([features, _context_column(scenario, n_ant, last_rates, last_snrs)])

    users = range(n_ant, n_ant + n_usr)
    targets = range(n_ant + n_usr, n_ant + n_usr + n_tgt)
    edges: List[Tuple[int, int, str]] = []

    def link(a: int, b: int, relation: str):
        edges.append((a, b, relation))
        edges.append((b, a, relation))

    for a in range(n_ant):
        for u in users:
            link(a, u, "communicates")
        for t in targets:
            link(a, t, "senses")
    for u in users:
        for t in targets:
            link(u, t, "interference")

    return HeteroGraph(node_types=tuple(node_types), features=features, edges=tuple(edges))


def to_homogeneous(graph: HeteroGraph) -> HeteroGraph:
    """Collapse every relation into one, keeping nodes and features."""
    seen = set()
    edges = []
    for src, dst, _ in graph.edges:
        if (src, dst) not in seen:
            seen.add((src, dst))
            edges.append((src, dst, HOMOGENEOUS_RELATION))
    return HeteroGraph(node_types=graph.node_types, features=graph.features, edges=tuple(edges))


def flat_state(scenario: Scenario, layout: AntennaLayout, position_scale: float,
               last_q: Optional[np.ndarray] = None, last_p: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Flattened state for graph-free encoders: scaled positions plus last allocation.

    Returns:
        np.ndarray: Vector of length 3 (M + K + L) + 2 K
    """
    positions = np.vstack([layout.positions, scenario.users, scenario.targets]) / position_scale
    q = np.zeros(scenario.num_users) if last_q is None else np.asarray(last_q, dtype=np.float64)
    p = np.zeros(scenario.num_users) if last_p is None else np.asarray(last_p, dtype=np.float64) / scenario.p_max
    return np.concatenate([positions.reshape(-1), q, p])


def flat_state_dim(n_antennas: int, n_users: int, n_targets: int) -> int:
    return 3 * (n_antennas + n_users + n_targets) + 2 * n_users
