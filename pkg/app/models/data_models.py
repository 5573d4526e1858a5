from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.errors import ContractError

SPEED_OF_LIGHT = 2.99792458e8  # m/s

NODE_TYPES = ("antenna", "user", "target")
RELATIONS = ("communicates", "senses", "interference")

AMPLITUDE_CONSISTENT = "consistent"
AMPLITUDE_AS_WRITTEN = "as_written"
AMPLITUDE_MODES = (AMPLITUDE_CONSISTENT, AMPLITUDE_AS_WRITTEN)

# Constraint names used in feasibility reports
SENSING = "sensing_snr"
TDMA_BUDGET = "tdma_budget"
ENERGY_BUDGET = "energy_budget"
POWER_LIMIT = "power_limit"
ANTENNA_SPACING = "antenna_spacing"
CONSTRAINTS = (SENSING, TDMA_BUDGET, ENERGY_BUDGET, POWER_LIMIT, ANTENNA_SPACING)


def _vector3(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ContractError(f"{name} must be a 3-vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Waveguide:
    """Straight dielectric waveguide segment that antennas are pinched onto."""
    origin: np.ndarray
    direction: np.ndarray
    length: float
    feed_point: np.ndarray
    axis: str = ""

    def __post_init__(self):
        origin = _vector3(self.origin, "origin")
        direction = _vector3(self.direction, "direction")
        feed = _vector3(self.feed_point, "feed_point")
        if abs(np.linalg.norm(direction) - 1.0) > 1e-12:
            raise ContractError("waveguide direction must be a unit vector")
        if not self.length > 0:
            raise ContractError(f"waveguide length must be positive, got {self.length}")

        rel = feed - origin
        along = float(rel @ direction)
        off_line = np.linalg.norm(rel - along * direction)
        if off_line >= 1e-9 or along < -1e-9 or along > self.length + 1e-9:
            raise ContractError("feed point must lie on the waveguide segment")

        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        object.__setattr__(self, "feed_point", feed)
        object.__setattr__(self, "length", float(self.length))


@dataclass(frozen=True, eq=False)
class AntennaLayout:
    """Antenna scalar coordinates along their waveguides plus derived positions."""
    waveguide_ids: np.ndarray
    coords: np.ndarray
    positions: np.ndarray

    @classmethod
    def from_coords(cls, waveguides: Sequence[Waveguide], waveguide_ids, coords) -> "AntennaLayout":
        ids = np.asarray(waveguide_ids, dtype=np.int64).reshape(-1)
        s = np.asarray(coords, dtype=np.float64).reshape(-1)
        if ids.shape != s.shape:
            raise ContractError("waveguide_ids and coords must have the same length")
        positions = np.empty((len(s), 3))
        for i, (w, si) in enumerate(zip(ids, s)):
            positions[i] = waveguides[w].origin + si * waveguides[w].direction
        return cls(waveguide_ids=ids, coords=s, positions=positions)

    @property
    def size(self) -> int:
        return len(self.coords)

    @property
    def assignments(self) -> List[Tuple[int, float]]:
        return [(int(w), float(s)) for w, s in zip(self.waveguide_ids, self.coords)]

    def on_waveguide(self, index: int) -> np.ndarray:
        """Indices of the antennas sitting on waveguide `index`."""
        return np.flatnonzero(self.waveguide_ids == index)


@dataclass(frozen=True)
class RfConstants:
    """Carrier-derived constants of the radio front end."""
    carrier_freq: float
    n_eff: float
    wavelength: float
    guided_wavelength: float
    alpha: float
    speed_of_light: float = SPEED_OF_LIGHT

    @classmethod
    def from_carrier(cls, carrier_freq: float, n_eff: float) -> "RfConstants":
        if carrier_freq <= 0 or n_eff <= 0:
            raise ContractError("carrier frequency and n_eff must be positive")
        wavelength = SPEED_OF_LIGHT / carrier_freq
        return cls(
            carrier_freq=carrier_freq,
            n_eff=n_eff,
            wavelength=wavelength,
            guided_wavelength=wavelength / n_eff,
            alpha=SPEED_OF_LIGHT / (4.0 * np.pi * carrier_freq),
        )


@dataclass(frozen=True, eq=False)
class Scenario:
    """Immutable world description: terminals, waveguides, RF constants and budgets."""
    users: np.ndarray
    targets: np.ndarray
    waveguides: Tuple[Waveguide, ...]
    rf: RfConstants
    delta: float
    p_max: float
    energy_budget: float
    noise_power: float
    gamma_min: float
    slots: int
    snr_amplitude_mode: str = AMPLITUDE_CONSISTENT

    def __post_init__(self):
        users = np.asarray(self.users, dtype=np.float64).reshape(-1, 3)
        targets = np.asarray(self.targets, dtype=np.float64).reshape(-1, 3)
        if len(users) == 0:
            raise ContractError("a scenario needs at least one user")
        if np.any(users[:, 2] != 0.0) or np.any(targets[:, 2] != 0.0):
            raise ContractError("users and targets must lie in the z = 0 plane")
        for name in ("delta", "p_max", "energy_budget", "noise_power", "gamma_min"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be strictly positive")
        if self.slots < 1:
            raise ContractError("slots must be at least 1")
        if self.snr_amplitude_mode not in AMPLITUDE_MODES:
            raise ContractError(f"unknown snr_amplitude_mode {self.snr_amplitude_mode!r}")
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "waveguides", tuple(self.waveguides))

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    @property
    def carrier_freq(self) -> float:
        return self.rf.carrier_freq

    @property
    def n_eff(self) -> float:
        return self.rf.n_eff


@dataclass(frozen=True, eq=False)
class Allocation:
    """TDMA slot fractions q and transmit powers p, one entry per user."""
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64).reshape(-1))
        if self.q.shape != self.p.shape:
            raise ContractError("q and p must have one entry per user")


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint satisfaction flags and violation magnitudes (native units)."""
    flags: Dict[str, bool]
    violations: Dict[str, float]

    @property
    def all_satisfied(self) -> bool:
        return all(self.flags.values())


@dataclass(frozen=True, eq=False)
class SlotMetrics:
    """Communication, sensing and energy figures of one time slot."""
    rates: np.ndarray
    sensing_snrs: np.ndarray
    energy: float
    feasibility: Optional[FeasibilityReport] = None

    @property
    def sum_rate(self) -> float:
        return float(np.sum(self.rates))


@dataclass(frozen=True, eq=False)
class HeteroGraph:
    """Typed nodes and typed undirected edges (stored in both directions)."""
    node_types: Tuple[str, ...]
    features: np.ndarray
    edges: Tuple[Tuple[int, int, str], ...]

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def relations(self) -> List[str]:
        seen = []
        for _, _, rel in self.edges:
            if rel not in seen:
                seen.append(rel)
        return seen

    @cached_property
    def _adjacency(self) -> Dict[str, np.ndarray]:
        n = self.num_nodes
        matrices: Dict[str, np.ndarray] = {}
        for src, dst, rel in self.edges:
            if rel not in matrices:
                matrices[rel] = np.zeros((n, n))
            # row = receiving node, column = sending neighbour
            matrices[rel][dst, src] += 1.0
        return matrices

    def adjacency(self, relation: str) -> np.ndarray:
        """Dense (N, N) adjacency of one relation; zeros if the relation is absent."""
        matrix = self._adjacency.get(relation)
        if matrix is None:
            return np.zeros((self.num_nodes, self.num_nodes))
        return matrix

    def permuted(self, perm: Sequence[int]) -> "HeteroGraph":
        """Relabel nodes so that new node i is old node perm[i]."""
        perm = np.asarray(perm, dtype=np.int64)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return HeteroGraph(
            node_types=tuple(self.node_types[i] for i in perm),
            features=self.features[perm],
            edges=tuple((int(inverse[s]), int(inverse[d]), r) for s, d, r in self.edges),
        )


@dataclass(frozen=True, eq=False)
class Observation:
    """What the agent sees: the heterogeneous graph plus a flat state vector."""
    graph: HeteroGraph
    flat: np.ndarray


@dataclass(frozen=True, eq=False)
class Action:
    """Raw policy output and its projection onto the feasible action set."""
    raw: np.ndarray
    displacements: np.ndarray
    q: np.ndarray
    p: np.ndarray

    @property
    def idle(self) -> float:
        return 1.0 - float(np.sum(self.q))

    @property
    def allocation(self) -> Allocation:
        return Allocation(q=self.q, p=self.p)


@dataclass(frozen=True)
class RewardWeights:
    sensing: float = 1.0
    phys: float = 1.0
    energy: float = 10.0


@dataclass(frozen=True)
class RewardBreakdown:
    """Reward terms of one step; total is rebuilt from the parts."""
    sum_rate: float
    sensing_shortfall: float
    phys_violation: float
    energy_overrun: float
    sensing_penalty: float
    phys_penalty: float
    energy_penalty: float
    total: float

    @classmethod
    def compose(cls, sum_rate: float, sensing_shortfall: float, phys_violation: float,
                energy_overrun: float, weights: RewardWeights) -> "RewardBreakdown":
        sensing_penalty = weights.sensing * sensing_shortfall
        phys_penalty = weights.phys * phys_violation
        energy_penalty = weights.energy * energy_overrun
        return cls(
            sum_rate=sum_rate,
            sensing_shortfall=sensing_shortfall,
            phys_violation=phys_violation,
            energy_overrun=energy_overrun,
            sensing_penalty=sensing_penalty,
            phys_penalty=phys_penalty,
            energy_penalty=energy_penalty,
            total=sum_rate - sensing_penalty - phys_penalty - energy_penalty,
        )


@dataclass(frozen=True, eq=False)
class PolicyOutput:
    """Gaussian policy head output for one observation."""
    mean: np.ndarray
    log_std: np.ndarray
    sample: np.ndarray
    log_prob: float
    value: float


@dataclass(frozen=True, eq=False)
class Transition:
    """One stored step of a rollout."""
    observation: Observation
    raw_action: np.ndarray
    log_prob_old: float
    reward: float
    value: float
    next_value: float
    done: bool


@dataclass
class EpisodeRecord:
    """Learning-curve row for one episode."""
    episode: int
    reward: float
    sum_rate: float
    min_sensing_snr_db: float
    energy_used: float
