"""Episodic pinching-antenna ISAC environment: reset, action projection and step."""
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.special import expit, softmax

from app.env.graph import build_graph, flat_state
from app.errors import ContractError
from app.models.config_models import ScenarioConfig
from app.models.data_models import (
    SENSING,
    Action,
    AntennaLayout,
    Observation,
    RewardBreakdown,
    RewardWeights,
    RfConstants,
    Scenario,
    SlotMetrics,
)
from app.physics.geometry import make_deployment, normalize_kind, project_spacing, spacing_shortfall
from app.physics.metrics import slot_metrics

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence]


@dataclass(frozen=True)
class ActionLimits:
    """Bounds used to map the unconstrained policy output onto feasible actions."""
    n_antennas: int
    n_users: int
    step_max: float
    p_max: float

    @property
    def dim(self) -> int:
        return self.n_antennas + 2 * self.n_users


@dataclass(frozen=True)
class EnvSettings:
    """Per-experiment knobs of the MDP that are not part of the physical scenario."""
    weights: RewardWeights
    step_max: float
    position_scale: float
    include_context: bool = False

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "EnvSettings":
        return cls(
            weights=RewardWeights(
                sensing=config.lambda_sensing,
                phys=config.lambda_phys,
                energy=config.lambda_energy,
            ),
            step_max=config.step_max,
            position_scale=config.position_scale,
            include_context=config.context_features,
        )


@dataclass(frozen=True, eq=False)
class EnvState:
    """Immutable snapshot of an episode between two slots."""
    scenario: Scenario
    layout: AntennaLayout
    settings: EnvSettings
    t: int = 0
    energy_used: float = 0.0
    done: bool = False
    last_metrics: Optional[SlotMetrics] = None
    last_action: Optional[Action] = None

    @property
    def limits(self) -> ActionLimits:
        return ActionLimits(
            n_antennas=self.layout.size,
            n_users=self.scenario.num_users,
            step_max=self.settings.step_max,
            p_max=self.scenario.p_max,
        )


def _cap_unit_sum(q: np.ndarray) -> np.ndarray:
    # rounding in softmax can leave the sum a few ulps above 1
    while np.sum(q) > 1.0:
        q = np.nextafter(q, 0.0)
    return q


def project_action(raw, limits: ActionLimits) -> Action:
    """
    Map an unconstrained raw action onto displacements, slot fractions and powers.

    Args:
        raw: Vector of length M + 2K laid out as [displacement, slot logits, power logits]
        limits: Action bounds

    Returns:
        Action: Raw vector and its feasible projection
    """
    raw = np.asarray(raw, dtype=np.float64).reshape(-1)
    if raw.shape != (limits.dim,):
        raise ContractError(f"raw action must have length {limits.dim}, got {raw.shape[0]}")
    if not np.all(np.isfinite(raw)):
        raise ContractError("raw action contains non-finite values")

    m, k = limits.n_antennas, limits.n_users
    raw_d, raw_q, raw_p = raw[:m], raw[m:m + k], raw[m + k:]

    displacements = limits.step_max * np.tanh(raw_d)
    # the appended zero logit is the idle share of the slot
    q = _cap_unit_sum(softmax(np.append(raw_q, 0.0))[:k])
    p = np.minimum(limits.p_max * expit(raw_p), limits.p_max)
    return Action(raw=raw, displacements=displacements, q=q, p=p)


def _on_ground(xy: np.ndarray) -> np.ndarray:
    return np.hstack([xy, np.zeros((len(xy), 1))])


def ring_placement(config: ScenarioConfig, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """
    Place targets near the area centre and users on a ring around the first target.

    Returns:
        Users (K, 3) and targets (L, 3) on the ground plane
    """
    centre = np.array([config.area_m / 2.0, config.area_m / 2.0])
    jitter = config.target_jitter_m
    targets = centre + rng.uniform(-jitter, jitter, size=(config.num_targets, 2))

    angles = rng.uniform(0.0, 2.0 * np.pi, size=config.num_users)
    half_width = config.ring_width_m / 2.0
    radii = rng.uniform(config.ring_radius_m - half_width, config.ring_radius_m + half_width,
                        size=config.num_users)
    anchor = targets[0] if config.num_targets else centre
    users = anchor + np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)

    return _on_ground(users), _on_ground(targets)


def fixed_placement(config: ScenarioConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Users and targets taken verbatim from the configuration."""
    users = np.asarray(config.user_positions or [], dtype=np.float64).reshape(-1, 2)
    targets = np.asarray(config.target_positions or [], dtype=np.float64).reshape(-1, 2)
    if len(users) != config.num_users or len(targets) != config.num_targets:
        raise ContractError(
            f"fixed placement lists {len(users)} users / {len(targets)} targets, "
            f"expected {config.num_users} / {config.num_targets}"
        )
    return _on_ground(users), _on_ground(targets)


def build_scenario(config: ScenarioConfig, deployment: Optional[str], rng: np.random.Generator):
    """Draw terminals and lay out the deployment, returning the scenario and its initial layout."""
    kind = normalize_kind(deployment or config.deployment)
    waveguides, layout = make_deployment(
        kind,
        n_antennas=config.n_antennas,
        area=config.area_m,
        height=config.height_m,
        delta=config.delta,
        length=config.waveguide_length,
        planar_y=config.planar_line_y_m,
    )
    if config.placement == "fixed":
        users, targets = fixed_placement(config)
    else:
        users, targets = ring_placement(config, rng)

    scenario = Scenario(
        users=users,
        targets=targets,
        waveguides=tuple(waveguides),
        rf=RfConstants.from_carrier(config.carrier_freq_hz, config.n_eff),
        delta=config.delta,
        p_max=config.p_max,
        energy_budget=config.energy_budget_value,
        noise_power=config.noise_power,
        gamma_min=config.gamma_min,
        slots=config.slots,
        snr_amplitude_mode=config.snr_amplitude_mode,
    )
    return scenario, layout


def reset(config: ScenarioConfig, deployment: Optional[str] = None, seed: SeedLike = 0) -> EnvState:
    """
    Start a new episode.

    Args:
        config: Scenario configuration
        deployment: "1D", "2D" or "3D"; defaults to the configured one
        seed: Integer seed, SeedSequence or Generator for the terminal placement

    Returns:
        EnvState: State at t = 0 with no energy used
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    scenario, layout = build_scenario(config, deployment, rng)
    logger.debug("Reset episode: %d antennas, %d users, %d targets",
                 layout.size, scenario.num_users, scenario.num_targets)
    return EnvState(scenario=scenario, layout=layout, settings=EnvSettings.from_config(config))


def _apply_displacements(scenario: Scenario, layout: AntennaLayout,
                         displacements: np.ndarray) -> Tuple[AntennaLayout, float]:
    """Move, clamp and re-space antennas; return the new layout and the attempted violation (m)."""
    attempted = layout.coords + displacements
    lengths = np.array([scenario.waveguides[w].length for w in layout.waveguide_ids])
    violation = float(np.sum(np.maximum(0.0, -attempted)) + np.sum(np.maximum(0.0, attempted - lengths)))
    clamped = np.clip(attempted, 0.0, lengths)

    projected = clamped.copy()
    for index, waveguide in enumerate(scenario.waveguides):
        members = layout.on_waveguide(index)
        if len(members) == 0:
            continue
        violation += spacing_shortfall(clamped[members], scenario.delta)
        projected[members] = project_spacing(clamped[members], scenario.delta, waveguide.length)

    new_layout = AntennaLayout.from_coords(scenario.waveguides, layout.waveguide_ids, projected)
    return new_layout, violation


def step(state: EnvState, action: Action) -> Tuple[EnvState, RewardBreakdown, bool]:
    """
    Advance the episode by one slot.

    Args:
        state: Current episode state
        action: Projected action

    Returns:
        Next state, reward breakdown of the slot, and whether the episode ended
    """
    if state.done:
        raise ContractError("cannot step an episode that has already finished")
    scenario = state.scenario
    displacements = np.asarray(action.displacements, dtype=np.float64).reshape(-1)
    if displacements.shape != (state.layout.size,):
        raise ContractError("one displacement per antenna is required")

    layout, phys_violation = _apply_displacements(scenario, state.layout, displacements)
    allocation = action.allocation
    slot_spend = float(np.sum(allocation.p * allocation.q))
    energy_used = state.energy_used + slot_spend
    metrics = slot_metrics(scenario, layout, allocation, cumulative_energy=energy_used)

    t = state.t + 1
    done = t >= scenario.slots or energy_used > scenario.energy_budget
    energy_overrun = max(0.0, energy_used - scenario.energy_budget) if done else 0.0

    reward = RewardBreakdown.compose(
        sum_rate=metrics.sum_rate,
        sensing_shortfall=metrics.feasibility.violations[SENSING],
        phys_violation=phys_violation,
        energy_overrun=energy_overrun,
        weights=state.settings.weights,
    )
    next_state = replace(
        state,
        layout=layout,
        t=t,
        energy_used=energy_used,
        done=done,
        last_metrics=metrics,
        last_action=action,
    )
    return next_state, reward, done


def observe(state: EnvState) -> Observation:
    """Graph and flat views of the state the agent acts on."""
    settings = state.settings
    metrics = state.last_metrics
    graph = build_graph(
        state.scenario,
        state.layout,
        settings.position_scale,
        include_context=settings.include_context,
        last_rates=None if metrics is None else metrics.rates,
        last_snrs=None if metrics is None else metrics.sensing_snrs,
    )
    last = state.last_action
    flat = flat_state(
        state.scenario,
        state.layout,
        settings.position_scale,
        last_q=None if last is None else last.q,
        last_p=None if last is None else last.p,
    )
    return Observation(graph=graph, flat=flat)


class IsacEnvironment:
    """
    Gym-style wrapper that owns its random stream and the current episode state.

    Every reset draws a fresh terminal placement from the instance's generator, so
    a given seed fixes the whole sequence of episodes.
    """

    def __init__(self, config: ScenarioConfig, deployment: Optional[str] = None, seed: SeedLike = 0):
        self.config = config
        self.deployment = normalize_kind(deployment or config.deployment)
        self._rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.state: Optional[EnvState] = None

    @property
    def limits(self) -> ActionLimits:
        if self.state is None:
            return ActionLimits(
                n_antennas=self.config.n_antennas,
                n_users=self.config.num_users,
                step_max=self.config.step_max,
                p_max=self.config.p_max,
            )
        return self.state.limits

    @property
    def action_dim(self) -> int:
        return self.limits.dim

    def reset(self) -> Observation:
        self.state = reset(self.config, self.deployment, self._rng)
        return observe(self.state)

    def step(self, raw_action) -> Tuple[Observation, float, bool, Dict[str, Any]]:
        """
        Project a raw action, advance one slot and report the outcome.

        Returns:
            Next observation, scalar reward, done flag and an info dict holding
            the projected action, reward breakdown and slot metrics
        """
        if self.state is None:
            raise ContractError("reset() must be called before step()")
        action = project_action(raw_action, self.state.limits)
        self.state, reward, done = step(self.state, action)
        info = {"action": action, "reward": reward, "metrics": self.state.last_metrics}
        return observe(self.state), reward.total, done, info
