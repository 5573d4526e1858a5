"""
Single-update actor-critic training with a clipped policy objective.

Each episode is rolled out with the current policy, one-step TD advantages are
computed from the values recorded during the rollout, and the shared network
takes exactly one optimiser step on

    L = L_clip - entropy_weight * H + value_weight * L_V
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.agent.networks import ActorCritic, build_encoder, entropy_var, log_prob_var
from app.env.graph import flat_state_dim, node_feature_dim
from app.env.isac_env import IsacEnvironment
from app.errors import DivergenceError
from app.models.config_models import TrainConfig
from app.models.data_models import (
    AMPLITUDE_AS_WRITTEN,
    AMPLITUDE_CONSISTENT,
    EpisodeRecord,
    Observation,
    Transition,
)
from app.neural import tape as ad
from app.neural.optim import Adam, clip_grad_norm, group_learning_rates
from app.neural.tape import Tape, Var
from app.physics.metrics import slot_metrics
from app.utils.units import linear_to_db

logger = logging.getLogger(__name__)

EnvFactory = Callable[[np.random.SeedSequence], IsacEnvironment]
Policy = Callable[[Observation], np.ndarray]


@dataclass
class TrainResult:
    """Outcome of one training run."""
    algorithm: str
    seed: int
    curve: List[EpisodeRecord]
    model: Optional[ActorCritic] = None
    parameter_count: int = 0
    initial_parameters: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([r.reward for r in self.curve])


@dataclass
class EvaluationSummary:
    """Greedy-policy evaluation averages over all slots of all episodes."""
    episodes: int
    avg_reward: float
    avg_rate_bps_hz: float
    avg_user_rate: float
    avg_sensing_snr_db: float
    avg_sensing_snr_db_alt: float
    max_sensing_snr_db: float
    feasible_fraction: float


def advantage_td(rewards, values, next_values, dones, gamma: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    One-step TD advantages and return targets.

    Args:
        rewards: r_t
        values: V(s_t) recorded during the rollout
        next_values: V(s_{t+1})
        dones: Episode-end flags; a finished step does not bootstrap
        gamma: Discount factor

    Returns:
        Advantages r + gamma V(s') (1 - done) - V(s) and targets r + gamma V(s') (1 - done)
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    not_done = 1.0 - np.asarray(dones, dtype=np.float64)
    targets = rewards + gamma * next_values * not_done
    return targets - values, targets


def clipped_policy_loss(log_prob_new: Var, log_prob_old, advantages, epsilon: float) -> Var:
    """
    Negative clipped surrogate, averaged over the batch.

    Args:
        log_prob_new: Log-densities under the current parameters, (T, 1)
        log_prob_old: Log-densities recorded at rollout time (constant)
        advantages: Advantage estimates (constant)
        epsilon: Ratio clip half-width in (0, 1)

    Returns:
        Var: Scalar loss
    """
    tape = log_prob_new.tape
    old = tape.const(np.asarray(log_prob_old, dtype=np.float64).reshape(-1, 1))
    adv = tape.const(np.asarray(advantages, dtype=np.float64).reshape(-1, 1))
    ratio = ad.exp(log_prob_new - old)
    unclipped = ad.mul(ratio, adv)
    clipped = ad.mul(ad.clip(ratio, 1.0 - epsilon, 1.0 + epsilon), adv)
    return ad.neg(ad.mean_all(ad.minimum(unclipped, clipped)))


def value_loss(values: Var, targets) -> Var:
    """Mean squared TD error against constant targets."""
    target = values.tape.const(np.asarray(targets, dtype=np.float64).reshape(values.shape))
    return ad.mean_all(ad.square(values - target))


def build_model(kind: str, env: IsacEnvironment, config: TrainConfig, seed) -> ActorCritic:
    scenario = env.config
    encoder = build_encoder(
        kind,
        node_dim=node_feature_dim(scenario.context_features),
        flat_dim=flat_state_dim(scenario.n_antennas, scenario.num_users, scenario.num_targets),
        hidden_dim=config.hidden_dim,
        n_layers=config.gnn_layers,
    )
    return ActorCritic(
        encoder,
        action_dim=env.action_dim,
        hidden_dim=config.hidden_dim,
        seed=seed,
        log_std_init=config.log_std_init,
        log_std_min=config.log_std_min,
        log_std_max=config.log_std_max,
    )


def episode_record(episode: int, rewards: Sequence[float], infos: Sequence[dict], energy: float) -> EpisodeRecord:
    sum_rates = [info["metrics"].sum_rate for info in infos]
    snrs = np.concatenate([info["metrics"].sensing_snrs for info in infos])
    min_snr_db = linear_to_db(float(np.min(snrs))) if len(snrs) else float("nan")
    return EpisodeRecord(
        episode=episode,
        reward=float(np.sum(rewards)),
        sum_rate=float(np.mean(sum_rates)),
        min_sensing_snr_db=min_snr_db,
        energy_used=float(energy),
    )


def rollout(env: IsacEnvironment, model: ActorCritic, rng: np.random.Generator,
            episode: int = 0) -> Tuple[List[Transition], EpisodeRecord]:
    """Play one episode with sampled actions and record its transitions."""
    observation = env.reset()
    steps = []
    infos = []
    done = False
    while not done:
        out = model.policy_forward(observation, rng)
        next_observation, reward, done, info = env.step(out.sample)
        steps.append((observation, out, reward, done))
        infos.append(info)
        observation = next_observation

    transitions = []
    for i, (obs, out, reward, done) in enumerate(steps):
        # the next state's value was recorded by the following policy call
        next_value = steps[i + 1][1].value if i + 1 < len(steps) else 0.0
        transitions.append(Transition(
            observation=obs,
            raw_action=out.sample,
            log_prob_old=out.log_prob,
            reward=reward,
            value=out.value,
            next_value=next_value,
            done=done,
        ))
    record = episode_record(episode, [t.reward for t in transitions], infos, env.state.energy_used)
    return transitions, record


def build_loss(tape: Tape, model: ActorCritic, transitions: Sequence[Transition],
               config: TrainConfig) -> Tuple[Var, Dict[str, float]]:
    """Record the combined actor-critic loss of one rollout on `tape`."""
    advantages, targets = advantage_td(
        [t.reward for t in transitions],
        [t.value for t in transitions],
        [t.next_value for t in transitions],
        [t.done for t in transitions],
        config.gamma,
    )
    mean, log_std, values = model.forward(tape, [t.observation for t in transitions])
    actions = tape.const(np.stack([t.raw_action for t in transitions]))
    log_prob = log_prob_var(actions, mean, log_std)

    policy_term = clipped_policy_loss(log_prob, [t.log_prob_old for t in transitions], advantages,
                                      config.clip_epsilon)
    entropy = entropy_var(log_std)
    critic_term = value_loss(values, targets)
    loss = policy_term - ad.scale(entropy, config.entropy_weight) + ad.scale(critic_term, config.value_weight)
    stats = {
        "policy_loss": policy_term.item(),
        "value_loss": critic_term.item(),
        "entropy": entropy.item(),
        "loss": loss.item(),
    }
    return loss, stats


def make_optimizer(model: ActorCritic, config: TrainConfig) -> Adam:
    rates = group_learning_rates(
        model.store,
        {"encoder.": config.actor_lr, "actor.": config.actor_lr, "critic.": config.critic_lr},
    )
    return Adam(model.store, rates)


def update(model: ActorCritic, optimizer: Adam, transitions: Sequence[Transition],
           config: TrainConfig, episode: int = 0) -> Dict[str, float]:
    """One clipped gradient step on a finished rollout."""
    model.store.zero_grad()
    tape = Tape(model.store)
    loss, stats = build_loss(tape, model, transitions, config)
    if not np.isfinite(loss.item()):
        raise DivergenceError(f"loss became non-finite at episode {episode}")
    tape.backward(loss)
    stats["grad_norm"] = clip_grad_norm(model.store, config.grad_clip)
    optimizer.step()
    bad = model.store.first_non_finite()
    if bad is not None:
        raise DivergenceError(f"parameter {bad!r} became non-finite at episode {episode}")
    return stats


def log_progress(label: str, record: EpisodeRecord, log_every: int):
    if log_every > 0 and (record.episode + 1) % log_every == 0:
        logger.info(
            "%s episode %d: return %.3f, sum rate %.3f bps/Hz, min sensing SNR %.2f dB",
            label, record.episode + 1, record.reward, record.sum_rate, record.min_sensing_snr_db,
        )


def train(env_factory: EnvFactory, config: TrainConfig, seed: int = 0,
          encoder: str = "hetero", algorithm: str = "hgrl") -> TrainResult:
    """
    Train an actor-critic agent for `config.episodes` episodes.

    Args:
        env_factory: Builds an environment from a seed sequence
        config: Training hyperparameters
        seed: Run seed; environment, initialisation and sampling streams are spawned from it
        encoder: "hetero", "homogeneous" or "flat"
        algorithm: Label used in logs and results

    Returns:
        TrainResult: Learning curve and trained model
    """
    env_seed, init_seed, sample_seed = np.random.SeedSequence(seed).spawn(3)
    env = env_factory(env_seed)
    model = build_model(encoder, env, config, np.random.default_rng(init_seed))
    rng = np.random.default_rng(sample_seed)
    optimizer = make_optimizer(model, config)
    initial = model.store.snapshot()
    logger.info("Training %s (seed %d, %d parameters) for %d episodes",
                algorithm, seed, model.parameter_count(), config.episodes)

    curve: List[EpisodeRecord] = []
    for episode in range(config.episodes):
        transitions, record = rollout(env, model, rng, episode)
        update(model, optimizer, transitions, config, episode)
        curve.append(record)
        log_progress(algorithm, record, config.log_every)

    return TrainResult(
        algorithm=algorithm,
        seed=seed,
        curve=curve,
        model=model,
        parameter_count=model.parameter_count(),
        initial_parameters=initial,
    )


def greedy_policy(model: ActorCritic) -> Policy:
    return lambda observation: model.policy_forward(observation, deterministic=True).sample


def evaluate(env: IsacEnvironment, policy: Policy, episodes: int) -> EvaluationSummary:
    """
    Run `episodes` episodes with a fixed policy and average slot metrics.

    The sensing SNR is also recomputed under the other amplitude convention.
    """
    scenario_mode = env.config.snr_amplitude_mode
    alt_mode = AMPLITUDE_AS_WRITTEN if scenario_mode == AMPLITUDE_CONSISTENT else AMPLITUDE_CONSISTENT
    returns, sum_rates, user_rates, snrs, alt_snrs = [], [], [], [], []
    feasible = 0
    slots = 0
    for _ in range(episodes):
        observation = env.reset()
        total = 0.0
        done = False
        while not done:
            observation, reward, done, info = env.step(policy(observation))
            metrics = info["metrics"]
            state = env.state
            alt = slot_metrics(state.scenario, state.layout, info["action"].allocation, mode=alt_mode)
            total += reward
            sum_rates.append(metrics.sum_rate)
            user_rates.append(float(np.mean(metrics.rates)))
            snrs.extend(metrics.sensing_snrs.tolist())
            alt_snrs.extend(alt.sensing_snrs.tolist())
            feasible += int(metrics.feasibility.all_satisfied)
            slots += 1
        returns.append(total)

    if slots == 0:
        nan = float("nan")
        return EvaluationSummary(0, nan, nan, nan, nan, nan, nan, nan)
    return EvaluationSummary(
        episodes=episodes,
        avg_reward=float(np.mean(returns)),
        avg_rate_bps_hz=float(np.mean(sum_rates)),
        avg_user_rate=float(np.mean(user_rates)),
        avg_sensing_snr_db=linear_to_db(float(np.mean(snrs))),
        avg_sensing_snr_db_alt=linear_to_db(float(np.mean(alt_snrs))),
        max_sensing_snr_db=linear_to_db(float(np.max(snrs))),
        feasible_fraction=feasible / slots,
    )
