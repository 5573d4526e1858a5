"""Reference agents: random configuration, flat-state A2C and homogeneous-graph RL."""
from typing import List

import numpy as np

from app.agent.a2c import EnvFactory, Policy, TrainResult, episode_record, log_progress, train
from app.env.isac_env import IsacEnvironment
from app.models.config_models import TrainConfig
from app.models.data_models import EpisodeRecord


def uniform_policy(action_dim: int, rng: np.random.Generator, scale: float = 1.0) -> Policy:
    """Raw actions drawn uniformly from [-scale, scale] per component."""
    return lambda observation: rng.uniform(-scale, scale, size=action_dim)


def random_episode(env: IsacEnvironment, policy: Policy, episode: int) -> EpisodeRecord:
    observation = env.reset()
    rewards, infos = [], []
    done = False
    while not done:
        observation, reward, done, info = env.step(policy(observation))
        rewards.append(reward)
        infos.append(info)
    return episode_record(episode, rewards, infos, env.state.energy_used)


def baseline_random(env_factory: EnvFactory, config: TrainConfig, seed: int = 0) -> TrainResult:
    """
    Random configuration: uniform raw actions through the same projection, no learning.

    Uses the same seed split as `train`, so the environment sees the same
    terminal placements as a learning run with that seed.
    """
    env_seed, _, sample_seed = np.random.SeedSequence(seed).spawn(3)
    env = env_factory(env_seed)
    policy = uniform_policy(env.action_dim, np.random.default_rng(sample_seed), config.random_action_scale)
    curve: List[EpisodeRecord] = []
    for episode in range(config.episodes):
        record = random_episode(env, policy, episode)
        curve.append(record)
        log_progress("random", record, config.log_every)
    return TrainResult(algorithm="random", seed=seed, curve=curve)


def baseline_mlp_a2c(env_factory: EnvFactory, config: TrainConfig, seed: int = 0) -> TrainResult:
    """Actor-critic over the flattened state vector instead of a graph."""
    return train(env_factory, config, seed, encoder="flat", algorithm="mlp_a2c")


def baseline_grl(env_factory: EnvFactory, config: TrainConfig, seed: int = 0) -> TrainResult:
    """Actor-critic over the graph with a single merged relation type."""
    return train(env_factory, config, seed, encoder="homogeneous", algorithm="grl")


def train_hgrl(env_factory: EnvFactory, config: TrainConfig, seed: int = 0) -> TrainResult:
    return train(env_factory, config, seed, encoder="hetero", algorithm="hgrl")


TRAINERS = {
    "hgrl": train_hgrl,
    "grl": baseline_grl,
    "mlp_a2c": baseline_mlp_a2c,
    "random": baseline_random,
}

ENCODER_FOR = {"hgrl": "hetero", "grl": "homogeneous", "mlp_a2c": "flat"}
