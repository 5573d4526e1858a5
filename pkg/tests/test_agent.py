import dataclasses

import numpy as np
import pytest
from scipy.stats import norm

from app.agent.a2c import (
    advantage_td,
    build_loss,
    build_model,
    clipped_policy_loss,
    evaluate,
    greedy_policy,
    make_optimizer,
    rollout,
    train,
    update,
    value_loss,
)
from app.agent.baselines import TRAINERS, baseline_random, uniform_policy
from app.agent.networks import gaussian_entropy, gaussian_log_prob
from app.env.isac_env import IsacEnvironment
from app.errors import ContractError, DivergenceError
from app.neural.gradcheck import check_gradients
from app.neural.tape import ParameterStore, Tape


@pytest.fixture
def env_factory(small_scenario_config):
    def factory(seed):
        return IsacEnvironment(small_scenario_config, "3D", seed=np.random.default_rng(seed))
    return factory


@pytest.fixture
def train_config(small_config):
    return dataclasses.replace(small_config.train, hidden_dim=4)


def _clipped(ratio, advantage, epsilon=0.2):
    store = ParameterStore()
    store.add("log_prob", np.log(ratio))
    tape = Tape(store)
    loss = clipped_policy_loss(tape.param("log_prob"), [0.0], [advantage], epsilon)
    grads = tape.backward(loss)
    return loss.item(), grads["log_prob"][0, 0]


def test_advantage_td_example():
    advantages, targets = advantage_td([1.0, 2.0], [0.5, 1.0], [1.0, 7.0], [False, True], 0.9)
    np.testing.assert_allclose(targets, [1.9, 2.0])
    np.testing.assert_allclose(advantages, [1.4, 1.0])


@pytest.mark.parametrize("ratio, advantage, expected", [
    (1.0, 2.0, -2.0),
    (1.5, 1.0, -1.2),
    (0.5, -1.0, 0.8),
])
def test_clipped_loss_examples(ratio, advantage, expected):
    loss, _ = _clipped(ratio, advantage)
    assert loss == pytest.approx(expected)


def test_clipped_loss_has_no_gradient_when_clipped():
    _, grad = _clipped(1.5, 1.0)
    assert grad == 0.0
    _, grad = _clipped(0.5, -1.0)
    assert grad == 0.0


def test_clipped_loss_gradient_inside_trust_region():
    # d(-ratio * A)/d(log ratio) = -ratio * A
    _, grad = _clipped(1.1, 2.0)
    assert grad == pytest.approx(-2.2)


def test_value_loss_zero_only_on_targets():
    tape = Tape()
    values = tape.const([[1.0], [2.0]])
    assert value_loss(values, [1.0, 2.0]).item() == 0.0
    assert value_loss(values, [1.0, 3.0]).item() == pytest.approx(0.5)


def test_gaussian_log_prob_matches_scipy():
    rng = np.random.default_rng(0)
    x, mean, log_std = rng.normal(size=5), rng.normal(size=5), rng.normal(scale=0.3, size=5)
    expected = np.sum(norm.logpdf(x, loc=mean, scale=np.exp(log_std)))
    assert gaussian_log_prob(x, mean, log_std) == pytest.approx(expected, rel=1e-12)


def test_entropy_increases_with_log_std():
    values = [gaussian_entropy(np.full(4, s)) for s in np.linspace(-3.0, 1.0, 9)]
    assert np.all(np.diff(values) > 0)
    assert values[0] == pytest.approx(np.sum(norm.entropy(scale=np.full(4, np.exp(-3.0)))))


@pytest.mark.parametrize("kind", ["hetero", "homogeneous", "flat"])
def test_full_loss_gradcheck(kind, small_scenario_config, train_config):
    scenario = dataclasses.replace(small_scenario_config, slots=2)
    for seed in range(20):
        env = IsacEnvironment(scenario, "3D", seed=np.random.SeedSequence(seed))
        model = build_model(kind, env, train_config, np.random.default_rng(1000 + seed))
        transitions, _ = rollout(env, model, np.random.default_rng(2000 + seed))

        def build(tape):
            loss, _ = build_loss(tape, model, transitions, train_config)
            return loss

        errors = check_gradients(build, model.store)
        assert max(errors.values()) < 1e-4, seed


def test_policy_forward_is_deterministic_in_greedy_mode(env_factory, train_config):
    env = env_factory(np.random.SeedSequence(0))
    model = build_model("hetero", env, train_config, np.random.default_rng(1))
    observation = env.reset()
    out = model.policy_forward(observation, deterministic=True)
    np.testing.assert_array_equal(out.sample, out.mean)
    assert out.sample.shape == (env.action_dim,)
    with pytest.raises(ContractError):
        model.policy_forward(observation)


def test_training_is_deterministic(env_factory, train_config):
    a = train(env_factory, train_config, seed=5)
    b = train(env_factory, train_config, seed=5)
    assert [r.reward for r in a.curve] == [r.reward for r in b.curve]
    for name, value in a.model.store.values.items():
        np.testing.assert_array_equal(value, b.model.store.values[name])


def test_zero_episodes_keeps_initial_parameters(env_factory, train_config):
    result = train(env_factory, dataclasses.replace(train_config, episodes=0), seed=0)
    assert result.curve == []
    for name, value in result.model.store.values.items():
        np.testing.assert_array_equal(value, result.initial_parameters[name])


def test_training_changes_parameters(env_factory, train_config):
    result = train(env_factory, train_config, seed=0)
    assert len(result.curve) == train_config.episodes
    changed = [not np.array_equal(v, result.initial_parameters[n]) for n, v in result.model.store.values.items()]
    assert any(changed)


def test_update_raises_on_non_finite_loss(env_factory, train_config):
    env = env_factory(np.random.SeedSequence(0))
    model = build_model("hetero", env, train_config, np.random.default_rng(1))
    optimizer = make_optimizer(model, train_config)
    transitions, _ = rollout(env, model, np.random.default_rng(2))
    model.store.values["critic.dense1.b"] = np.full_like(model.store.values["critic.dense1.b"], np.nan)
    with pytest.raises(DivergenceError):
        update(model, optimizer, transitions, train_config)


def test_random_baseline_has_no_model(env_factory, train_config):
    result = baseline_random(env_factory, train_config, seed=3)
    assert result.model is None
    assert result.parameter_count == 0
    assert len(result.curve) == train_config.episodes
    assert all(np.isfinite(r.reward) for r in result.curve)


def test_every_trainer_produces_a_curve(env_factory, train_config):
    counts = {}
    for name, trainer in TRAINERS.items():
        result = trainer(env_factory, train_config, seed=0)
        assert result.algorithm == name
        assert len(result.curve) == train_config.episodes
        counts[name] = result.parameter_count
    assert counts["random"] == 0
    assert counts["hgrl"] > counts["grl"] > 0
    assert counts["mlp_a2c"] > 0


def test_evaluate_summary(env_factory, train_config):
    env = env_factory(np.random.SeedSequence(9))
    summary = evaluate(env, uniform_policy(env.action_dim, np.random.default_rng(0)), episodes=2)
    assert summary.episodes == 2
    assert 0.0 <= summary.feasible_fraction <= 1.0
    assert summary.avg_rate_bps_hz >= 0.0
    assert summary.max_sensing_snr_db >= summary.avg_sensing_snr_db


def test_greedy_evaluation_repeats(env_factory, train_config):
    result = train(env_factory, train_config, seed=1)
    first = evaluate(env_factory(np.random.SeedSequence(11)), greedy_policy(result.model), 2)
    second = evaluate(env_factory(np.random.SeedSequence(11)), greedy_policy(result.model), 2)
    assert first == second


def test_forward_needs_observations(env_factory, train_config):
    env = env_factory(np.random.SeedSequence(0))
    model = build_model("flat", env, train_config, np.random.default_rng(1))
    with pytest.raises(ContractError):
        model.forward(Tape(model.store), [])
