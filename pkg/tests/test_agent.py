import numpy as np
import pytest

from conftest import numeric_grad
from deskrl.core.agent import (
    LearnStats,
    agent_names,
    build_agent,
    compose_rainbow,
    double_dqn_target,
    dqn_target,
    epsilon,
    gae,
    project_distribution,
    target_sync,
)
from deskrl.core.agent.base import EpsilonSchedule, make_rng
from deskrl.core.agent.ddpg import ddpg_actor_gradient, ddpg_critic_target
from deskrl.core.agent.dqn import quantile_huber_loss
from deskrl.core.agent.ppo import ppo_objective
from deskrl.core.agent.reinforce import discounted_returns, whiten
from deskrl.core.buffer import Batch, Transition
from deskrl.core.env import build_env
from deskrl.core.network import CategoricalSupport, NetworkSpec, registry_build
from deskrl.errors import ConfigTypeError, ConfigurationError, DimensionError, NumericalError, ParameterError, RegistryError

CARTPOLE = build_env("cartpole").spec
PENDULUM = build_env("pendulum").spec


def random_transitions(count: int, rng: np.random.Generator, spec=CARTPOLE, done_every: int = 0) -> list[Transition]:
    out = []
    for i in range(count):
        if spec.is_discrete:
            action = int(rng.integers(spec.n_actions))
        else:
            action = rng.uniform(spec.action_low, spec.action_high)
        done = bool(done_every and (i + 1) % done_every == 0)
        out.append(
            Transition(
                state=rng.normal(size=spec.obs_dim),
                action=action,
                reward=float(rng.normal()),
                next_state=rng.normal(size=spec.obs_dim),
                done=done,
            )
        )
    return out


class QTable:
    """Stand-in value network returning fixed action values."""

    def __init__(self, q: list[list[float]]):
        self.q = np.asarray(q, dtype=np.float64)

    def q_values(self, states):
        return self.q


def one_transition_batch(reward: float, done: bool, steps: int = 1) -> Batch:
    t = Transition(np.zeros(2), 0, reward, np.zeros(2), done, steps=steps)
    return Batch.from_transitions([t])


def test_every_algorithm_is_registered():
    assert agent_names() == sorted(
        ["c51", "ddpg", "double", "dqn", "dueling", "multistep", "noisy", "per", "ppo", "qr_dqn", "rainbow", "reinforce"]
    )


class TestEpsilon:
    schedule = EpsilonSchedule(1.0, 0.01, 0.2, 1000)

    @pytest.mark.parametrize("step, expected", [(0, 1.0), (100, 0.505), (200, 0.01), (5000, 0.01)])
    def test_linear_decay(self, step, expected):
        assert epsilon(self.schedule, step) == pytest.approx(expected)

    def test_invalid_ratio(self):
        with pytest.raises(ParameterError):
            EpsilonSchedule(explore_ratio=0.0)


class TestTargets:
    def test_dqn_target_bootstraps_from_max(self):
        y = dqn_target(one_transition_batch(1.0, False), None, QTable([[2.0, 5.0]]), 0.9)
        assert y[0] == pytest.approx(5.5)

    def test_terminal_target_is_reward(self):
        y = dqn_target(one_transition_batch(1.0, True), None, QTable([[2.0, 5.0]]), 0.9)
        assert y[0] == pytest.approx(1.0)

    def test_double_target_uses_online_argmax(self):
        y = double_dqn_target(one_transition_batch(1.0, False), QTable([[9.0, 0.0]]), QTable([[2.0, 5.0]]), 0.9)
        assert y[0] == pytest.approx(2.8)

    def test_multistep_discount(self):
        y = dqn_target(one_transition_batch(0.0, False, steps=3), None, QTable([[1.0, 0.0]]), 0.5)
        assert y[0] == pytest.approx(0.125)


class TestCategoricalProjection:
    support = CategoricalSupport(5, -2.0, 2.0)

    def test_mass_between_atoms_is_split(self):
        probs = np.array([[0.0, 0.0, 1.0, 0.0, 0.0]])
        out = project_distribution(probs, np.array([0.5]), np.array([False]), np.array([1.0]), self.support)
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.5, 0.5, 0.0]])

    def test_terminal_collapses_onto_reward(self):
        probs = np.full((1, 5), 0.2)
        out = project_distribution(probs, np.array([1.0]), np.array([True]), np.array([0.9]), self.support)
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.0, 1.0, 0.0]])

    def test_out_of_range_is_clamped(self):
        probs = np.full((1, 5), 0.2)
        out = project_distribution(probs, np.array([10.0]), np.array([False]), np.array([0.9]), self.support)
        np.testing.assert_allclose(out, [[0.0, 0.0, 0.0, 0.0, 1.0]])

    def test_mass_is_conserved(self, rng):
        probs = rng.dirichlet(np.ones(5), size=20)
        rewards = rng.normal(scale=2.0, size=20)
        dones = rng.random(20) < 0.3
        out = project_distribution(probs, rewards, dones, np.full(20, 0.97), self.support)
        np.testing.assert_allclose(out.sum(axis=1), 1.0)
        assert np.all(out >= 0.0)


class TestQuantileLoss:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(31)
        taus = (2.0 * np.arange(4) + 1.0) / 8.0
        for _ in range(20):
            online = rng.normal(size=(3, 4))
            target = rng.normal(size=(3, 4))
            _, grad = quantile_huber_loss(online, target, taus)
            numeric = numeric_grad(lambda: float(quantile_huber_loss(online, target, taus)[0].sum()), online)
            np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)

    def test_zero_when_quantiles_equal_a_constant_target(self):
        taus = np.array([0.25, 0.75])
        loss, grad = quantile_huber_loss(np.full((1, 2), 3.0), np.full((1, 5), 3.0), taus)
        assert loss[0] == 0.0
        assert not grad.any()


class TestGAE:
    def test_full_lambda_is_monte_carlo(self):
        adv, returns = gae([1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0], [0, 0, 1], gamma=0.9, lam=1.0)
        np.testing.assert_allclose(adv, [2.71, 1.9, 1.0])
        np.testing.assert_allclose(returns, adv)

    def test_zero_lambda_is_td_residual(self):
        values = [0.5, 1.0, 2.0, 4.0]
        adv, _ = gae([1.0, 0.0, 1.0], values, [0, 0, 0], gamma=0.5, lam=0.0)
        np.testing.assert_allclose(adv, [1.0 + 0.5 * 1.0 - 0.5, 0.5 * 2.0 - 1.0, 1.0 + 0.5 * 4.0 - 2.0])

    def test_truncation_bootstraps_but_stops_recursion(self):
        adv, _ = gae(
            [1.0, 1.0],
            [0.0, 0.0],
            [0, 0],
            gamma=1.0,
            lam=1.0,
            next_values=np.array([3.0, 5.0]),
            truncateds=[1, 0],
        )
        np.testing.assert_allclose(adv, [4.0, 6.0])

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            gae([1.0, 1.0], [0.0, 0.0], [0, 0], gamma=0.9, lam=0.9)


class TestPPOObjective:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(41)
        for _ in range(20):
            logits = rng.normal(size=(6, 3))
            values = rng.normal(size=6)
            actions = rng.integers(3, size=6)
            old = np.log(rng.dirichlet(np.ones(3), size=6)[np.arange(6), actions])
            advantages = rng.normal(size=6)
            returns = rng.normal(size=6)

            def loss():
                return ppo_objective(logits, values, actions, old, advantages, returns)[0]

            _, d_logits, d_values, _ = ppo_objective(logits, values, actions, old, advantages, returns)
            np.testing.assert_allclose(d_logits, numeric_grad(loss, logits), rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(d_values, numeric_grad(loss, values), rtol=1e-4, atol=1e-7)

    def test_on_policy_ratio_is_one(self, rng):
        logits = rng.normal(size=(4, 2))
        actions = np.array([0, 1, 1, 0])
        log_p = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        _, _, _, info = ppo_objective(logits, np.zeros(4), actions, log_p[np.arange(4), actions], np.ones(4), np.zeros(4))
        assert info["clip_fraction"] == 0.0
        assert info["approx_kl"] == pytest.approx(0.0, abs=1e-12)


class TestReinforce:
    def test_discounted_returns(self):
        np.testing.assert_allclose(discounted_returns(np.array([1.0, 1.0, 1.0]), 0.5), [1.75, 1.5, 1.0])

    def test_whiten(self):
        out = whiten(np.array([1.0, 2.0, 3.0, 4.0]))
        assert out.mean() == pytest.approx(0.0) and out.std() == pytest.approx(1.0)
        np.testing.assert_array_equal(whiten(np.array([2.0, 2.0])), [0.0, 0.0])

    def test_update_favours_the_rewarded_action(self):
        agent = build_agent({"name": "reinforce", "hidden": [8], "gamma": 1.0}, CARTPOLE, {"name": "sgd", "lr": 0.1})
        state = np.array([0.1, -0.2, 0.05, 0.3])
        episode = [
            Transition(state, 0, 1.0, state, False),
            Transition(state, 1, 0.0, state, True),
        ]

        def prob_of_zero():
            logits = agent.policy.forward(state)[0]
            return np.exp(logits[0]) / np.exp(logits).sum()

        before = prob_of_zero()
        stats = agent.process(episode, step=2)
        assert len(stats) == 1 and agent.learn_count == 1
        assert prob_of_zero() > before


def test_learn_stats_rejects_non_finite():
    with pytest.raises(NumericalError):
        LearnStats(float("nan"))
    assert LearnStats(1.0, {"q": 2.0}).as_metrics("train/") == {"train/loss": 1.0, "train/q": 2.0}


class TestTargetSync:
    def nets(self, rng):
        spec = NetworkSpec("discrete_q_network", 3, 2, hidden=[4])
        return registry_build(spec, rng), registry_build(spec, rng)

    def test_hard(self, rng):
        online, target = self.nets(rng)
        target_sync(online, target, "hard")
        for a, b in zip(online.get_params(), target.get_params()):
            np.testing.assert_array_equal(a, b)

    def test_soft(self, rng):
        online, target = self.nets(rng)
        expected = [0.25 * o + 0.75 * t for o, t in zip(online.get_params(), target.get_params())]
        target_sync(online, target, "soft", tau=0.25)
        for a, b in zip(expected, target.get_params()):
            np.testing.assert_allclose(a, b)

    def test_invalid(self, rng):
        online, target = self.nets(rng)
        with pytest.raises(ParameterError):
            target_sync(online, target, "soft", tau=0.0)
        with pytest.raises(ParameterError):
            target_sync(online, target, "polyak")


class TestBuildAgent:
    def test_unknown_agent(self):
        with pytest.raises(RegistryError):
            build_agent({"name": "dqnn"}, CARTPOLE)

    def test_action_space_mismatch(self):
        with pytest.raises(ConfigurationError):
            build_agent({"name": "ddpg"}, CARTPOLE)
        with pytest.raises(ConfigurationError):
            build_agent({"name": "dqn"}, PENDULUM)

    def test_network_kind_mismatch(self):
        with pytest.raises(ConfigurationError):
            build_agent({"name": "reinforce", "network": "discrete_q_network"}, CARTPOLE)

    def test_start_train_step_below_batch_size(self):
        with pytest.raises(ConfigurationError):
            build_agent({"name": "dqn", "batch_size": 64, "start_train_step": 10}, CARTPOLE)

    def test_bad_value_types(self):
        with pytest.raises(ConfigTypeError):
            build_agent({"name": "dqn", "gamma": "high"}, CARTPOLE)
        with pytest.raises(ConfigTypeError):
            build_agent({"name": "dqn", "gamma": 1.5}, CARTPOLE)

    def test_presets_and_null_fallback(self):
        agent = build_agent({"name": "rainbow", "n_step": None}, CARTPOLE)
        assert agent.config.n_step == 3 and agent.config.double
        assert agent.network_name == "rainbow_network"

    def test_actors_start_from_learner_weights(self):
        learner = build_agent({"name": "ppo", "hidden": [8]}, CARTPOLE, seed=4, actor_id=0)
        actor = build_agent({"name": "ppo", "hidden": [8]}, CARTPOLE, seed=4, actor_id=3)
        for a, b in zip(learner.network.get_params(), actor.network.get_params()):
            np.testing.assert_array_equal(a, b)

    def test_state_dict_round_trip(self, rng):
        a = build_agent({"name": "ddpg", "hidden": [8]}, PENDULUM, seed=1)
        b = build_agent({"name": "ddpg", "hidden": [8]}, PENDULUM, seed=2)
        b.load_state_dict(a.state_dict())
        state = rng.normal(size=3)
        np.testing.assert_array_equal(a.act(state, training=False), b.act(state, training=False))
        with pytest.raises(ConfigurationError):
            b.load_state_dict({"actor": a.actor.get_params()})


class TestRainbow:
    def test_default_composition(self):
        agent = compose_rainbow({"hidden": [8]}, CARTPOLE)
        assert agent.online.dueling and agent.online.is_noisy
        assert agent.online.value_type == "categorical"

    def test_incomplete_composition(self):
        with pytest.raises(ConfigurationError, match="noisy"):
            compose_rainbow({"network": "categorical_dueling_network"}, CARTPOLE)

    def test_degenerate_rainbow_matches_double_dueling(self):
        rainbow = build_agent({"name": "rainbow", "hidden": [16], "n_atoms": 1, "sigma_init": 0.0}, CARTPOLE, seed=5)
        plain = build_agent({"name": "double", "network": "dueling_network", "hidden": [16]}, CARTPOLE, seed=6)
        assert rainbow.online.value_type == "scalar"
        for rp, pp in zip(rainbow.online.body.parameters(), plain.online.body.parameters()):
            rp.value[...] = pp.value
        for noisy, dense in [
            (rainbow.online.value_stream, plain.online.value_stream),
            (rainbow.online.advantage_stream, plain.online.advantage_stream),
        ]:
            noisy.weight_mu.value[...] = dense.weight.value
            noisy.bias_mu.value[...] = dense.bias.value
        rainbow.sync_target()
        plain.sync_target()

        batch = Batch.from_transitions(random_transitions(32, np.random.default_rng(0), done_every=7))
        stats_r, prio_r = rainbow.learn_batch(batch)
        stats_p, prio_p = plain.learn_batch(batch)
        assert stats_r.loss == pytest.approx(stats_p.loss, abs=1e-9)
        np.testing.assert_allclose(prio_r, prio_p, atol=1e-9)
        np.testing.assert_allclose(rainbow.online.value_stream.weight_mu.value, plain.online.value_stream.weight.value, atol=1e-12)


class TestDQNAgent:
    @pytest.mark.parametrize("name", ["dqn", "double", "dueling", "multistep", "per", "noisy", "c51", "qr_dqn", "rainbow"])
    def test_repeated_updates_reduce_loss_on_a_fixed_batch(self, name):
        agent = build_agent(
            {"name": name, "hidden": [32], "n_atoms": 11, "n_quantiles": 8, "sigma_init": 0.1},
            CARTPOLE,
            {"name": "adam", "lr": 0.01},
        )
        batch = Batch.from_transitions(random_transitions(32, np.random.default_rng(1), done_every=5))
        first, _ = agent.learn_batch(batch)
        for _ in range(150):
            last, _ = agent.learn_batch(batch)
        assert last.loss < first.loss

    def test_learning_and_target_cadence(self, rng):
        agent = build_agent(
            {"name": "dqn", "hidden": [8], "batch_size": 4, "start_train_step": 6, "target_update_period": 5},
            CARTPOLE,
        )
        transitions = random_transitions(12, rng)
        for step, t in enumerate(transitions[:5], start=1):
            assert agent.process([t], step) == []
        assert len(agent.process([transitions[5]], 6)) == 1
        for step, t in enumerate(transitions[6:9], start=7):
            agent.process([t], step)
        before = agent.online.get_params()
        agent.process([transitions[9]], 10)
        for a, b in zip(before, agent.target.get_params()):
            np.testing.assert_array_equal(a, b)
        assert agent.learn_count == 5

    def test_multistep_windows_are_kept_per_source(self, rng):
        agent = build_agent({"name": "multistep", "hidden": [8]}, CARTPOLE)
        a, b = random_transitions(2, rng), random_transitions(2, rng)
        agent.process(a[:1], 1, source=0)
        agent.process(b[:1], 2, source=1)
        agent.process(a[1:], 3, source=0)
        assert len(agent.buffer) == 0
        assert len(agent.queues[0]) == 2 and len(agent.queues[1]) == 1

    def test_greedy_actions_are_deterministic(self, rng):
        agent = build_agent({"name": "noisy", "hidden": [8]}, CARTPOLE)
        state = rng.normal(size=4)
        assert len({agent.act(state, training=False) for _ in range(10)}) == 1

    def test_same_seed_same_actions(self, rng):
        states = rng.normal(size=(50, 4))
        runs = []
        for _ in range(2):
            agent = build_agent({"name": "dqn", "hidden": [8]}, CARTPOLE, run_step=100, seed=9, actor_id=2)
            runs.append([agent.act(s, step=i) for i, s in enumerate(states)])
        assert runs[0] == runs[1]

    def test_per_updates_priorities(self, rng):
        agent = build_agent({"name": "per", "hidden": [8], "batch_size": 4, "start_train_step": 4}, CARTPOLE)
        agent.process(random_transitions(8, rng), 8)
        leaves = agent.buffer.tree.leaves[:8]
        assert not np.allclose(leaves, leaves[0])


class TestPPOAgent:
    def test_learns_every_horizon(self, rng):
        agent = build_agent({"name": "ppo", "hidden": [8], "horizon": 16, "batch_size": 8, "epochs": 2}, CARTPOLE)
        transitions = []
        for t in random_transitions(16, rng, done_every=6):
            out = agent.step_policy(t.state)
            transitions.append(Transition(t.state, out.action, t.reward, t.next_state, t.done, log_prob=out.log_prob, value=out.value))
        assert agent.process(transitions[:10], 10) == []
        (stats,) = agent.process(transitions[10:], 16)
        assert agent.learn_count == 1
        assert {"policy_loss", "value_loss", "entropy", "clip_fraction", "approx_kl"} <= set(stats.extras)
        assert len(agent.rollouts[0]) == 0


class TestDDPG:
    def test_critic_target(self, rng):
        agent = build_agent({"name": "ddpg", "hidden": [8], "gamma": 0.9}, PENDULUM)
        batch = Batch.from_transitions(random_transitions(5, rng, PENDULUM, done_every=2))
        next_q = agent.target_critic.forward(batch.next_states, agent.target_actor.forward(batch.next_states))
        expected = batch.rewards + 0.9 * (1.0 - batch.dones) * next_q
        np.testing.assert_allclose(ddpg_critic_target(batch, agent.target_actor, agent.target_critic, 0.9), expected)

    def test_actor_gradient_matches_finite_differences(self, rng):
        agent = build_agent({"name": "ddpg", "hidden": [6]}, PENDULUM)
        states = rng.normal(size=(4, 3))

        def loss():
            return -float(agent.critic.forward(states, agent.actor.forward(states)).mean())

        ddpg_actor_gradient(agent.actor, agent.critic, states)
        assert all(not p.grad.any() for p in agent.critic.parameters())
        for p in agent.actor.parameters():
            np.testing.assert_allclose(p.grad, numeric_grad(loss, p.value), rtol=1e-4, atol=1e-7)

    def test_exploration_stays_in_bounds(self):
        agent = build_agent({"name": "ddpg", "hidden": [8], "noise_scale": 5.0}, PENDULUM)
        rng = make_rng(0, 1)
        for _ in range(50):
            action = agent.act(rng.normal(size=3))
            assert -2.0 <= action[0] <= 2.0

    def test_targets_trail_online_networks(self, rng):
        agent = build_agent({"name": "ddpg", "hidden": [8], "batch_size": 8, "start_train_step": 8, "tau": 0.5}, PENDULUM)
        (stats,) = agent.process(random_transitions(8, rng, PENDULUM), 8)
        assert {"critic_loss", "actor_loss"} <= set(stats.extras)
        online, target = agent.critic.get_params()[0], agent.target_critic.get_params()[0]
        assert not np.array_equal(online, target)
