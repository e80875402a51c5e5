import logging
import math

import numpy as np
import pytest

from deskrl.core.env import (
    CartPole,
    CartPoleParams,
    EnvSpec,
    GridWorld,
    NormalizedEnv,
    NormalizerStats,
    ObservationNormalizer,
    Pendulum,
    StatsMode,
    build_env,
    env_names,
    q_learning,
    value_iteration,
)
from deskrl.core.env.cartpole import cartpole_accelerations, cartpole_energy, cartpole_integrate
from deskrl.errors import (
    BoundsError,
    ConfigurationError,
    DimensionError,
    ParameterError,
    RegistryError,
    StateError,
    UnsupportedEnvironmentError,
)


def pd_action(obs: np.ndarray) -> int:
    x, x_dot, theta, theta_dot = obs
    control = 0.1 * (x + 0.2 * x_dot) + 5.0 * (theta + 0.2 * theta_dot)
    return 1 if control >= 0 else 0


def test_builtin_envs_are_registered():
    assert env_names() == ["cartpole", "gridworld", "pendulum"]


@pytest.mark.parametrize("name", ["cartpole", "gridworld", "pendulum"])
def test_same_seed_same_trajectory(name):
    envs = [build_env(name, seed=5), build_env(name, seed=5)]
    action_rng = np.random.default_rng(0)
    obs = [env.reset() for env in envs]
    np.testing.assert_array_equal(obs[0], obs[1])
    for _ in range(20):
        action = envs[0].sample_action(action_rng)
        results = [env.step(action) for env in envs]
        np.testing.assert_array_equal(results[0][0], results[1][0])
        assert results[0][1:] == results[1][1:]
        if results[0][2] or results[0][3]:
            break


@pytest.mark.parametrize("name", ["cartpole", "gridworld", "pendulum"])
def test_step_after_episode_end_fails(name):
    env = build_env(name, seed=0, max_episode_steps=3)
    with pytest.raises(StateError):
        env.step(env.sample_action(np.random.default_rng(0)))
    env.reset()
    rng = np.random.default_rng(1)
    while True:
        _, _, done, truncated = env.step(env.sample_action(rng))
        if done or truncated:
            break
    with pytest.raises(StateError):
        env.step(env.sample_action(rng))


class TestCartPole:
    def test_reset_range(self):
        env = CartPole(seed=3)
        for _ in range(20):
            assert np.all(np.abs(env.reset()) <= 0.05)

    def test_reward_is_one_until_the_pole_falls(self):
        env = CartPole(seed=0)
        env.reset()
        steps = 0
        while True:
            obs, reward, done, truncated = env.step(1)
            assert reward == 1.0
            steps += 1
            if done:
                break
        theta_limit = 12 * 2 * math.pi / 360
        assert abs(obs[0]) > 2.4 or abs(obs[2]) > theta_limit
        assert not truncated
        assert steps < 100

    def test_pd_controller_balances(self):
        env = CartPole(seed=0)
        obs = env.reset()
        for step in range(60):
            obs, _, done, _ = env.step(pd_action(obs))
            assert not done, f"pole fell at step {step}"

    def test_time_limit_truncates(self):
        env = CartPole(max_episode_steps=10, seed=0)
        obs = env.reset()
        for _ in range(9):
            obs, _, done, truncated = env.step(pd_action(obs))
            assert not done and not truncated
        _, _, done, truncated = env.step(pd_action(obs))
        assert truncated and not done

    def test_accelerations_match_mass_matrix_solve(self):
        params = CartPoleParams()
        rng = np.random.default_rng(8)
        m, l, total = params.pole_mass, params.half_length, params.total_mass
        for _ in range(50):
            state = rng.uniform(-1.0, 1.0, size=4)
            force = float(rng.uniform(-10.0, 10.0))
            _, _, theta, theta_dot = state
            mass = np.array(
                [[total, m * l * math.cos(theta)], [m * l * math.cos(theta), 4.0 / 3.0 * m * l * l]]
            )
            rhs = np.array(
                [force + m * l * theta_dot**2 * math.sin(theta), m * params.gravity * l * math.sin(theta)]
            )
            expected = np.linalg.solve(mass, rhs)
            np.testing.assert_allclose(cartpole_accelerations(state, force, params), expected, atol=1e-10)

    def test_energy_is_nearly_conserved_without_force(self):
        params = CartPoleParams()
        state = np.array([0.0, 0.0, math.pi + 0.2, 0.0])
        start = cartpole_energy(state, params)
        for _ in range(100):
            state = cartpole_integrate(state, 0.0, params)
        assert abs(cartpole_energy(state, params) - start) < 0.01 * abs(start)

    def test_invalid_action(self):
        env = CartPole(seed=0)
        env.reset()
        with pytest.raises(BoundsError):
            env.step(2)

    @pytest.mark.parametrize("action", [1.7, -0.5, [0, 1], np.array([1, 1]), [], "left", np.nan])
    def test_malformed_discrete_action(self, action):
        env = CartPole(seed=0)
        env.reset()
        with pytest.raises(BoundsError):
            env.step(action)

    @pytest.mark.parametrize("action", [1, 1.0, np.int64(1), np.array([1]), np.array(1.0)])
    def test_integral_discrete_action(self, action):
        a, b = CartPole(seed=0), CartPole(seed=0)
        a.reset()
        b.reset()
        np.testing.assert_array_equal(a.step(action)[0], b.step(1)[0])


class TestGridWorld:
    def test_walking_right_reaches_the_goal(self):
        env = GridWorld(length=5)
        env.reset()
        rewards = []
        for _ in range(4):
            obs, reward, done, _ = env.step(1)
            rewards.append(reward)
        assert rewards == [0.0, 0.0, 0.0, 1.0]
        assert done
        assert obs[4] == 1.0

    def test_left_at_start_stays(self):
        env = GridWorld()
        env.reset()
        obs, reward, done, _ = env.step(0)
        assert env.position == 0 and reward == 0.0 and not done
        assert obs[0] == 1.0

    def test_value_iteration(self):
        q = value_iteration(length=5, gamma=0.99)
        assert q[0].max() == pytest.approx(0.970299, abs=1e-9)
        assert q[3, 1] == pytest.approx(1.0)
        np.testing.assert_array_equal(q[4], [0.0, 0.0])

    def test_q_learning_matches_value_iteration(self):
        q = q_learning(GridWorld(length=5), gamma=0.99, rng=np.random.default_rng(0))
        np.testing.assert_allclose(q, value_iteration(length=5, gamma=0.99), atol=1e-3)


class TestPendulum:
    def test_upright_at_rest_costs_nothing(self):
        env = Pendulum(seed=0)
        env.reset()
        env.theta, env.theta_dot = 0.0, 0.0
        _, reward, done, _ = env.step([0.0])
        assert reward == 0.0 and not done

    def test_reward_is_bounded(self):
        env = Pendulum(seed=1)
        env.reset()
        rng = np.random.default_rng(1)
        worst = -(math.pi**2 + 0.1 * 8.0**2 + 0.001 * 2.0**2)
        for _ in range(200):
            obs, reward, done, truncated = env.step(env.sample_action(rng))
            assert worst <= reward <= 0.0
            assert obs[0] ** 2 + obs[1] ** 2 == pytest.approx(1.0)
            assert abs(obs[2]) <= 8.0
        assert truncated and not done

    def test_out_of_range_torque_is_clipped(self):
        a, b = Pendulum(seed=2), Pendulum(seed=2)
        a.reset()
        b.reset()
        np.testing.assert_array_equal(a.step([5.0])[0], b.step([2.0])[0])


class TestBuildEnv:
    def test_unsupported_binding(self):
        with pytest.raises(UnsupportedEnvironmentError, match="external binding"):
            build_env("atari")

    def test_unknown_name_suggests(self):
        with pytest.raises(RegistryError) as info:
            build_env("cartpol")
        assert info.value.suggestions == ["cartpole"]

    def test_action_type_must_match(self):
        with pytest.raises(ConfigurationError):
            build_env("pendulum", action_type="discrete")
        assert build_env("pendulum", action_type="continuous").spec.is_discrete is False

    def test_render_and_unknown_options_are_ignored(self):
        env = build_env("gridworld", render=True, length=7, colour="red")
        assert env.spec.obs_dim == 7

    def test_unknown_option_warns_once(self, caplog):
        with caplog.at_level(logging.WARNING, logger="deskrl.core.env.base"):
            for _ in range(3):
                build_env("gridworld", shade="blue")
            build_env("cartpole", shade="blue")
        warnings = [r.getMessage() for r in caplog.records if "shade" in r.getMessage()]
        assert warnings == ["env 'gridworld' ignores unknown option 'shade'", "env 'cartpole' ignores unknown option 'shade'"]

    def test_normalize_obs_wraps(self):
        env = build_env("cartpole", seed=0, normalize_obs=True)
        assert isinstance(env, NormalizedEnv)
        obs = env.reset()
        assert obs.shape == (4,)
        assert np.all(np.abs(env.step(0)[0]) <= 10.0)


def test_normalizer_tracks_running_statistics():
    rng = np.random.default_rng(6)
    data = rng.normal(loc=3.0, scale=2.0, size=(5000, 2))
    normalizer = ObservationNormalizer(2)
    for row in data:
        normalizer.update(row)
    np.testing.assert_allclose(normalizer.mean, data.mean(axis=0), atol=1e-9)
    np.testing.assert_allclose(normalizer.var, data.var(axis=0), rtol=1e-9)


def test_env_spec_validation():
    with pytest.raises(ParameterError):
        EnvSpec("bad", obs_dim=2, action_type="discrete", n_actions=1, max_episode_steps=10)
    with pytest.raises(ParameterError):
        EnvSpec("bad", obs_dim=2, action_type="continuous", action_dim=1, max_episode_steps=10)
    with pytest.raises(ParameterError):
        EnvSpec("bad", obs_dim=2, action_type="multi", max_episode_steps=10)


def wander(env, steps: int) -> None:
    rng = np.random.default_rng(0)
    for _ in range(steps):
        _, _, done, truncated = env.step(env.sample_action(rng))
        if done or truncated:
            env.reset()


class TestSharedNormalizerStats:
    def test_merge_matches_one_pass(self):
        rng = np.random.default_rng(8)
        data = rng.normal(loc=-1.0, scale=3.0, size=(900, 3))
        merged = NormalizerStats.empty(3)
        for chunk in np.array_split(data, [5, 6, 400]):
            part = NormalizerStats.empty(3)
            for row in chunk:
                part = part.add(row)
            merged = merged.merge(part)
        assert merged.count == 900
        np.testing.assert_allclose(merged.mean, data.mean(axis=0), atol=1e-9)
        np.testing.assert_allclose(merged.var, data.var(axis=0), rtol=1e-9)

    def test_deferred_mode_only_collects(self):
        normalizer = ObservationNormalizer(2, mode=StatsMode.DEFERRED)
        for value in (1.0, 2.0, 3.0):
            normalizer.update(np.full(2, value))
        assert normalizer.count == 0
        pending = normalizer.take_pending()
        assert pending.count == 3
        np.testing.assert_allclose(pending.mean, [2.0, 2.0])
        assert normalizer.take_pending().count == 0

    def test_frozen_envs_agree_regardless_of_history(self):
        source = build_env("cartpole", seed=1, normalize_obs=True)
        source.reset(seed=1)
        wander(source, 30)
        stats = source.normalizer.stats

        busy, idle = (build_env("cartpole", normalize_obs=True) for _ in range(2))
        for env in (busy, idle):
            env.normalizer.mode = StatsMode.FROZEN
            env.normalizer.load(stats)
        busy.reset(seed=3)
        wander(busy, 30)
        np.testing.assert_array_equal(busy.reset(seed=7), idle.reset(seed=7))
        assert busy.normalizer.stats is stats

    def test_load_rejects_other_width(self):
        with pytest.raises(DimensionError):
            ObservationNormalizer(4).load(NormalizerStats.empty(3))
