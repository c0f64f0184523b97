import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fgsf.env import (
    DEFAULT_GOAL,
    Pendulum,
    PendulumState,
    ShiftingGoal,
    eval_copy,
    make_env,
    pendulum_dynamics,
    wrap_angle,
)


@given(st.floats(-1e3, 1e3, allow_nan=False))
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)


def test_wrap_angle_boundaries():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0


def test_pendulum_step_hand_computed():
    s = PendulumState(0.5, -1.0)
    nxt, r = pendulum_dynamics(s, 0.25)
    u = 0.5
    assert r == pytest.approx(-(0.25 + 0.1 * 1.0 + 0.001 * u * u), rel=1e-15)
    thdot = -1.0 + (15.0 * math.sin(0.5) + 3.0 * u) * 0.05
    assert nxt.theta_dot == pytest.approx(thdot, rel=1e-15)
    assert nxt.theta == pytest.approx(0.5 + thdot * 0.05, rel=1e-15)


def test_pendulum_action_clipped_and_speed_limited():
    nxt, r = pendulum_dynamics(PendulumState(math.pi / 2, 7.9), 5.0)
    assert nxt.theta_dot == 8.0
    assert r == pytest.approx(-((math.pi / 2) ** 2 + 0.1 * 7.9**2 + 0.001 * 4.0))
    with pytest.raises(ValueError):
        pendulum_dynamics(PendulumState(0.0, 0.0), float("nan"))


def test_upright_at_rest_is_zero_reward_fixed_point():
    nxt, r = pendulum_dynamics(PendulumState(0.0, 0.0), 0.0)
    assert r == 0.0 and nxt.theta == 0.0 and nxt.theta_dot == 0.0


def test_pendulum_horizon_and_reward_bounds():
    env = Pendulum(np.random.default_rng(0))
    obs = env.reset()
    assert obs.shape == (3,)
    worst = -(math.pi**2 + 0.1 * 64 + 0.001 * 4)
    for t in range(200):
        res = env.step(np.array([1.0]))
        assert worst <= res.reward <= 0.0
        assert res.done == (t == 199)


def test_pendulum_seeded_reset_is_deterministic():
    a = Pendulum(np.random.default_rng(5)).reset()
    b = Pendulum(np.random.default_rng(5)).reset()
    assert np.array_equal(a, b)


def test_pendulum_state_roundtrip():
    env = Pendulum(np.random.default_rng(1))
    env.reset()
    env.step(np.array([0.3]))
    saved = env.get_state()
    r1 = env.step(np.array([-0.7]))
    env.set_state(saved)
    r2 = env.step(np.array([-0.7]))
    assert np.array_equal(r1.observation, r2.observation) and r1.reward == r2.reward


def test_goal_shifts_after_configured_episode():
    env = ShiftingGoal(np.random.default_rng(0), shift_episode=3)
    goals = []
    for _ in range(5):
        obs = env.reset()
        goals.append(tuple(obs[2:]))
    g = tuple(DEFAULT_GOAL)
    assert goals == [g, g, g, (-g[0], -g[1]), (-g[0], -g[1])]


def test_shifting_goal_reward_is_post_step_distance():
    env = ShiftingGoal(np.random.default_rng(0))
    env.reset()
    env.set_state({"px": 0.0, "py": 0.0, "gx": 0.7, "gy": 0.7, "episodes": 0, "started": 1, "t": 0})
    res = env.step(np.array([1.0, 0.0]))
    assert np.allclose(res.observation[:2], [0.05, 0.0])
    assert res.reward == pytest.approx(-math.hypot(0.65, 0.7))


def test_shifting_goal_stays_in_box():
    env = ShiftingGoal(np.random.default_rng(2))
    env.reset()
    for _ in range(100):
        res = env.step(np.array([1.0, 1.0]))
    assert np.all(res.observation[:2] <= 1.0) and res.done


def test_eval_copy_is_phase_locked():
    env = ShiftingGoal(np.random.default_rng(0), shift_episode=2)
    for _ in range(3):
        env.reset()
    twin = eval_copy(env, np.random.default_rng(9))
    for _ in range(4):
        obs = twin.reset()
        assert np.allclose(obs[2:], -np.asarray(DEFAULT_GOAL))
    assert env.state.episodes_elapsed == 2


def test_make_env_rejects_unknown():
    with pytest.raises(ValueError):
        make_env("cartpole", np.random.default_rng(0))
