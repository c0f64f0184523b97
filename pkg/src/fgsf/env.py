"""Closed-form continuous-control tasks.

``pendulum`` is the usual torque-limited swing-up. ``shifting_goal`` is a 2-D
point mass that has to reach a goal; after ``shift_episode`` episodes the goal
jumps to the opposite quadrant, so everything learned early becomes misleading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRAVITY = 10.0
MASS = 1.0
LENGTH = 1.0
DT = 0.05
MAX_TORQUE = 2.0
MAX_SPEED = 8.0
PENDULUM_HORIZON = 200

GOAL_STEP = 0.05
GOAL_HORIZON = 100
DEFAULT_GOAL = (0.7, 0.7)


def wrap_angle(theta: float) -> float:
    """Map to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool


@dataclass
class PendulumState:
    theta: float
    theta_dot: float


def pendulum_observation(state: PendulumState) -> np.ndarray:
    return np.array([math.cos(state.theta), math.sin(state.theta), state.theta_dot])


def pendulum_dynamics(state: PendulumState, action: float) -> tuple[PendulumState, float]:
    """One semi-implicit Euler step; the reward is charged on the pre-step state."""
    if not math.isfinite(action):
        raise ValueError(f"non-finite action {action!r}")
    u = MAX_TORQUE * min(max(action, -1.0), 1.0)
    th, thdot = state.theta, state.theta_dot
    reward = -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * u**2)
    thddot = 3.0 * GRAVITY / (2.0 * LENGTH) * math.sin(th) + 3.0 * u / (MASS * LENGTH**2)
    thdot = min(max(thdot + thddot * DT, -MAX_SPEED), MAX_SPEED)
    th = wrap_angle(th + thdot * DT)
    return PendulumState(th, thdot), reward


class Pendulum:
    name = "pendulum"
    obs_dim = 3
    act_dim = 1
    horizon = PENDULUM_HORIZON

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.state = PendulumState(0.0, 0.0)
        self.t = 0

    def reset(self) -> np.ndarray:
        self.state = PendulumState(
            float(self.rng.uniform(-math.pi, math.pi)), float(self.rng.uniform(-1.0, 1.0))
        )
        self.t = 0
        return pendulum_observation(self.state)

    def step(self, action) -> StepResult:
        a = float(np.asarray(action, dtype=np.float64).reshape(-1)[0])
        self.state, reward = pendulum_dynamics(self.state, a)
        self.t += 1
        return StepResult(pendulum_observation(self.state), reward, self.t >= self.horizon)

    def get_state(self) -> dict[str, float]:
        return {"theta": self.state.theta, "theta_dot": self.state.theta_dot, "t": self.t}

    def set_state(self, d: dict[str, float]) -> None:
        self.state = PendulumState(float(d["theta"]), float(d["theta_dot"]))
        self.t = int(d["t"])


@dataclass
class ShiftingGoalState:
    position: np.ndarray
    goal: np.ndarray
    episodes_elapsed: int


def shifting_goal_dynamics(state: ShiftingGoalState, action) -> tuple[ShiftingGoalState, float]:
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
    pos = np.clip(state.position + GOAL_STEP * a, -1.0, 1.0)
    reward = -float(np.linalg.norm(pos - state.goal))
    return ShiftingGoalState(pos, state.goal, state.episodes_elapsed), reward


class ShiftingGoal:
    """Point mass in [-1, 1]^2; the goal is reflected through the origin once."""

    name = "shifting_goal"
    obs_dim = 4
    act_dim = 2
    horizon = GOAL_HORIZON

    def __init__(self, rng: np.random.Generator, shift_episode: int = 50, goal=DEFAULT_GOAL):
        self.rng = rng
        self.shift_episode = shift_episode
        self.base_goal = np.asarray(goal, dtype=np.float64)
        self.frozen_phase = False
        self.state = ShiftingGoalState(np.zeros(2), self.base_goal.copy(), 0)
        self._started = False
        self.t = 0

    def goal_for(self, episode: int) -> np.ndarray:
        return -self.base_goal if episode >= self.shift_episode else self.base_goal.copy()

    def observation(self) -> np.ndarray:
        return np.concatenate([self.state.position, self.state.goal])

    def reset(self) -> np.ndarray:
        episodes = self.state.episodes_elapsed
        if self._started and not self.frozen_phase:
            episodes += 1
        self._started = True
        pos = self.rng.uniform(-1.0, 1.0, size=2)
        self.state = ShiftingGoalState(pos, self.goal_for(episodes), episodes)
        self.t = 0
        return self.observation()

    def step(self, action) -> StepResult:
        self.state, reward = shifting_goal_dynamics(self.state, action)
        self.t += 1
        return StepResult(self.observation(), reward, self.t >= self.horizon)

    def get_state(self) -> dict[str, float]:
        p, g = self.state.position, self.state.goal
        return {
            "px": p[0], "py": p[1], "gx": g[0], "gy": g[1],
            "episodes": self.state.episodes_elapsed, "started": int(self._started), "t": self.t,
        }

    def set_state(self, d: dict[str, float]) -> None:
        self.state = ShiftingGoalState(
            np.array([d["px"], d["py"]]), np.array([d["gx"], d["gy"]]), int(d["episodes"])
        )
        self._started = bool(d["started"])
        self.t = int(d["t"])


ENVIRONMENTS = {"pendulum": Pendulum, "shifting_goal": ShiftingGoal}


def make_env(name: str, rng: np.random.Generator):
    try:
        return ENVIRONMENTS[name](rng)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


def eval_copy(env, rng: np.random.Generator):
    """Fresh instance in the same task phase whose episodes do not advance it."""
    twin = make_env(env.name, rng)
    if isinstance(env, ShiftingGoal):
        twin.shift_episode = env.shift_episode
        twin.base_goal = env.base_goal.copy()
        twin.state.episodes_elapsed = env.state.episodes_elapsed
        twin.frozen_phase = True
    return twin
