"""Squashed-Gaussian policy, twin Q-critics and soft target tracking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fgsf.ndmath import LayerCache, Mlp, ShapeError, as_matrix, mlp_forward

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
SQUASH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def init_mlp(dims, rng: np.random.Generator, activation: str = "tanh") -> Mlp:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError("an MLP needs at least input and output widths")
    if any(d <= 0 for d in dims):
        raise ValueError(f"zero-width layer in {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, activation)


@dataclass
class GaussianPolicy:
    """Trunk plus mean and log-std heads.

    The two linear heads are stacked into the final layer of ``net``: output
    columns ``[:act_dim]`` are the mean, ``[act_dim:]`` the raw log-std.
    """

    net: Mlp
    act_dim: int

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden, rng, activation: str = "tanh"):
        return cls(init_mlp([obs_dim, *hidden, 2 * act_dim], rng, activation), act_dim)

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.net.copy(), self.act_dim)


@dataclass
class PolicyOutput:
    mean: np.ndarray
    raw_log_std: np.ndarray
    log_std: np.ndarray
    caches: list[LayerCache]

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    @property
    def log_std_active(self) -> np.ndarray:
        """1 where the clamp passes gradients through, 0 where it is saturated."""
        return ((self.raw_log_std >= LOG_STD_MIN) & (self.raw_log_std <= LOG_STD_MAX)).astype(np.float64)


def policy_forward(policy: GaussianPolicy, obs) -> PolicyOutput:
    out, caches = mlp_forward(policy.net, obs)
    d = policy.act_dim
    raw = out[:, d:]
    return PolicyOutput(out[:, :d], raw, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), caches)


def squash_log_prob(u: np.ndarray, z: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """log pi(tanh(u)) for u = mean + std * z, summed over action dims."""
    gauss = -0.5 * z * z - log_std - HALF_LOG_2PI
    t = np.tanh(u)
    return np.sum(gauss - np.log(1.0 - t * t + SQUASH_EPS), axis=1)


@dataclass
class PolicySample:
    action: np.ndarray
    log_prob: np.ndarray
    u: np.ndarray
    z: np.ndarray
    out: PolicyOutput


def policy_rsample(policy: GaussianPolicy, obs, z: np.ndarray) -> PolicySample:
    """Reparameterized sample with the standard-normal draw ``z`` pinned."""
    out = policy_forward(policy, obs)
    u = out.mean + out.std * z
    return PolicySample(np.tanh(u), squash_log_prob(u, z, out.log_std), u, z, out)


def policy_sample(policy: GaussianPolicy, obs, rng: np.random.Generator):
    obs = as_matrix(obs, "obs")
    z = rng.standard_normal((obs.shape[0], policy.act_dim))
    s = policy_rsample(policy, obs, z)
    return s.action, s.log_prob


def policy_mean_action(policy: GaussianPolicy, obs) -> np.ndarray:
    return np.tanh(policy_forward(policy, obs).mean)


@dataclass
class TwinCritic:
    q1: Mlp
    q2: Mlp

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, hidden, rng, activation: str = "tanh"):
        dims = [obs_dim + act_dim, *hidden, 1]
        return cls(init_mlp(dims, rng, activation), init_mlp(dims, rng, activation))

    def copy(self) -> "TwinCritic":
        return TwinCritic(self.q1.copy(), self.q2.copy())

    @property
    def nets(self) -> tuple[Mlp, Mlp]:
        return (self.q1, self.q2)


def critic_inputs(obs, action) -> np.ndarray:
    obs = as_matrix(obs, "obs")
    action = as_matrix(action, "action")
    if obs.shape[0] != action.shape[0]:
        raise ShapeError(f"{obs.shape[0]} observations but {action.shape[0]} actions")
    return np.hstack([obs, action])


def q_forward(critic: TwinCritic, obs, action) -> tuple[np.ndarray, np.ndarray]:
    x = critic_inputs(obs, action)
    return mlp_forward(critic.q1, x)[0][:, 0], mlp_forward(critic.q2, x)[0][:, 0]


def polyak_update(target, online, tau: float):
    """In-place ``target <- tau * online + (1 - tau) * target``; returns ``target``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    t_nets = target.nets if isinstance(target, TwinCritic) else (target,)
    o_nets = online.nets if isinstance(online, TwinCritic) else (online,)
    for tn, on in zip(t_nets, o_nets):
        if tn.dims != on.dims:
            raise ShapeError(f"target dims {tn.dims} != online dims {on.dims}")
        for tp, op in zip(tn.params(), on.params()):
            tp[...] = tau * op + (1.0 - tau) * tp
    return target
