"""Replay buffer and the soft actor-critic update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fgsf.ndmath import PerSampleGrads, mlp_backward_per_sample, mlp_forward
from fgsf.nets import (
    GaussianPolicy,
    SQUASH_EPS,
    TwinCritic,
    critic_inputs,
    polyak_update,
    policy_rsample,
)


class NonFiniteError(RuntimeError):
    """A loss or parameter went non-finite; the offending step was not applied."""


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring of transitions stored column-wise."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros((capacity, act_dim))
        self.reward = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        obs = np.asarray(t.obs, dtype=np.float64)
        act = np.asarray(t.action, dtype=np.float64)
        nxt = np.asarray(t.next_obs, dtype=np.float64)
        if not (np.isfinite(obs).all() and np.isfinite(act).all() and np.isfinite(nxt).all()
                and math.isfinite(t.reward)):
            raise ValueError("non-finite transition rejected")
        if np.any(np.abs(act) > 1.0):
            raise ValueError("action outside [-1, 1]")
        i = self.cursor
        self.obs[i], self.action[i], self.next_obs[i] = obs, act, nxt
        self.reward[i] = t.reward
        self.done[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size < n or self.size == 0:
            raise ValueError(f"buffer holds {self.size} transitions, cannot sample {n}")
        return rng.integers(0, self.size, size=n)

    def gather(self, idx: np.ndarray) -> Batch:
        return Batch(self.obs[idx], self.action[idx], self.reward[idx], self.next_obs[idx], self.done[idx])

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        return self.gather(self.sample_indices(n, rng))


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    learning_rate: float = 3e-4
    batch_size: int = 256
    warmup_steps: int = 1000
    target_entropy: float | None = None  # None -> -action_dim
    replay_ratio: int = 1
    buffer_capacity: int = 100_000
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    init_alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if int(self.replay_ratio) != self.replay_ratio or self.replay_ratio < 1:
            raise ValueError(f"replay_ratio must be an integer >= 1, got {self.replay_ratio}")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.init_alpha <= 0:
            raise ValueError("batch_size, learning_rate and init_alpha must be positive")
        if self.warmup_steps < self.batch_size:
            raise ValueError("warmup_steps must cover at least one batch")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity smaller than batch_size")
        self.hidden = tuple(int(h) for h in self.hidden)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def reset(self) -> None:
        for m, v in zip(self.m, self.v):
            m[...] = 0.0
            v[...] = 0.0
        self.t = 0


@dataclass
class SacAgent:
    policy: GaussianPolicy
    critic: TwinCritic
    target_critic: TwinCritic
    log_alpha: np.ndarray  # shape (1,), updated in place
    actor_opt: Adam
    critic_opt: Adam
    alpha_opt: Adam
    cfg: SacConfig
    obs_dim: int
    act_dim: int

    @classmethod
    def create(cls, obs_dim: int, act_dim: int, cfg: SacConfig, rng: np.random.Generator):
        policy = GaussianPolicy.create(obs_dim, act_dim, cfg.hidden, rng, cfg.activation)
        critic = TwinCritic.create(obs_dim, act_dim, cfg.hidden, rng, cfg.activation)
        log_alpha = np.array([math.log(cfg.init_alpha)])
        return cls(
            policy, critic, critic.copy(), log_alpha,
            Adam(policy.net.params(), cfg.learning_rate),
            Adam(critic.q1.params() + critic.q2.params(), cfg.learning_rate),
            Adam([log_alpha], cfg.learning_rate),
            cfg, obs_dim, act_dim,
        )

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    @property
    def target_entropy(self) -> float:
        te = self.cfg.target_entropy
        return -float(self.act_dim) if te is None else te


@dataclass
class CriticStep:
    loss: float
    # per-sample dQ/dw for each critic; the loss gradient of sample i is
    # jacobian_i * residual_weight_i
    jacobians: tuple[PerSampleGrads, PerSampleGrads]
    residual_weights: tuple[np.ndarray, np.ndarray]
    targets: np.ndarray

    def loss_grads(self) -> tuple[PerSampleGrads, PerSampleGrads]:
        return tuple(j.scaled(w) for j, w in zip(self.jacobians, self.residual_weights))


def td_targets(critic_target: TwinCritic, policy: GaussianPolicy, alpha: float, batch: Batch,
               gamma: float, z_next: np.ndarray) -> np.ndarray:
    nxt = policy_rsample(policy, batch.next_obs, z_next)
    x = critic_inputs(batch.next_obs, nxt.action)
    q1 = mlp_forward(critic_target.q1, x)[0][:, 0]
    q2 = mlp_forward(critic_target.q2, x)[0][:, 0]
    soft_value = np.minimum(q1, q2) - alpha * nxt.log_prob
    return batch.reward + gamma * (1.0 - batch.done) * soft_value


def critic_loss_and_grads(critic: TwinCritic, batch: Batch, y: np.ndarray):
    x = critic_inputs(batch.obs, batch.action)
    n = len(batch)
    losses, jacs, weights = [], [], []
    for q in critic.nets:
        out, caches = mlp_forward(q, x)
        resid = out[:, 0] - y
        losses.append(float(np.mean(resid * resid)))
        jacs.append(mlp_backward_per_sample(q, caches, np.ones((n, 1)), input_grads=False))
        # d/dQ_i of 0.5 * (mean r1^2 + mean r2^2)
        weights.append(resid / n)
    return 0.5 * (losses[0] + losses[1]), tuple(jacs), tuple(weights)


def critic_update(critic: TwinCritic, target_critic: TwinCritic, policy: GaussianPolicy, alpha: float,
                  batch: Batch, cfg: SacConfig, rng: np.random.Generator, optimizer: Adam) -> CriticStep:
    z_next = rng.standard_normal((len(batch), policy.act_dim))
    y = td_targets(target_critic, policy, alpha, batch, cfg.gamma, z_next)
    loss, jacs, weights = critic_loss_and_grads(critic, batch, y)
    if not math.isfinite(loss):
        raise NonFiniteError(f"critic loss is {loss}")
    grads = []
    for j, w in zip(jacs, weights):
        grads += j.scaled(w).param_grads()
    optimizer.step(critic.q1.params() + critic.q2.params(), grads)
    return CriticStep(loss, jacs, weights, y)


@dataclass
class ActorStep:
    loss: float
    log_probs: np.ndarray
    output_grads: np.ndarray
    grads: PerSampleGrads = field(repr=False)


def actor_loss_and_grads(policy: GaussianPolicy, critic: TwinCritic, alpha: float, obs: np.ndarray,
                         z: np.ndarray) -> ActorStep:
    """Reparameterized actor objective mean(alpha * log pi - min Q) and its gradient."""
    n, d = z.shape
    s = policy_rsample(policy, obs, z)
    x = critic_inputs(obs, s.action)
    q1, c1 = mlp_forward(critic.q1, x)
    q2, c2 = mlp_forward(critic.q2, x)
    q1, q2 = q1[:, 0], q2[:, 0]
    use_q1 = q1 <= q2
    qmin = np.where(use_q1, q1, q2)
    loss = float(np.mean(alpha * s.log_prob - qmin))

    # dJ/d action through whichever critic attains the min
    g1 = mlp_backward_per_sample(critic.q1, c1, np.where(use_q1, -1.0 / n, 0.0)[:, None]).input_grads
    g2 = mlp_backward_per_sample(critic.q2, c2, np.where(use_q1, 0.0, -1.0 / n)[:, None]).input_grads
    dj_da = (g1 + g2)[:, -d:]

    t = s.action
    one_m_t2 = 1.0 - t * t
    dsquash = 2.0 * t * one_m_t2 / (one_m_t2 + SQUASH_EPS)  # d log pi / du through the squash term
    std = s.out.std
    dj_du = alpha / n * dsquash + dj_da * one_m_t2
    dj_dmean = dj_du
    dj_dlogstd = (-alpha / n + dj_du * std * z) * s.out.log_std_active
    out_grads = np.hstack([dj_dmean, dj_dlogstd])
    grads = mlp_backward_per_sample(policy.net, s.out.caches, out_grads, input_grads=False)
    return ActorStep(loss, s.log_prob, out_grads, grads)


def actor_update(policy: GaussianPolicy, critic: TwinCritic, alpha: float, batch: Batch, cfg: SacConfig,
                 rng: np.random.Generator, optimizer: Adam) -> ActorStep:
    z = rng.standard_normal((len(batch), policy.act_dim))
    step = actor_loss_and_grads(policy, critic, alpha, batch.obs, z)
    if not math.isfinite(step.loss):
        raise NonFiniteError(f"actor loss is {step.loss}")
    optimizer.step(policy.net.params(), step.grads.param_grads())
    return step


def alpha_update(log_alpha: np.ndarray, batch_log_probs: np.ndarray, target_entropy: float,
                 optimizer: Adam) -> np.ndarray:
    """Temperature step on loss ``-log_alpha * mean(log pi + target_entropy)``."""
    grad = -float(np.mean(batch_log_probs + target_entropy))
    optimizer.step([log_alpha], [np.array([grad])])
    return log_alpha


def sac_update(agent: SacAgent, batch: Batch, rng: np.random.Generator) -> tuple[CriticStep, ActorStep]:
    """One full update: critics, actor, temperature, then the target networks."""
    alpha = agent.alpha
    cstep = critic_update(agent.critic, agent.target_critic, agent.policy, alpha, batch, agent.cfg, rng,
                          agent.critic_opt)
    astep = actor_update(agent.policy, agent.critic, alpha, batch, agent.cfg, rng, agent.actor_opt)
    alpha_update(agent.log_alpha, astep.log_probs, agent.target_entropy, agent.alpha_opt)
    polyak_update(agent.target_critic, agent.critic, agent.cfg.tau)
    return cstep, astep
