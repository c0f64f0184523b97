"""The training loop: one environment step, ``replay_ratio`` SAC updates, and
whatever weight intervention the run's method schedules."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from fgsf import fim
from fgsf.env import eval_copy, make_env
from fgsf.harness.config import RunConfig
from fgsf.metrics import WeightSnapshot, dormant_fraction, weight_update_kl
from fgsf.nets import critic_inputs, policy_mean_action, policy_sample
from fgsf.sac import Batch, CriticStep, NonFiniteError, ReplayBuffer, SacAgent, Transition, sac_update

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "step", "episode_return", "tr_f_actor", "tr_f_critic", "dormant_actor", "dormant_critic",
    "kl_actor", "kl_critic", "alpha", "wall_ms",
)

# order is part of the seeding contract: never reorder, only append
STREAMS = ("init", "env", "explore", "replay", "update", "fim", "noise", "reset", "trace", "probe", "eval")


class RunAborted(RuntimeError):
    """Training hit a non-finite state; ``row`` holds the diagnostic log row."""

    def __init__(self, message: str, row: dict):
        super().__init__(message)
        self.row = row


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent named generators derived from one master seed."""
    return {
        name: np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(i,))))
        for i, name in enumerate(STREAMS)
    }


@dataclass
class LoopState:
    config: RunConfig
    env: object
    agent: SacAgent
    buffer: ReplayBuffer
    rngs: dict[str, np.random.Generator]
    obs: np.ndarray
    env_steps: int = 0
    grad_steps: int = 0
    episodes: int = 0
    episode_return: float = 0.0
    pending_returns: list[float] = field(default_factory=list)
    eval_records: list[tuple[int, int, float]] = field(default_factory=list)
    snapshots: dict[str, WeightSnapshot] = field(default_factory=dict)
    last_batch: Batch | None = None
    last_critic: CriticStep | None = None
    elapsed_ms: float = 0.0
    clock_start: float = field(default_factory=time.perf_counter)

    @property
    def done(self) -> bool:
        return self.env_steps >= self.config.total_env_steps

    def wall_ms(self) -> float:
        if not self.config.record_wall_time:
            return 0.0
        return self.elapsed_ms + (time.perf_counter() - self.clock_start) * 1e3


def init_state(config: RunConfig) -> LoopState:
    rngs = make_streams(config.seed)
    env = make_env(config.env, rngs["env"])
    agent = SacAgent.create(env.obs_dim, env.act_dim, config.sac, rngs["init"])
    buffer = ReplayBuffer(config.sac.buffer_capacity, env.obs_dim, env.act_dim)
    state = LoopState(config, env, agent, buffer, rngs, env.reset())
    take_snapshots(state)
    return state


def take_snapshots(state: LoopState) -> None:
    a = state.agent
    state.snapshots = {
        "actor": WeightSnapshot.of(a.policy.net, state.grad_steps),
        "critic": WeightSnapshot.of(a.critic.nets, state.grad_steps),
    }


def select_action(state: LoopState) -> np.ndarray:
    if state.env_steps < state.config.sac.warmup_steps:
        return state.rngs["explore"].uniform(-1.0, 1.0, size=state.agent.act_dim)
    action, _ = policy_sample(state.agent.policy, state.obs[None, :], state.rngs["explore"])
    return action[0]


def evaluate(state: LoopState) -> list[float]:
    """Deterministic-mean episodes on a phase-locked copy of the training env."""
    env = eval_copy(state.env, state.rngs["eval"])
    returns = []
    for _ in range(state.config.eval_episodes):
        obs, total, done = env.reset(), 0.0, False
        while not done:
            res = env.step(policy_mean_action(state.agent.policy, obs[None, :])[0])
            obs, total, done = res.observation, total + res.reward, res.done
        returns.append(total)
    return returns


def _scrub_into(net, new_net) -> None:
    fim.assign_params(net, new_net)


def apply_method(state: LoopState, cstep: CriticStep, batch: Batch) -> None:
    """Post-update intervention for gradient step ``state.grad_steps``."""
    cfg = state.config
    scrub = cfg.scrub
    agent = state.agent
    t = state.grad_steps
    if cfg.method == "reset":
        if t % cfg.reset_interval == 0:
            fim.periodic_reset(agent, state.rngs["reset"])
        return
    if cfg.method not in ("fgsf", "gauss") or t % scrub.frequency != 0:
        return
    targets = []
    if scrub.scrubs_actor:
        targets.append(("actor", agent.policy.net, None))
    if scrub.scrubs_critic:
        targets += [("critic", q, jac) for q, jac in zip(agent.critic.nets, cstep.jacobians)]
    for kind, net, jac in targets:
        if cfg.method == "gauss":
            _scrub_into(net, fim.gaussian_scrub(net, state.rngs["noise"], scrub.gauss_scale))
            continue
        if kind == "actor":
            scores = fim.policy_scores(agent.policy, batch.obs, state.rngs["fim"])
        else:
            scores = fim.critic_scores_from_jacobians(jac, state.rngs["fim"])
        est = fim.estimate(scores, scrub.estimator)
        try:
            _scrub_into(net, fim.fgsf_scrub(net, est, scrub, state.rngs["noise"]))
        except fim.ScrubError as exc:
            log.warning("step %d: %s scrub skipped: %s", t, kind, exc)


def trace_values(state: LoopState, batch: Batch) -> tuple[float, float]:
    agent, est = state.agent, state.config.scrub.estimator
    rng = state.rngs["trace"]
    tr_actor = fim.fim_trace(fim.estimate(fim.policy_scores(agent.policy, batch.obs, rng), est))
    x = critic_inputs(batch.obs, batch.action)
    tr_critic = sum(fim.fim_trace(fim.estimate(fim.critic_scores(q, x, rng), est)) for q in agent.critic.nets)
    return tr_actor, tr_critic


def log_row(state: LoopState) -> dict:
    agent = state.agent
    batch = state.last_batch
    tr_actor, tr_critic = trace_values(state, batch)
    probe_n = min(state.config.dormant.probe_batch_size, len(state.buffer))
    probe = state.buffer.sample(probe_n, state.rngs["probe"])
    dormant_actor = dormant_fraction(agent.policy.net, probe.obs, state.config.dormant)
    dormant_critic = dormant_fraction(agent.critic.nets, critic_inputs(probe.obs, probe.action),
                                      state.config.dormant)
    prev = state.snapshots
    take_snapshots(state)
    kl_actor = weight_update_kl(prev["actor"], state.snapshots["actor"])
    kl_critic = weight_update_kl(prev["critic"], state.snapshots["critic"])
    ret = float(np.mean(state.pending_returns)) if state.pending_returns else math.nan
    state.pending_returns = []
    return {
        "step": state.grad_steps, "episode_return": ret, "tr_f_actor": tr_actor, "tr_f_critic": tr_critic,
        "dormant_actor": dormant_actor, "dormant_critic": dormant_critic,
        "kl_actor": kl_actor, "kl_critic": kl_critic, "alpha": agent.alpha, "wall_ms": state.wall_ms(),
    }


def diagnostic_row(state: LoopState, step: int) -> dict:
    """Row for the failed gradient step ``step``: what is known, nan elsewhere."""
    row = dict.fromkeys(CSV_COLUMNS, math.nan)
    row.update(step=step, alpha=state.agent.alpha, wall_ms=state.wall_ms())
    return row


def train_iteration(state: LoopState) -> list[dict]:
    """Advance one environment step; return the log rows it produced."""
    cfg = state.config
    action = select_action(state)
    res = state.env.step(action)
    # time-limit ends are truncations, never terminal states
    state.buffer.push(Transition(state.obs, action, res.reward, res.observation, False))
    state.env_steps += 1
    state.episode_return += res.reward
    state.obs = res.observation
    if res.done:
        state.pending_returns.append(state.episode_return)
        state.episodes += 1
        state.episode_return = 0.0
        state.obs = state.env.reset()

    rows = []
    if state.env_steps > cfg.sac.warmup_steps:
        for _ in range(cfg.sac.replay_ratio):
            batch = state.buffer.sample(cfg.sac.batch_size, state.rngs["replay"])
            try:
                cstep, _ = sac_update(state.agent, batch, state.rngs["update"])
            except NonFiniteError as exc:
                failed = state.grad_steps + 1
                raise RunAborted(f"gradient step {failed}: {exc}", diagnostic_row(state, failed)) from exc
            state.grad_steps += 1
            state.last_batch, state.last_critic = batch, cstep
            apply_method(state, cstep, batch)
            if state.grad_steps % cfg.log_every == 0:
                row = log_row(state)
                if not all(math.isfinite(v) for k, v in row.items() if k != "episode_return"):
                    raise RunAborted(f"gradient step {state.grad_steps}: non-finite log row", row)
                rows.append(row)

    if state.env_steps % cfg.eval_every == 0:
        for i, r in enumerate(evaluate(state)):
            state.eval_records.append((state.env_steps, i, r))
    return rows
