"""Empirical Fisher estimation and Fisher-shaped weight scrubbing.

A score batch is a :class:`~fgsf.ndmath.PerSampleGrads`: per layer, the
augmented inputs ``a_i`` and backprop signals ``g_i`` whose outer products are
the per-sample scores. Parameters of a layer are ordered row-major over the
augmented ``(fan_in + 1, fan_out)`` matrix ``[W; b]``; with that ordering the
score of sample ``i`` is ``kron(a_i, g_i)`` and the Kronecker factors come out
as ``A (x) G``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from fgsf.ndmath import Mlp, PerSampleGrads, matmul, matmul_tn, mlp_backward_per_sample, mlp_forward
from fgsf.nets import GaussianPolicy, init_mlp, policy_forward

ScoreBatch = PerSampleGrads

DENSE_MAX_PARAMS = 2000
EIG_TOL = 1e-10
SYM_TOL = 1e-10


class FimError(ValueError):
    pass


class ScrubError(RuntimeError):
    """Scrubbing produced non-finite weights; the network was left untouched."""


# ---------------------------------------------------------------------------
# scores


def gaussian_scores(net: Mlp, inputs, targets) -> ScoreBatch:
    """Scores of log N(targets; net(inputs), I)."""
    out, caches = mlp_forward(net, inputs)
    return mlp_backward_per_sample(net, caches, np.asarray(targets, dtype=np.float64) - out, input_grads=False)


def critic_scores(qnet: Mlp, inputs, rng: np.random.Generator) -> ScoreBatch:
    """Monte-Carlo scores under a unit-variance Gaussian centred on Q(s, a)."""
    out, caches = mlp_forward(qnet, inputs)
    r = rng.standard_normal(out.shape)
    return mlp_backward_per_sample(qnet, caches, r, input_grads=False)


def critic_scores_from_jacobians(jac: PerSampleGrads, rng: np.random.Generator) -> ScoreBatch:
    """Same distribution as :func:`critic_scores`, reusing cached dQ/dw."""
    return jac.scaled(rng.standard_normal(jac.n_samples))


def policy_score_output_grads(policy: GaussianPolicy, obs, rng: np.random.Generator):
    """d log pi(a|s) / d (mean, raw log-std) at fresh actions a ~ pi(.|s).

    The action is held fixed, so the tanh correction does not depend on the
    weights and only the Gaussian part of the density contributes.
    """
    out = policy_forward(policy, obs)
    z = rng.standard_normal(out.mean.shape)
    d_mean = z / out.std  # (u - mean) / std^2
    d_logstd = (z * z - 1.0) * out.log_std_active
    return out, np.hstack([d_mean, d_logstd])


def policy_scores(policy: GaussianPolicy, obs, rng: np.random.Generator) -> ScoreBatch:
    out, dout = policy_score_output_grads(policy, obs, rng)
    return mlp_backward_per_sample(policy.net, out.caches, dout, input_grads=False)


def per_sample_scores(net, batch, likelihood_model: str, rng: np.random.Generator) -> ScoreBatch:
    """Score batch for ``likelihood_model`` in {"actor", "critic"}."""
    if likelihood_model == "actor":
        return policy_scores(net, batch.obs, rng)
    if likelihood_model == "critic":
        return critic_scores(net, np.hstack([batch.obs, batch.action]), rng)
    raise ValueError(f"unknown likelihood model {likelihood_model!r}")


# ---------------------------------------------------------------------------
# estimates


@dataclass
class DenseFim:
    matrix: np.ndarray
    layer_shapes: list[tuple[int, int]]


@dataclass
class DiagonalFim:
    layers: list[np.ndarray]  # each (fan_in + 1, fan_out)


@dataclass
class KfacFim:
    a_factors: list[np.ndarray]
    g_factors: list[np.ndarray]
    _eig: list = field(default_factory=list, repr=False, compare=False)

    def eigen(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        if not self._eig:
            self._eig = [(*_sym_eig(a), *_sym_eig(g)) for a, g in zip(self.a_factors, self.g_factors)]
        return self._eig


@dataclass
class EkfacFim:
    u_a: list[np.ndarray]
    u_g: list[np.ndarray]
    eigenvalues: list[np.ndarray]  # corrected, each (fan_in + 1, fan_out)


FimEstimate = Union[DenseFim, DiagonalFim, KfacFim, EkfacFim]


def _layer_shapes(scores: ScoreBatch) -> list[tuple[int, int]]:
    return [(lg.inputs.shape[1], lg.backgrads.shape[1]) for lg in scores.layers]


def empirical_fim_full(scores: ScoreBatch) -> DenseFim:
    shapes = _layer_shapes(scores)
    n_params = sum(p * q for p, q in shapes)
    if n_params > DENSE_MAX_PARAMS:
        raise FimError(f"dense oracle limited to {DENSE_MAX_PARAMS} parameters, got {n_params}")
    s = scores.flat()
    return DenseFim(matmul_tn(s, s) / s.shape[0], shapes)


def empirical_fim_diag(scores: ScoreBatch) -> DiagonalFim:
    n = scores.n_samples
    return DiagonalFim([matmul_tn(lg.inputs**2, lg.backgrads**2) / n for lg in scores.layers])


def kfac_estimate(scores: ScoreBatch) -> KfacFim:
    a_f, g_f = [], []
    for lg in scores.layers:
        if lg.inputs.shape[0] != lg.backgrads.shape[0]:
            raise FimError("layer inputs and backgrads have different sample counts")
        n = lg.inputs.shape[0]
        a_f.append(matmul_tn(lg.inputs, lg.inputs) / n)
        g_f.append(matmul_tn(lg.backgrads, lg.backgrads) / n)
    return KfacFim(a_f, g_f)


def _sym_eig(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scale = max(1.0, float(np.max(np.abs(m))) if m.size else 1.0)
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * scale:
        raise FimError("eigendecomposition requires a symmetric matrix")
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vals, vecs


def ekfac_estimate(kfac: KfacFim, scores: ScoreBatch) -> EkfacFim:
    u_a, u_g, lam = [], [], []
    for (_, ua, _, ug), lg in zip(kfac.eigen(), scores.layers):
        n = lg.inputs.shape[0]
        ra = matmul(lg.inputs, ua) ** 2
        rg = matmul(lg.backgrads, ug) ** 2
        u_a.append(ua)
        u_g.append(ug)
        lam.append(matmul_tn(ra, rg) / n)
    return EkfacFim(u_a, u_g, lam)


def estimate(scores: ScoreBatch, estimator: str) -> FimEstimate:
    if estimator in ("diag", "diagonal"):
        return empirical_fim_diag(scores)
    if estimator == "kfac":
        return kfac_estimate(scores)
    if estimator == "ekfac":
        return ekfac_estimate(kfac_estimate(scores), scores)
    if estimator == "dense":
        return empirical_fim_full(scores)
    raise ValueError(f"unknown estimator {estimator!r}")


def fim_trace(est: FimEstimate) -> float:
    if isinstance(est, DenseFim):
        return float(np.trace(est.matrix))
    if isinstance(est, DiagonalFim):
        return float(sum(d.sum() for d in est.layers))
    if isinstance(est, KfacFim):
        return float(sum(np.trace(a) * np.trace(g) for a, g in zip(est.a_factors, est.g_factors)))
    if isinstance(est, EkfacFim):
        return float(sum(lam.sum() for lam in est.eigenvalues))
    raise TypeError(f"not a Fisher estimate: {type(est).__name__}")


def layer_traces(est: FimEstimate) -> list[float]:
    if isinstance(est, DenseFim):
        d = np.diag(est.matrix)
        out, start = [], 0
        for p, q in est.layer_shapes:
            out.append(float(d[start : start + p * q].sum()))
            start += p * q
        return out
    if isinstance(est, DiagonalFim):
        return [float(x.sum()) for x in est.layers]
    if isinstance(est, KfacFim):
        return [float(np.trace(a) * np.trace(g)) for a, g in zip(est.a_factors, est.g_factors)]
    return [float(x.sum()) for x in est.eigenvalues]


# ---------------------------------------------------------------------------
# F^{-1/4} noise shaping


def _check_spectrum(vals: np.ndarray) -> np.ndarray:
    floor = -EIG_TOL * max(1.0, float(np.max(np.abs(vals), initial=0.0)))
    if np.any(vals < floor):
        raise FimError(f"negative eigenvalue {vals.min():.3e} beyond tolerance")
    return np.maximum(vals, 0.0)


def inv_quarter_root_apply(est: FimEstimate, noise: list[np.ndarray], damping: float) -> list[np.ndarray]:
    """Apply ``(F + damping I)^{-1/4}`` to layer-shaped noise."""
    if not damping > 0.0:
        raise ValueError("damping must be positive")
    if isinstance(est, DiagonalFim):
        return [e * (np.maximum(f, 0.0) + damping) ** -0.25 for f, e in zip(est.layers, noise)]
    if isinstance(est, EkfacFim):
        out = []
        for ua, ug, lam, e in zip(est.u_a, est.u_g, est.eigenvalues, noise):
            rotated = ua.T @ e @ ug
            out.append(ua @ (rotated * (lam + damping) ** -0.25) @ ug.T)
        return out
    if isinstance(est, KfacFim):
        out = []
        for (sa, ua, sg, ug), e in zip(est.eigen(), noise):
            lam = np.outer(_check_spectrum(sa), _check_spectrum(sg))
            out.append(ua @ ((ua.T @ e @ ug) * (lam + damping) ** -0.25) @ ug.T)
        return out
    if isinstance(est, DenseFim):
        vals, vecs = np.linalg.eigh(est.matrix)
        vals = _check_spectrum(vals)
        flat = np.concatenate([e.ravel() for e in noise])
        shaped = vecs @ ((vecs.T @ flat) * (vals + damping) ** -0.25)
        out, start = [], 0
        for p, q in est.layer_shapes:
            out.append(shaped[start : start + p * q].reshape(p, q))
            start += p * q
        return out
    raise TypeError(f"not a Fisher estimate: {type(est).__name__}")


# ---------------------------------------------------------------------------
# weight modification


@dataclass
class ScrubConfig:
    lam: float = 5e-7
    sigma_sq: float = 1.0
    frequency: int = 10
    target: str = "both"  # actor_only | critic_only | both
    damping: float = 1e-8
    estimator: str = "ekfac"  # diag | kfac | ekfac
    gauss_scale: float = 1e-3
    reset_interval: int = 0  # gradient steps; 0 -> run length / 5

    TARGETS = ("actor_only", "critic_only", "both")

    def __post_init__(self):
        aliases = {"actor": "actor_only", "critic": "critic_only"}
        self.target = aliases.get(self.target, self.target)
        if self.estimator == "diagonal":
            self.estimator = "diag"
        if self.lam < 0 or self.sigma_sq < 0:
            raise ValueError("lambda and sigma_sq must be nonnegative")
        if int(self.frequency) != self.frequency or self.frequency < 1:
            raise ValueError("scrub frequency must be an integer >= 1")
        if not self.damping > 0:
            raise ValueError("damping must be positive")
        if self.target not in self.TARGETS:
            raise ValueError(f"scrub target must be one of {self.TARGETS}")
        if self.estimator not in ("diag", "kfac", "ekfac", "dense"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.reset_interval < 0:
            raise ValueError("reset_interval must be >= 0")

    @property
    def scrubs_actor(self) -> bool:
        return self.target in ("actor_only", "both")

    @property
    def scrubs_critic(self) -> bool:
        return self.target in ("critic_only", "both")


def layer_noise(net: Mlp, rng: np.random.Generator) -> list[np.ndarray]:
    return [rng.standard_normal((w.shape[0] + 1, w.shape[1])) for w in net.weights]


def scrub_perturbation(est: FimEstimate, net: Mlp, cfg: ScrubConfig, rng: np.random.Generator) -> list[np.ndarray]:
    scale = (cfg.lam * cfg.sigma_sq) ** 0.25
    shaped = inv_quarter_root_apply(est, layer_noise(net, rng), cfg.damping)
    return [scale * s for s in shaped]


def fgsf_scrub(net: Mlp, est: FimEstimate, cfg: ScrubConfig, rng: np.random.Generator) -> Mlp:
    """Return ``w + (lambda sigma^2)^{1/4} (F + damping)^{-1/4} eps`` as a new net."""
    if cfg.lam == 0.0:
        return net.copy()
    delta = scrub_perturbation(est, net, cfg, rng)
    out = net.copy()
    for i, d in enumerate(delta):
        out.set_augmented(i, net.augmented(i) + d)
    if not out.is_finite():
        raise ScrubError("scrub produced non-finite weights")
    return out


def gaussian_scrub(net: Mlp, rng: np.random.Generator, scale: float = 1e-3) -> Mlp:
    """Add N(0, (scale * mean|w|)^2) to every parameter."""
    params = net.params()
    mu_abs = float(np.mean(np.concatenate([np.abs(p).ravel() for p in params])))
    std = scale * mu_abs
    out = net.copy()
    if std == 0.0:
        return out
    for p in out.params():
        p += rng.normal(0.0, std, size=p.shape)
    return out


def periodic_reset(agent, rng: np.random.Generator):
    """Reinitialize actor, critics, targets and their optimizer moments in place.

    The replay buffer and temperature are left alone.
    """
    cfg = agent.cfg
    policy_net = init_mlp(agent.policy.net.dims, rng, cfg.activation)
    q1 = init_mlp(agent.critic.q1.dims, rng, cfg.activation)
    q2 = init_mlp(agent.critic.q2.dims, rng, cfg.activation)
    _assign(agent.policy.net, policy_net)
    _assign(agent.critic.q1, q1)
    _assign(agent.critic.q2, q2)
    _assign(agent.target_critic.q1, q1)
    _assign(agent.target_critic.q2, q2)
    agent.actor_opt.reset()
    agent.critic_opt.reset()
    return agent


def _assign(dst: Mlp, src: Mlp) -> None:
    """Copy parameters into existing arrays so optimizer references stay valid."""
    for d, s in zip(dst.params(), src.params()):
        d[...] = s


def assign_params(dst: Mlp, src: Mlp) -> None:
    _assign(dst, src)

