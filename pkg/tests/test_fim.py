import numpy as np
import pytest

from fgsf import fim
from fgsf.fim import (
    DiagonalFim,
    FimError,
    ScrubConfig,
    ScrubError,
    ekfac_estimate,
    empirical_fim_diag,
    empirical_fim_full,
    estimate,
    fgsf_scrub,
    fim_trace,
    gaussian_scrub,
    inv_quarter_root_apply,
    kfac_estimate,
    layer_traces,
)
from fgsf.nets import init_mlp
from fgsf.sac import SacAgent, SacConfig


def dense_block(dense, layer):
    start = sum(p * q for p, q in dense.layer_shapes[:layer])
    p, q = dense.layer_shapes[layer]
    return dense.matrix[start:start + p * q, start:start + p * q]


def test_dense_oracle_is_mean_outer_product(small_scores):
    s = small_scores.flat()
    dense = empirical_fim_full(small_scores)
    np.testing.assert_allclose(dense.matrix, s.T @ s / s.shape[0], rtol=1e-12, atol=1e-15)
    assert np.array_equal(dense.matrix, dense.matrix.T)


def test_diag_equals_dense_diagonal(small_scores):
    diag = np.concatenate([d.ravel() for d in empirical_fim_diag(small_scores).layers])
    ref = np.diag(empirical_fim_full(small_scores).matrix)
    assert np.max(np.abs(diag - ref) / np.abs(ref)) <= 1e-10


def test_kfac_single_sample_is_exact(rng):
    net = init_mlp([3, 4, 2], rng)
    scores = fim.gaussian_scores(net, rng.normal(size=(1, 3)), rng.normal(size=(1, 2)))
    dense = empirical_fim_full(scores)
    k = kfac_estimate(scores)
    for i, (a, g) in enumerate(zip(k.a_factors, k.g_factors)):
        np.testing.assert_allclose(np.kron(a, g), dense_block(dense, i), rtol=1e-10, atol=1e-14)


def test_kfac_trace_is_product_of_factor_traces(small_scores):
    k = kfac_estimate(small_scores)
    assert fim_trace(k) == pytest.approx(sum(np.trace(a) * np.trace(g) for a, g in zip(k.a_factors, k.g_factors)))


def test_ekfac_eigenvalue_sum_is_exact_layer_trace(rng):
    net = init_mlp([4, 6, 3], rng)
    scores = fim.gaussian_scores(net, rng.normal(size=(64, 4)), rng.normal(size=(64, 3)))
    ek = ekfac_estimate(kfac_estimate(scores), scores)
    for got, ref in zip(layer_traces(ek), layer_traces(empirical_fim_full(scores))):
        assert abs(got - ref) / ref <= 1e-8


def test_ekfac_eigenvalues_are_nonnegative(small_scores):
    ek = estimate(small_scores, "ekfac")
    assert all(np.all(l >= 0) for l in ek.eigenvalues)


def test_all_estimators_share_the_trace_of_the_diagonal(small_scores):
    t = fim_trace(estimate(small_scores, "dense"))
    assert fim_trace(estimate(small_scores, "diag")) == pytest.approx(t, rel=1e-12)
    assert fim_trace(estimate(small_scores, "ekfac")) == pytest.approx(t, rel=1e-10)


def test_dense_oracle_size_limit(rng):
    net = init_mlp([40, 60, 1], rng)
    scores = fim.gaussian_scores(net, rng.normal(size=(2, 40)), rng.normal(size=(2, 1)))
    with pytest.raises(FimError):
        empirical_fim_full(scores)


def test_inv_quarter_root_scalar_oracle():
    est = DiagonalFim([np.array([[16.0]])])
    out = inv_quarter_root_apply(est, [np.array([[1.0]])], 1e-300)
    assert out[0][0, 0] == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(ValueError):
        inv_quarter_root_apply(est, [np.array([[1.0]])], 0.0)


@pytest.mark.parametrize("name", ["dense", "kfac", "ekfac"])
def test_quarter_root_applied_four_times_inverts(small_scores, name, rng):
    """Each estimator's shaping equals (B + d)^{-1/4} of the matrix it represents."""
    est = estimate(small_scores, name)
    dense = empirical_fim_full(small_scores)
    if name == "kfac":
        # compare against the Kronecker product it represents
        blocks = [np.kron(a, g) for a, g in zip(est.a_factors, est.g_factors)]
    elif name == "ekfac":
        blocks = [np.kron(ua, ug) @ np.diag(l.ravel()) @ np.kron(ua, ug).T
                  for ua, ug, l in zip(est.u_a, est.u_g, est.eigenvalues)]
    else:
        blocks = None
    noise = fim.layer_noise(init_mlp([3, 4, 2], rng), rng)
    out = inv_quarter_root_apply(est, noise, 1e-3)
    if blocks is None:
        vals, vecs = np.linalg.eigh(dense.matrix)
        m = vecs @ np.diag((np.maximum(vals, 0) + 1e-3) ** -0.25) @ vecs.T
        flat = m @ np.concatenate([e.ravel() for e in noise])
        np.testing.assert_allclose(np.concatenate([o.ravel() for o in out]), flat, rtol=1e-8, atol=1e-10)
        return
    for b, e, o in zip(blocks, noise, out):
        vals, vecs = np.linalg.eigh(b)
        m = vecs @ np.diag((np.maximum(vals, 0) + 1e-3) ** -0.25) @ vecs.T
        np.testing.assert_allclose(o.ravel(), m @ e.ravel(), rtol=1e-7, atol=1e-9)


def test_scrub_noise_covariance_law(rng):
    f = np.array([[1.0, 4.0, 16.0, 64.0]])
    cfg = ScrubConfig(lam=1e-4, damping=1e-8, estimator="diag")
    net = init_mlp([3, 1], rng)  # augmented shape (4, 1)
    est = DiagonalFim([f.T])
    draws = np.array([
        np.concatenate([d.ravel() for d in fim.scrub_perturbation(est, net, cfg, rng)])
        for _ in range(100_000)
    ])
    cov = draws.T @ draws / draws.shape[0]
    expected = np.sqrt(1e-4) * (f.ravel() + 1e-8) ** -0.5
    assert np.max(np.abs(np.diag(cov) - expected) / expected) <= 0.05
    off = cov - np.diag(np.diag(cov))
    assert np.max(np.abs(off)) <= 0.05 * expected.min()


def test_scrub_rms_scales_as_quarter_power(rng):
    est = DiagonalFim([np.array([[1.0], [4.0], [16.0], [64.0]])])
    net = init_mlp([3, 1], rng)

    def rms(lam, seed):
        r = np.random.default_rng(seed)
        cfg = ScrubConfig(lam=lam, estimator="diag")
        d = np.array([fim.scrub_perturbation(est, net, cfg, r)[0].ravel() for _ in range(10_000)])
        return np.sqrt(np.mean(d * d))

    assert rms(4e-6, 1) / rms(1e-6, 2) == pytest.approx(np.sqrt(2), rel=0.03)


def test_lambda_zero_leaves_weights_bitwise(small_scores, rng):
    net = init_mlp([3, 4, 2], rng)
    out = fgsf_scrub(net, estimate(small_scores, "ekfac"), ScrubConfig(lam=0.0), rng)
    assert all(np.array_equal(a, b) for a, b in zip(net.params(), out.params()))
    assert out is not net


def test_identity_fisher_gives_unit_noise(rng):
    net = init_mlp([3, 1], rng)
    est = DiagonalFim([np.ones((4, 1))])
    cfg = ScrubConfig(lam=1.0, damping=1e-300, estimator="diag")
    out = fgsf_scrub(net, est, cfg, np.random.default_rng(5))
    eps = np.random.default_rng(5).standard_normal((4, 1))
    np.testing.assert_allclose(out.augmented(0) - net.augmented(0), eps, rtol=1e-12)


def test_scrub_rejects_non_finite_result(rng):
    net = init_mlp([3, 1], rng)
    net.weights[0][0, 0] = np.inf
    with pytest.raises(ScrubError):
        fgsf_scrub(net, DiagonalFim([np.ones((4, 1))]), ScrubConfig(lam=1.0), rng)


def test_gaussian_scrub_scale(rng):
    net = init_mlp([20, 30, 5], rng)
    out = gaussian_scrub(net, rng, 1e-3)
    d = out.flat() - net.flat()
    mu = np.mean(np.abs(net.flat()))
    assert np.std(d) == pytest.approx(1e-3 * mu, rel=0.05)


def test_periodic_reset_reinitializes_and_clears_moments(rng):
    ag = SacAgent.create(3, 1, SacConfig(hidden=(8,), batch_size=8, warmup_steps=8), rng)
    ag.policy.net.weights[0] += 5.0
    ag.actor_opt.m[0] += 1.0
    ag.actor_opt.t = 7
    w_ref = ag.policy.net.weights[0]
    fim.periodic_reset(ag, np.random.default_rng(0))
    assert ag.policy.net.weights[0] is w_ref  # same array, assigned in place
    assert np.all(np.abs(w_ref) <= 1 / np.sqrt(3))
    assert ag.actor_opt.t == 0 and not np.any(ag.actor_opt.m[0])
    assert all(np.array_equal(a, b) for a, b in zip(ag.critic.q1.params(), ag.target_critic.q1.params()))


def test_scrub_config_validation():
    assert ScrubConfig(target="critic").target == "critic_only"
    for bad in (dict(lam=-1.0), dict(frequency=0), dict(damping=0.0), dict(target="all"), dict(estimator="qr")):
        with pytest.raises(ValueError):
            ScrubConfig(**bad)


def test_kfac_rejects_asymmetric_factor():
    with pytest.raises(FimError):
        fim._sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_critic_scores_from_jacobians_match_direct(rng):
    net = init_mlp([4, 5, 1], rng)
    x = rng.normal(size=(7, 4))
    direct = fim.critic_scores(net, x, np.random.default_rng(3))
    from fgsf.ndmath import mlp_backward_per_sample, mlp_forward

    out, caches = mlp_forward(net, x)
    jac = mlp_backward_per_sample(net, caches, np.ones_like(out))
    reused = fim.critic_scores_from_jacobians(jac, np.random.default_rng(3))
    np.testing.assert_allclose(direct.flat(), reused.flat(), rtol=1e-14)


def test_policy_score_mean_is_zero(rng):
    """E[score] = 0 under the model: checked by Monte Carlo on the output grads."""
    from fgsf.nets import GaussianPolicy

    pol = GaussianPolicy.create(3, 1, (4,), rng)
    obs = np.repeat(rng.normal(size=(1, 3)), 20_000, axis=0)
    out, dout = fim.policy_score_output_grads(pol, obs, rng)
    assert np.all(np.abs(dout.mean(axis=0)) < 0.05 * dout.std(axis=0) + 1e-12)
