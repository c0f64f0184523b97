import math

import numpy as np
import pytest

from fgsf.metrics import DormantSpec, WeightSnapshot, dormant_fraction, gaussian_fit, hidden_scores, weight_update_kl
from fgsf.ndmath import Mlp
from fgsf.nets import init_mlp


def relu_net_with_dead_unit():
    # 2 inputs -> 4 hidden relu units; unit 3 has a large negative bias and never fires
    w0 = np.array([[1.0, 0.5, -1.0, 0.0], [0.0, 1.0, 1.0, 0.0]])
    b0 = np.array([0.0, 0.0, 0.0, -100.0])
    return Mlp([w0, np.ones((4, 1))], [b0, np.zeros(1)], "relu")


def test_dead_unit_counts_as_dormant():
    net = relu_net_with_dead_unit()
    probe = np.random.default_rng(0).normal(size=(256, 2))
    scores = hidden_scores(net, probe)[0]
    assert scores[3] == 0.0
    assert dormant_fraction(net, probe) == pytest.approx(0.25)


def test_scores_are_relative_to_layer_mean():
    net = relu_net_with_dead_unit()
    probe = np.abs(np.random.default_rng(1).normal(size=(64, 2)))
    s = hidden_scores(net, probe)[0]
    assert np.mean(s) == pytest.approx(1.0)


def test_all_zero_layer_is_fully_dormant():
    net = Mlp([np.zeros((2, 3)), np.ones((3, 1))], [np.full(3, -1.0), np.zeros(1)], "relu")
    assert dormant_fraction(net, np.ones((5, 2))) == 1.0


def test_twin_networks_pool_units(rng):
    dead = relu_net_with_dead_unit()
    alive = Mlp([np.eye(2, 4), np.ones((4, 1))], [np.ones(4), np.zeros(1)], "relu")
    probe = np.abs(rng.normal(size=(64, 2)))
    assert dormant_fraction([dead, alive], probe) == pytest.approx(1 / 8)


def test_threshold_zero_counts_only_silent_units(rng):
    net = init_mlp([3, 16, 1], rng)
    assert dormant_fraction(net, rng.normal(size=(32, 3)), DormantSpec(tau_d=0.0)) == 0.0


def test_empty_probe_rejected(rng):
    with pytest.raises(ValueError):
        dormant_fraction(init_mlp([2, 3, 1], rng), np.zeros((0, 2)))


def test_kl_closed_form():
    rng = np.random.default_rng(0)
    a = WeightSnapshot(rng.normal(0.0, 1.0, 1000))
    b = WeightSnapshot(rng.normal(0.5, 2.0, 1000))
    m1, s1 = gaussian_fit(a.values)
    m2, s2 = gaussian_fit(b.values)
    expected = math.log(s2 / s1) + (s1**2 + (m1 - m2) ** 2) / (2 * s2**2) - 0.5
    assert weight_update_kl(a, b) == pytest.approx(expected, rel=1e-12)
    assert weight_update_kl(a, b) != pytest.approx(weight_update_kl(b, a))


def test_kl_identical_is_zero_and_nonnegative(rng):
    s = WeightSnapshot(rng.normal(size=50))
    assert weight_update_kl(s, s) == 0.0
    assert weight_update_kl(s, WeightSnapshot(s.values + 1e-3)) >= 0.0


def test_kl_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        weight_update_kl(WeightSnapshot(np.zeros(3)), WeightSnapshot(np.zeros(4)))


def test_constant_weights_use_std_floor():
    m, s = gaussian_fit(np.ones(10))
    assert m == 1.0 and s == 1e-12
    assert math.isfinite(weight_update_kl(WeightSnapshot(np.ones(10)), WeightSnapshot(np.ones(10))))


def test_snapshot_concatenates_networks(rng):
    a, b = init_mlp([2, 3], rng), init_mlp([2, 2], rng)
    snap = WeightSnapshot.of([a, b], step=5)
    assert snap.values.size == a.n_params + b.n_params and snap.step == 5


def test_metrics_are_pure(rng):
    net = init_mlp([3, 8, 1], rng)
    probe = rng.normal(size=(16, 3))
    assert dormant_fraction(net, probe) == dormant_fraction(net, probe)
