"""Dormant-neuron fraction and weight-distribution KL between snapshots."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from fgsf.ndmath import Mlp, mlp_forward

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class DormantSpec:
    tau_d: float = 0.025
    probe_batch_size: int = 256

    def __post_init__(self):
        if self.tau_d < 0:
            raise ValueError("tau_d must be nonnegative")
        if self.probe_batch_size < 1:
            raise ValueError("probe_batch_size must be positive")


@dataclass
class WeightSnapshot:
    values: np.ndarray
    step: int = 0

    @classmethod
    def of(cls, nets: Mlp | Sequence[Mlp], step: int = 0) -> "WeightSnapshot":
        nets = [nets] if isinstance(nets, Mlp) else list(nets)
        return cls(np.concatenate([n.flat() for n in nets]), step)


def hidden_scores(net: Mlp, probe_batch) -> list[np.ndarray]:
    """Per hidden layer: mean |activation| of each unit over the layer mean.

    A layer whose activations are all zero gets scores of zero everywhere.
    """
    _, caches = mlp_forward(net, probe_batch)
    out = []
    for c in caches[:-1]:
        per_unit = np.mean(np.abs(c.post_activations), axis=0)
        layer_mean = float(np.mean(per_unit))
        out.append(per_unit / layer_mean if layer_mean > 0.0 else np.zeros_like(per_unit))
    return out


def dormant_fraction(nets: Mlp | Sequence[Mlp], probe_batch, spec: DormantSpec = DormantSpec()) -> float:
    """Fraction of hidden units whose normalized score is <= tau_d.

    Several networks (twin critics) share one probe batch and are pooled.
    """
    if np.asarray(probe_batch).shape[0] == 0:
        raise ValueError("empty probe batch")
    nets = [nets] if isinstance(nets, Mlp) else list(nets)
    dormant = total = 0
    for net in nets:
        for s in hidden_scores(net, probe_batch):
            dormant += int(np.count_nonzero(s <= spec.tau_d))
            total += s.size
    return dormant / total if total else 0.0


def gaussian_fit(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), max(std, STD_FLOOR)


def weight_update_kl(before: WeightSnapshot, after: WeightSnapshot) -> float:
    """KL(N_before || N_after) between Gaussian fits of the flattened weights."""
    if before.values.shape != after.values.shape:
        raise ValueError(f"snapshot lengths differ: {before.values.size} vs {after.values.size}")
    mu_b, sd_b = gaussian_fit(before.values)
    mu_a, sd_a = gaussian_fit(after.values)
    kl = math.log(sd_a / sd_b) + (sd_b**2 + (mu_b - mu_a) ** 2) / (2.0 * sd_a**2) - 0.5
    return max(kl, 0.0)
