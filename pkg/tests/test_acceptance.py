"""Acceptance checks, one test per criterion.

Every test prints a single ``criterion N: PASS|FAIL`` line (visible in the
terminal even under output capture) before asserting. Criteria 7 and 8 train
pendulum agents at full desk scale: 3 seeds x 30k env steps for the baseline
and again for FGSF, roughly 3-4 minutes per run on one core. Set
``FGSF_ACCEPT_WORKERS`` to run them in parallel processes.
"""

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from conftest import tiny_config
from fgsf import fim
from fgsf.fim import DiagonalFim, ScrubConfig, ekfac_estimate, empirical_fim_diag, empirical_fim_full, kfac_estimate, layer_traces
from fgsf.harness.analyze import read_log
from fgsf.harness.checkpoint import save_checkpoint
from fgsf.harness.config import RunConfig, replace
from fgsf.harness.runner import RUN_NAME, run_training
from fgsf.loop import init_state, train_iteration
from fgsf.nets import init_mlp
from fgsf.pbdetect import SavGolSpec, TraceSeries, classify_phases, differentiate_series, savgol_coefficients

SEEDS = (0, 1, 2)
PENDULUM_STEPS = 30_000
# scrub strength for the 2x64 pendulum networks; see README, "Choosing lambda"
PENDULUM_LAMBDA = 1e-14
README = Path(__file__).resolve().parents[1] / "README.md"


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return emit


# -- Fisher estimators --------------------------------------------------------

def test_criterion_01_diag_matches_dense_oracle(report):
    rng = np.random.default_rng(1)
    net = init_mlp([5, 12, 3], rng)  # 111 parameters
    assert net.n_params <= 200
    t0 = time.perf_counter()
    scores = fim.gaussian_scores(net, rng.normal(size=(32, 5)), rng.normal(size=(32, 3)))
    diag = np.concatenate([d.ravel() for d in empirical_fim_diag(scores).layers])
    ref = np.diag(empirical_fim_full(scores).matrix)
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(diag - ref) / np.abs(ref)))
    report(1, err <= 1e-10 and elapsed < 1.0, f"max rel err {err:.2e} (<= 1e-10), {elapsed * 1e3:.1f} ms (< 1 s)")


def test_criterion_02_single_sample_kfac_exact(report):
    rng = np.random.default_rng(2)
    net = init_mlp([4, 6, 2], rng)
    scores = fim.gaussian_scores(net, rng.normal(size=(1, 4)), rng.normal(size=(1, 2)))
    dense = empirical_fim_full(scores)
    k = kfac_estimate(scores)
    worst, start = 0.0, 0
    for a, g in zip(k.a_factors, k.g_factors):
        size = a.shape[0] * g.shape[0]
        block = dense.matrix[start:start + size, start:start + size]
        worst = max(worst, float(np.max(np.abs(np.kron(a, g) - block)) / np.max(np.abs(block))))
        start += size
    report(2, worst <= 1e-10, f"max rel deviation of A(x)G from oracle block {worst:.2e} (<= 1e-10)")


def test_criterion_03_ekfac_trace_identity(report):
    rng = np.random.default_rng(3)
    net = init_mlp([4, 8, 3], rng)
    scores = fim.gaussian_scores(net, rng.normal(size=(64, 4)), rng.normal(size=(64, 3)))
    ek = ekfac_estimate(kfac_estimate(scores), scores)
    ref = layer_traces(empirical_fim_full(scores))
    err = max(abs(float(l.sum()) - r) / r for l, r in zip(ek.eigenvalues, ref))
    report(3, err <= 1e-8, f"max per-layer rel err {err:.2e} (<= 1e-8) over {len(ref)} layers")


def test_criterion_04_scrub_noise_law(report):
    f = np.array([1.0, 4.0, 16.0, 64.0])
    est = DiagonalFim([f[:, None]])
    net = init_mlp([3, 1], np.random.default_rng(0))  # one layer, 4 augmented parameters
    lam = 5e-7

    def draws(lam, n, seed):
        rng = np.random.default_rng(seed)
        cfg = ScrubConfig(lam=lam)
        return np.array([fim.scrub_perturbation(est, net, cfg, rng)[0].ravel() for _ in range(n)])

    d = draws(lam, 100_000, 4)
    cov = np.cov(d, rowvar=False)
    want = math.sqrt(lam) / np.sqrt(f + 1e-8)
    rel = np.abs(np.diag(cov) - want) / want
    off = np.max(np.abs(cov - np.diag(np.diag(cov)))) / want.min()
    ratio = np.sqrt(np.mean(draws(4 * lam, 100_000, 5) ** 2)) / np.sqrt(np.mean(d ** 2))
    ok = rel.max() <= 0.05 and off <= 0.05 and abs(ratio / math.sqrt(2) - 1) <= 0.03
    report(4, ok, f"variance rel err max {rel.max():.3f}, off-diagonal {off:.3f} (<= 0.05); "
                  f"RMS ratio at 4x lambda {ratio:.4f} (sqrt2 +/- 3%)")


# -- trace analysis -----------------------------------------------------------

def test_criterion_05_savgol_exactness(report):
    t = np.linspace(-2.0, 3.0, 201)
    y = 0.5 * t**3 - t**2 + 2 * t + 20.0  # positive, as traces are
    d = differentiate_series(TraceSeries(t, y), SavGolSpec(21, 3))
    exact = 1.5 * t**2 - 2 * t + 2
    deriv_err = float(np.max(np.abs(d[10:-10] - exact[10:-10])))
    x = np.arange(-2, 3, dtype=float)
    oracle = np.linalg.pinv(np.vander(x, 3, increasing=True))[0]
    w_err = float(np.max(np.abs(savgol_coefficients(SavGolSpec(5, 2)) - oracle)))
    report(5, deriv_err <= 1e-9 and w_err <= 1e-12,
           f"cubic derivative err {deriv_err:.1e} (<= 1e-9); 5/2 weights err {w_err:.1e} (<= 1e-12)")


def test_criterion_06_phase_detection(report):
    t = np.arange(1, 501, dtype=float)
    results, ok = [], True
    for tau in (40.0, 80.0, 120.0):
        rep = classify_phases(TraceSeries(t, 7.0 * t * np.exp(-t / tau)))
        hit = rep.pb_detected and abs(rep.peak_step - tau) <= 2
        ok &= hit
        results.append(f"tau={tau:g} peak={rep.peak_step:g}")
    for name, v in (("monotone", np.sqrt(t)), ("constant", np.full(500, 3.0))):
        rep = classify_phases(TraceSeries(t, v))
        ok &= not rep.pb_detected
        results.append(f"{name} detected={rep.pb_detected}")
    report(6, ok, "; ".join(results))


# -- training -----------------------------------------------------------------

def pendulum_config(method: str, seed: int, out: Path, **changes) -> RunConfig:
    cfg = RunConfig(env="pendulum", method=method, total_env_steps=PENDULUM_STEPS, seed=seed,
                    output_dir=str(out / f"{method}-{seed}"), record_wall_time=False)
    return replace(cfg, **changes)


def _train(cfg: RunConfig) -> dict:
    t0 = time.perf_counter()
    path = run_training(cfg)
    evals = json.loads((path.parent / RUN_NAME).read_text())["evaluations"]
    log = read_log(path)
    return {
        "final_eval": float(np.mean([e["return"] for e in evals[-10:]])),
        "peak_critic_trace": float(np.max(log.columns["tr_f_critic"])),
        "seconds": time.perf_counter() - t0,
    }


@pytest.fixture(scope="module")
def pendulum_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("pendulum")
    configs = [pendulum_config("baseline", s, out) for s in SEEDS]
    configs += [pendulum_config("fgsf", s, out, **{"scrub.lam": PENDULUM_LAMBDA}) for s in SEEDS]
    workers = int(os.environ.get("FGSF_ACCEPT_WORKERS", "1"))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train, configs))
    else:
        results = [_train(c) for c in configs]
    n = len(SEEDS)
    return {"baseline": results[:n], "fgsf": results[n:]}


@pytest.mark.slow
def test_criterion_07_baseline_learns_pendulum(report, pendulum_runs):
    runs = pendulum_runs["baseline"]
    finals = [r["final_eval"] for r in runs]
    passed = sum(f >= -300.0 for f in finals)
    minutes = sum(r["seconds"] for r in runs) / 60
    report(7, passed >= 2 and minutes <= 15.0,
           f"final-10-eval returns {[round(f, 1) for f in finals]}; {passed}/3 seeds >= -300 (need 2); "
           f"{minutes:.1f} min for 3 seeds (<= ~15)")


@pytest.mark.slow
def test_criterion_08_fgsf_degeneracy_and_non_degradation(report, pendulum_runs, tmp_path):
    # bitwise degeneracy at lambda = 0, default 64-unit networks, frequency 10
    short = dict(total_env_steps=3000, log_every=100, eval_every=1000)
    base = run_training(pendulum_config("baseline", 0, tmp_path / "b", **short)).read_bytes()
    zero = run_training(pendulum_config("fgsf", 0, tmp_path / "z", **short, **{"scrub.lam": 0.0})).read_bytes()
    degenerate = base == zero

    b = np.mean([r["final_eval"] for r in pendulum_runs["baseline"]])
    f = np.mean([r["final_eval"] for r in pendulum_runs["fgsf"]])
    within = f >= b - 0.2 * abs(b)
    peak_b = float(np.median([r["peak_critic_trace"] for r in pendulum_runs["baseline"]]))
    peak_f = float(np.median([r["peak_critic_trace"] for r in pendulum_runs["fgsf"]]))
    report(8, degenerate and within and peak_f <= peak_b,
           f"lambda=0 log bitwise equal to baseline: {degenerate}; mean final return fgsf {f:.1f} vs "
           f"baseline {b:.1f} (floor {b - 0.2 * abs(b):.1f}); median peak critic trace fgsf {peak_f:.4g} "
           f"vs baseline {peak_b:.4g} (lambda={PENDULUM_LAMBDA:g}, frequency 10)")


def test_criterion_09_update_count_law(report, tmp_path):
    got = {}
    for ratio in (1, 2, 4):
        cfg = tiny_config(tmp_path / f"r{ratio}", total_env_steps=300)
        cfg = replace(cfg, **{"sac.replay_ratio": ratio})
        run_training(cfg)
        record = json.loads((tmp_path / f"r{ratio}" / RUN_NAME).read_text())
        got[ratio] = (record["grad_steps"], ratio * (record["env_steps"] - cfg.sac.warmup_steps))
    report(9, all(a == b for a, b in got.values()),
           "; ".join(f"ratio {r}: {a} updates, law {b}" for r, (a, b) in got.items()))


def test_criterion_10_determinism_and_resume(report, tmp_path):
    cfg = tiny_config(tmp_path / "a", method="fgsf", total_env_steps=500, **{})
    cfg = replace(cfg, **{"scrub.lam": 1e-12})
    first = run_training(cfg).read_bytes()
    second = run_training(replace(cfg, output_dir=str(tmp_path / "b"))).read_bytes()
    state = init_state(replace(cfg, output_dir=str(tmp_path / "c")))
    rows = []
    while state.env_steps < 283:
        rows += train_iteration(state)
    save_checkpoint(state, tmp_path / "mid.fgsf", rows)
    resumed = run_training(replace(cfg, output_dir=str(tmp_path / "d")), resume_from=tmp_path / "mid.fgsf").read_bytes()
    report(10, first == second and resumed == first,
           f"same-seed CSVs identical: {first == second}; resumed-at-283 CSV identical: {resumed == first}")


def test_criterion_11_non_reproducibility_statement(report):
    text = README.read_text(encoding="utf-8") if README.exists() else ""
    ok = "873.473" in text and "not reproducible" in text.lower() and "10^6" in text
    report(11, ok, "README states that the published DMC returns at 10^6 steps are context only")
