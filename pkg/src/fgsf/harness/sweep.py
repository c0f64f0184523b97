"""Grid sweeps over one configuration axis and a list of seeds."""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fgsf.harness.analyze import final_return_stats, read_log
from fgsf.harness.checkpoint import write_atomic
from fgsf.harness.config import ConfigError, RunConfig, replace
from fgsf.harness.runner import run_training

log = logging.getLogger(__name__)

# axis name -> (config key, parser for command-line values)
AXES = {
    "lambda": ("scrub.lam", float),
    "replay_ratio": ("sac.replay_ratio", int),
    "target": ("scrub.target", str),
}
SUMMARY_NAME = "summary.csv"
SUMMARY_COLUMNS = ("axis", "value", "seeds_ok", "seeds_failed", "final_return_mean", "final_return_std")


def parse_values(axis: str, raw: str | list) -> list:
    if axis not in AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {sorted(AXES)}")
    items = raw if isinstance(raw, list) else [x for x in raw.replace(",", " ").split() if x]
    if not items:
        raise ConfigError("sweep needs at least one value")
    try:
        return [AXES[axis][1](x) for x in items]
    except ValueError as exc:
        raise ConfigError(f"bad value for axis {axis}: {exc}") from None


def run_config(base: RunConfig, axis: str, value, seed: int, root: Path) -> RunConfig:
    key = AXES[axis][0]
    try:
        cfg = replace(base, **{key: value, "seed": seed, "output_dir": str(root / f"{axis}={value}" / f"seed={seed}")})
    except ValueError as exc:
        raise ConfigError(f"{axis}={value}: {exc}") from exc
    return cfg


@dataclass
class RunOutcome:
    value: object
    seed: int
    log_path: Path | None
    final_return: float
    error: str | None = None


def _execute(cfg: RunConfig, value, seed: int) -> RunOutcome:
    try:
        path = run_training(cfg)
        mean, _, _ = final_return_stats(read_log(path))
        return RunOutcome(value, seed, path, mean)
    except Exception as exc:  # a failed cell must not stop the sweep
        log.warning("run %s seed %d failed: %s", value, seed, exc)
        return RunOutcome(value, seed, None, math.nan, f"{type(exc).__name__}: {exc}")


@dataclass
class SweepResult:
    root: Path
    axis: str
    outcomes: list[RunOutcome]

    def cells(self) -> list[dict]:
        out = []
        values = list(dict.fromkeys(o.value for o in self.outcomes))
        for v in values:
            runs = [o for o in self.outcomes if o.value == v]
            ok = [o.final_return for o in runs if o.error is None and math.isfinite(o.final_return)]
            out.append({
                "axis": self.axis, "value": v, "seeds_ok": len(ok), "seeds_failed": len(runs) - len(ok),
                "final_return_mean": float(np.mean(ok)) if ok else math.nan,
                "final_return_std": float(np.std(ok)) if ok else math.nan,
            })
        return out

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for c in self.cells():
            w.writerow([c["axis"], c["value"], c["seeds_ok"], c["seeds_failed"],
                        repr(c["final_return_mean"]), repr(c["final_return_std"])])
        return buf.getvalue()

    @property
    def failed(self) -> list[RunOutcome]:
        return [o for o in self.outcomes if o.error is not None]


def sweep(base: RunConfig, axis: str, values, seeds, output_dir: str | Path | None = None,
          workers: int = 1) -> SweepResult:
    """One run per (value, seed) under ``output_dir/<axis>=<value>/seed=<s>``.

    Runs are independent processes when ``workers > 1``. Failures are recorded
    per cell and do not stop the remaining runs.
    """
    values = parse_values(axis, list(values) if isinstance(values, (list, tuple)) else str(values))
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    root = Path(output_dir or base.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(run_config(base, axis, v, s, root), v, s) for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_execute, *zip(*jobs)))
    else:
        outcomes = [_execute(*job) for job in jobs]
    result = SweepResult(root, axis, outcomes)
    write_atomic(root / SUMMARY_NAME, result.summary_csv().encode("utf-8"))
    return result
