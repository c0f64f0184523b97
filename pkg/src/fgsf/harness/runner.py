"""Seeded training runs with atomic CSV logs, eval records and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
from pathlib import Path

from fgsf.harness.checkpoint import load_checkpoint, save_checkpoint, write_atomic
from fgsf.harness.config import RunConfig, dump_config
from fgsf.loop import CSV_COLUMNS, LoopState, RunAborted, init_state, train_iteration

log = logging.getLogger(__name__)

LOG_NAME = "log.csv"
RUN_NAME = "run.json"
CONFIG_NAME = "config.ini"
CHECKPOINT_NAME = "checkpoint.fgsf"


def format_value(v) -> str:
    if isinstance(v, int):
        return str(v)
    return repr(float(v))  # shortest round-trip form; "nan" for missing returns


def render_csv(rows: list[dict]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([format_value(row[c]) for c in CSV_COLUMNS])
    return out.getvalue()


def render_run_record(state: LoopState) -> str:
    """Counters and deterministic-evaluation returns, as JSON."""
    record = {
        "seed": state.config.seed,
        "env_steps": state.env_steps,
        "grad_steps": state.grad_steps,
        "episodes": state.episodes,
        "evaluations": [{"env_step": s, "episode": i, "return": r} for s, i, r in state.eval_records],
    }
    return json.dumps(record, indent=1) + "\n"


def _flush(out: Path, state: LoopState, rows: list[dict]) -> None:
    write_atomic(out / LOG_NAME, render_csv(rows).encode("utf-8"))
    write_atomic(out / RUN_NAME, render_run_record(state).encode("utf-8"))


def run_training(config: RunConfig, resume_from: str | Path | None = None) -> Path:
    """Train one seeded run; returns the path of its CSV log.

    With ``resume_from`` the loop continues from a checkpoint. The checkpoint
    carries the rows logged before it was taken, so the finished log equals
    the log of an uninterrupted run.

    Raises :class:`~fgsf.loop.RunAborted` after writing the log (with a final
    diagnostic row) when training goes non-finite.
    """
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_atomic(out / CONFIG_NAME, dump_config(config).encode("utf-8"))
    if resume_from is not None:
        state, rows = load_checkpoint(resume_from, config)
        log.info("resumed %s at env step %d", resume_from, state.env_steps)
    else:
        state, rows = init_state(config), []
    every = config.checkpoint_every
    try:
        while not state.done:
            rows += train_iteration(state)
            if every and state.env_steps % every == 0 and not state.done:
                save_checkpoint(state, out / CHECKPOINT_NAME, rows)
                _flush(out, state, rows)
    except RunAborted as exc:
        rows.append(exc.row)
        _flush(out, state, rows)
        raise
    _flush(out, state, rows)
    if every:
        save_checkpoint(state, out / CHECKPOINT_NAME, rows)
    return out / LOG_NAME

