"""Post-hoc analysis of a run log: phase detection on both trace columns and
the final-return statistic."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fgsf.loop import CSV_COLUMNS
from fgsf.pbdetect import PhaseReport, SavGolSpec, Thresholds, TraceSeries, classify_phases

FINAL_EPISODES = 100
TRACE_COLUMNS = ("tr_f_actor", "tr_f_critic")


class LogFormatError(ValueError):
    pass


@dataclass
class RunLog:
    columns: dict[str, np.ndarray]

    @property
    def steps(self) -> np.ndarray:
        return self.columns["step"]

    def __len__(self) -> int:
        return self.steps.size


def read_log(path: str | Path) -> RunLog:
    """Parse a run CSV; the header must match the schema exactly."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise LogFormatError(f"{path}: empty file")
            if tuple(header) != CSV_COLUMNS:
                raise LogFormatError(f"{path}: unexpected header {header}; expected {list(CSV_COLUMNS)}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(CSV_COLUMNS):
                    raise LogFormatError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
                try:
                    rows.append([float(x) for x in rec])
                except ValueError as exc:
                    raise LogFormatError(f"{path}:{lineno}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise LogFormatError(f"{path}: not a text CSV") from exc
    data = np.array(rows, dtype=np.float64).reshape(-1, len(CSV_COLUMNS))
    if data.shape[0] and np.any(np.diff(data[:, 0]) <= 0):
        raise LogFormatError(f"{path}: step column is not strictly increasing")
    return RunLog({c: data[:, i] for i, c in enumerate(CSV_COLUMNS)})


def final_return_stats(log: RunLog, last: int = FINAL_EPISODES) -> tuple[float, float, int]:
    """Mean and (population) std of the last ``last`` logged episode returns."""
    r = log.columns["episode_return"]
    r = r[np.isfinite(r)][-last:]
    if r.size == 0:
        return math.nan, math.nan, 0
    return float(np.mean(r)), float(np.std(r)), int(r.size)


@dataclass
class Analysis:
    reports: dict[str, PhaseReport]
    final_mean: float
    final_std: float
    final_count: int

    def text(self) -> str:
        lines = []
        for name, rep in self.reports.items():
            lines += rep.lines(name)
        lines.append(f"final_return: {self.final_mean:.6g} +/- {self.final_std:.6g} (last {self.final_count} logged episodes)")
        return "\n".join(lines) + "\n"


def analyze_log(csv_path: str | Path, spec: SavGolSpec = SavGolSpec(),
                thresholds: Thresholds = Thresholds()) -> Analysis:
    """Phase report per trace column plus final-return statistics.

    Rows with a non-finite trace (a diagnostic row from an aborted run) are
    dropped before filtering.
    """
    log = read_log(csv_path)
    reports = {}
    for col in TRACE_COLUMNS:
        ok = np.isfinite(log.columns[col])
        reports[col] = classify_phases(TraceSeries(log.steps[ok], log.columns[col][ok]), spec, thresholds)
    mean, std, count = final_return_stats(log)
    return Analysis(reports, mean, std, count)
