"""Primacy-bias detection from a logged Fisher-trace time series.

The trace is moved to log10 scale, smoothed and differentiated with
Savitzky-Golay filters, and split at its global peak into a rising
(memorization) and a falling (reorganization) phase. Thresholds are relative
to the largest derivative magnitude, so detection is unchanged when the trace
is multiplied by a positive constant.

The thresholds below are one workable reading of "sharp rise" and "sharp
drop"; they are tuned on synthetic rise-and-fall versus monotone curves and are
all configurable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_OFFSET = 1e-12


class SeriesTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class SavGolSpec:
    window: int = 51
    polyorder: int = 3
    deriv: int = 0

    def __post_init__(self):
        if self.window < 5 or self.window % 2 == 0:
            raise ValueError(f"window must be odd and >= 5, got {self.window}")
        if not 1 <= self.polyorder < self.window:
            raise ValueError(f"need 1 <= polyorder < window, got {self.polyorder}")
        if self.deriv not in (0, 1):
            raise ValueError("deriv must be 0 or 1")
        if self.deriv > self.polyorder:
            raise ValueError("deriv cannot exceed polyorder")

    def with_deriv(self, deriv: int) -> "SavGolSpec":
        return SavGolSpec(self.window, self.polyorder, deriv)


@dataclass(frozen=True)
class Thresholds:
    up: float = 0.05
    down: float = 0.05
    min_len: int = 10
    rho: float = 2.0


@dataclass
class TraceSeries:
    steps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.steps.shape != self.values.shape or self.steps.ndim != 1:
            raise ValueError("steps and values must be 1-D and of equal length")
        if np.any(np.diff(self.steps) <= 0):
            raise ValueError("steps must be strictly increasing")
        if not np.isfinite(self.values).all() or np.any(self.values < 0):
            raise ValueError("trace values must be finite and nonnegative")

    def __len__(self) -> int:
        return self.values.size

    @property
    def spacing(self) -> float:
        if len(self) < 2:
            return 1.0
        d = np.diff(self.steps)
        if np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
            raise ValueError("trace series must be uniformly spaced")
        return float(d[0])


@dataclass
class PhaseReport:
    memorization: tuple[float, float] | None
    reorganization: tuple[float, float] | None
    peak_step: float
    peak_value: float
    plateau_value: float
    pb_detected: bool

    def lines(self, name: str = "trace") -> list[str]:
        def fmt(iv):
            return "absent" if iv is None else f"[{iv[0]:g}, {iv[1]:g}]"

        return [
            f"{name}.pb_detected: {str(self.pb_detected).lower()}",
            f"{name}.memorization: {fmt(self.memorization)}",
            f"{name}.reorganization: {fmt(self.reorganization)}",
            f"{name}.peak_step: {self.peak_step:g}",
            f"{name}.peak_value: {self.peak_value:.6g}",
            f"{name}.plateau_value: {self.plateau_value:.6g}",
        ]


def savgol_coefficients(spec: SavGolSpec, spacing: float = 1.0) -> np.ndarray:
    """Weights ``w`` such that ``sum(w * window_values)`` is the fitted value
    (or first derivative) at the window centre."""
    half = spec.window // 2
    s = np.arange(-half, half + 1, dtype=np.float64) / half  # conditioned abscissa
    vander = s[:, None] ** np.arange(spec.polyorder + 1)[None, :]
    q, r = np.linalg.qr(vander)
    rows = np.linalg.solve(r, q.T)  # least-squares map: samples -> poly coefficients in s
    return rows[spec.deriv] * math.factorial(spec.deriv) / (half * spacing) ** spec.deriv


def apply_savgol(values: np.ndarray, spec: SavGolSpec, spacing: float = 1.0) -> np.ndarray:
    """Filter with mirror padding; output aligned with the input samples."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < spec.window:
        raise SeriesTooShortError(f"series of length {values.size} shorter than window {spec.window}")
    half = spec.window // 2
    padded = np.pad(values, half, mode="reflect")
    w = savgol_coefficients(spec, spacing)
    return np.convolve(padded, w[::-1], mode="valid")


def differentiate_series(series: TraceSeries, spec: SavGolSpec) -> np.ndarray:
    return apply_savgol(series.values, spec.with_deriv(1), series.spacing)


def smooth_series(series: TraceSeries, spec: SavGolSpec) -> np.ndarray:
    return apply_savgol(series.values, spec.with_deriv(0), series.spacing)


def _run_before(d: np.ndarray, peak: int, thr: float) -> tuple[int, int]:
    """Start index and length of the rising run that ends at the peak's crown."""
    j = peak
    while j >= 0 and -thr <= d[j] <= thr:
        j -= 1
    end = j
    while j >= 0 and d[j] > thr:
        j -= 1
    return j + 1, end - j


def _run_after(d: np.ndarray, peak: int, thr: float) -> tuple[int, int]:
    n = d.size
    j = peak
    while j < n and -thr <= d[j] <= thr:
        j += 1
    start = j
    while j < n and d[j] < -thr:
        j += 1
    return j - 1, j - start


def classify_phases(series: TraceSeries, spec: SavGolSpec = SavGolSpec(),
                    thresholds: Thresholds = Thresholds()) -> PhaseReport:
    n = len(series)
    if n < 3 * spec.window:
        raise SeriesTooShortError(f"need at least {3 * spec.window} samples, got {n}")
    steps = series.steps
    spacing = series.spacing
    log_vals = np.log10(series.values + LOG_OFFSET)
    smooth = apply_savgol(log_vals, spec.with_deriv(0), spacing)
    deriv = apply_savgol(log_vals, spec.with_deriv(1), spacing)
    peak = int(np.argmax(smooth))
    tail = max(1, math.ceil(0.1 * n))
    peak_value = float(10.0 ** smooth[peak])
    plateau = float(np.mean(10.0 ** smooth[-tail:]))
    scale = float(np.max(np.abs(deriv)))
    if np.ptp(series.values) == 0.0 or scale == 0.0:
        return PhaseReport(None, None, float(steps[peak]), peak_value, plateau, False)

    start, up_len = _run_before(deriv, peak, thresholds.up * scale)
    stop, down_len = _run_after(deriv, peak, thresholds.down * scale)
    memo = (float(steps[start]), float(steps[peak])) if up_len > 0 else None
    reorg = (float(steps[peak]), float(steps[stop])) if down_len > 0 else None
    detected = (
        up_len >= thresholds.min_len
        and down_len >= thresholds.min_len
        and peak_value >= thresholds.rho * plateau
    )
    return PhaseReport(memo, reorg, float(steps[peak]), peak_value, plateau, bool(detected))
