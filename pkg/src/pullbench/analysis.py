"""Trace processing for recorded campaigns: grasp-window detection, outlier
filtering, time normalization, and per-condition aggregation.

Detection and resampling are index-based over the (uniformly sampled)
telemetry streams, which makes the pipeline exactly invariant to time
shifts and exactly equivariant to power-of-two amplitude scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import CampaignData, TrialRecord, load_campaign

RESAMPLE_POINTS = 100
MIN_RISE_COUNTS = 20.0
MIN_WINDOW_SAMPLES = 10


class NoOnsetError(ValueError):
    """Trace has no detectable grasp rise / release fall."""


@dataclass(frozen=True)
class OnsetRelease:
    onset_t: float
    release_t: float
    onset_index: int
    release_index: int

    @property
    def duration(self) -> float:
        return self.release_t - self.onset_t


def detect_onset_release(
    times: Sequence[float],
    values: Sequence[float],
    threshold_frac: float = 0.2,
    sustain_s: float = 0.1,
    baseline_window_s: float = 0.5,
) -> OnsetRelease:
    """Find the grasp rise and release fall of one FSR channel trace.

    Baseline is the median of the first 0.5 s.  Onset is the earliest sample
    at or above baseline + threshold_frac * (peak - baseline) that stays
    there for at least sustain_s; release is the latest such sample followed
    by at least sustain_s below the threshold.  Traces shorter than 1 s or
    with a rise under 20 counts raise NoOnsetError.
    """
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) != len(v) or len(t) < 2:
        raise NoOnsetError("trace too short")
    if t[-1] - t[0] < 1.0:
        raise NoOnsetError("need at least 1 s of data")

    dt = float(np.median(np.diff(t)))
    if dt <= 0.0:
        raise NoOnsetError("non-increasing timestamps")
    n_base = max(1, int(round(baseline_window_s / dt)))
    baseline = float(np.median(v[:n_base]))
    peak = float(np.max(v))
    if peak - baseline < MIN_RISE_COUNTS:
        raise NoOnsetError(f"rise of {peak - baseline:.1f} counts is below the floor")

    threshold = baseline + threshold_frac * (peak - baseline)
    above = v >= threshold
    # samples spanning sustain_s: k consecutive samples cover (k-1)*dt
    sustain_n = int(round(sustain_s / dt)) + 1

    onset_index = _first_sustained(above, sustain_n)
    if onset_index is None:
        raise NoOnsetError("no sustained rise")
    release_index = _last_sustained_before_fall(above, sustain_n)
    if release_index is None or release_index <= onset_index:
        raise NoOnsetError("no sustained fall after the rise")
    return OnsetRelease(float(t[onset_index]), float(t[release_index]),
                        onset_index, release_index)


def _first_sustained(above: np.ndarray, sustain_n: int) -> int | None:
    count = 0
    for i, flag in enumerate(above):
        count = count + 1 if flag else 0
        if count >= sustain_n:
            return i - sustain_n + 1
    return None


def _last_sustained_before_fall(above: np.ndarray, sustain_n: int) -> int | None:
    below_run = 0
    best = None
    for i in range(len(above) - 1, -1, -1):
        if above[i]:
            if below_run >= sustain_n:
                best = i
                break
            below_run = 0
        else:
            below_run += 1
    return best


class DropReason(Enum):
    DURATION_OUTLIER = "duration_outlier"
    FORCE_OUTLIER = "force_outlier"
    NO_ONSET = "no_onset"


@dataclass(frozen=True)
class TrialFeatures:
    trial_id: str
    duration: float | None      # None when no grasp window was found
    peak: float | None


@dataclass
class FilterReport:
    kept: list[str] = field(default_factory=list)
    dropped: list[tuple[str, DropReason]] = field(default_factory=list)
    warning: str | None = None


def filter_outliers(
    features: Sequence[TrialFeatures],
    duration_mads: float = 2.0,
    peak_iqr_factor: float = 1.5,
) -> FilterReport:
    """Drop trials with long pull windows, outlier peaks, or no grasp at all.

    Duration rule: > median + duration_mads * 1.4826 * MAD (one-sided: only
    longer pulls are suspect).  Peak rule: outside [Q1 - k*IQR, Q3 + k*IQR].
    Fewer than 3 usable trials pass through unfiltered with a warning.
    """
    report = FilterReport()
    usable = []
    for feat in features:
        if feat.duration is None or feat.peak is None:
            report.dropped.append((feat.trial_id, DropReason.NO_ONSET))
        else:
            usable.append(feat)

    if len(usable) < 3:
        report.kept = [f.trial_id for f in usable]
        report.warning = f"only {len(usable)} usable trials; outlier rules skipped"
        return report

    durations = np.array([f.duration for f in usable])
    peaks = np.array([f.peak for f in usable])
    med = float(np.median(durations))
    mad = float(np.median(np.abs(durations - med)))
    duration_cap = med + duration_mads * 1.4826 * mad
    q1, q3 = np.percentile(peaks, [25.0, 75.0])
    iqr = q3 - q1
    peak_lo = q1 - peak_iqr_factor * iqr
    peak_hi = q3 + peak_iqr_factor * iqr

    for feat in usable:
        if feat.duration > duration_cap:
            report.dropped.append((feat.trial_id, DropReason.DURATION_OUTLIER))
        elif not peak_lo <= feat.peak <= peak_hi:
            report.dropped.append((feat.trial_id, DropReason.FORCE_OUTLIER))
        else:
            report.kept.append(feat.trial_id)
    return report


@dataclass(frozen=True)
class NormalizedTrace:
    trial_id: str
    channel: int
    samples: tuple[float, ...]   # RESAMPLE_POINTS values on normalized time [0, 1]
    onset_t: float
    release_t: float


def normalize(
    values: Sequence[float],
    window: OnsetRelease,
    trial_id: str = "",
    channel: int = 0,
    n_points: int = RESAMPLE_POINTS,
) -> NormalizedTrace:
    """Resample the [onset, release] window to n_points by linear interpolation."""
    if window.release_index - window.onset_index < MIN_WINDOW_SAMPLES:
        raise ValueError(
            f"grasp window of {window.release_index - window.onset_index} samples "
            f"is too short to normalize"
        )
    v = np.asarray(values, dtype=float)
    span = window.release_index - window.onset_index
    samples = []
    for m in range(n_points):
        # exact integer-ratio positions keep resampling shift-invariant
        pos = window.onset_index + m * span / (n_points - 1)
        lo = min(int(pos), window.release_index - 1)
        frac = pos - lo
        samples.append(float(v[lo] + frac * (v[lo + 1] - v[lo])))
    return NormalizedTrace(trial_id, channel, tuple(samples),
                           window.onset_t, window.release_t)


# ---------------------------------------------------------------------------
# campaign aggregation
# ---------------------------------------------------------------------------

@dataclass
class AnalysisResult:
    group_rows: list[tuple]       # (resistance, point_index, u, mean, sd, n)
    trial_rows: list[tuple]       # (trial_id, grasp, resistance, point_index, u, value)
    reports: dict[tuple[str, float], FilterReport]
    warnings: list[str]


def analyze_campaign(
    campaign: CampaignData | str | Path,
    channel: int = 9,
    threshold_frac: float = 0.2,
    sustain_s: float = 0.1,
) -> AnalysisResult:
    """Run the full pipeline over one campaign, grouping export by resistance.

    Filtering happens per (grasp, resistance) cell; trial input order does
    not affect any output (records are sorted by trial id first).
    """
    if not isinstance(campaign, CampaignData):
        campaign = load_campaign(campaign)
    records = sorted(campaign.records, key=lambda r: r.spec.trial_id)

    cells: dict[tuple[str, float], list[TrialRecord]] = {}
    for record in records:
        cells.setdefault((record.spec.grasp, record.spec.resistance), []).append(record)

    warnings: list[str] = []
    reports: dict[tuple[str, float], FilterReport] = {}
    normalized: dict[str, NormalizedTrace] = {}
    by_trial: dict[str, TrialRecord] = {r.spec.trial_id: r for r in records}

    for cell_key in sorted(cells):
        cell_records = cells[cell_key]
        features = []
        windows: dict[str, OnsetRelease] = {}
        for record in cell_records:
            trace = record.fsr_channel(channel)
            times = [s[0] for s in trace]
            values = [s[1] for s in trace]
            try:
                window = detect_onset_release(times, values, threshold_frac, sustain_s)
            except NoOnsetError:
                features.append(TrialFeatures(record.spec.trial_id, None, None))
                continue
            windows[record.spec.trial_id] = window
            features.append(
                TrialFeatures(record.spec.trial_id, window.duration, float(max(values)))
            )
        report = filter_outliers(features)
        reports[cell_key] = report
        if report.warning:
            warnings.append(f"cell {cell_key}: {report.warning}")
        for trial_id in report.kept:
            record = by_trial[trial_id]
            values = [s[1] for s in record.fsr_channel(channel)]
            try:
                normalized[trial_id] = normalize(
                    values, windows[trial_id], trial_id, channel
                )
            except ValueError as exc:
                warnings.append(f"trial {trial_id}: {exc}")

    trial_rows = []
    groups: dict[float, list[NormalizedTrace]] = {}
    for trial_id in sorted(normalized):
        trace = normalized[trial_id]
        spec = by_trial[trial_id].spec
        groups.setdefault(spec.resistance, []).append(trace)
        for m, value in enumerate(trace.samples):
            trial_rows.append(
                (trial_id, spec.grasp, spec.resistance, m, m / (RESAMPLE_POINTS - 1), value)
            )

    group_rows = []
    for resistance in sorted(groups):
        traces = groups[resistance]
        if not traces:
            continue
        matrix = np.array([t.samples for t in traces])
        means = matrix.mean(axis=0)
        sds = matrix.std(axis=0, ddof=1) if len(traces) > 1 else np.zeros(matrix.shape[1])
        for m in range(matrix.shape[1]):
            group_rows.append(
                (resistance, m, m / (RESAMPLE_POINTS - 1), float(means[m]), float(sds[m]), len(traces))
            )
    for cell_key, report in sorted(reports.items()):
        if not report.kept:
            warnings.append(f"cell {cell_key}: empty after filtering; omitted")
    return AnalysisResult(group_rows, trial_rows, reports, warnings)


def export_tables(result: AnalysisResult, out_path: str | Path) -> tuple[Path, Path]:
    """Write the mean/sd table and the per-trial normalized table."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    from .dataset import fmt

    with out_path.open("w", encoding="utf-8", newline="") as f:
        f.write("resistance,point,u,mean,sd,n\n")
        for row in result.group_rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    trials_path = out_path.with_suffix(".trials.csv")
    with trials_path.open("w", encoding="utf-8", newline="") as f:
        f.write("trial_id,grasp,resistance,point,u,value\n")
        for row in result.trial_rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    return out_path, trials_path
