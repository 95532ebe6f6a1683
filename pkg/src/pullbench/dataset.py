"""On-disk trial dataset: CSV streams plus JSON metadata and manifest.

Layout per campaign:

    <campaign_dir>/manifest.json
    <campaign_dir>/trials/<trial_id>/meta.json
    <campaign_dir>/trials/<trial_id>/testbed.csv
    <campaign_dir>/trials/<trial_id>/fsr.csv
    <campaign_dir>/trials/<trial_id>/manipulator.csv

Floats are written with repr() (shortest round-trip decimal), so a
write -> read -> write cycle is byte-identical.  meta.json and manifest
updates go through write-temp-then-rename.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

from . import __version__
from .model import (
    AttachmentKind,
    CampaignSpec,
    TestbedKind,
    TrialLabel,
    TrialResult,
    TrialSpec,
    campaign_spec_from_dict,
    campaign_spec_to_dict,
)

SCHEMA_VERSION = 1

TESTBED_COLUMNS = ["t", "opening", "opening_measured", "velocity", "resistance", "reset_motor", "flags"]
STREAM_FILES = ("testbed.csv", "fsr.csv", "manipulator.csv")
STREAM_ALIGNMENT_TOLERANCE_S = 0.010


class DatasetError(Exception):
    pass


def fmt(value) -> str:
    """Canonical cell text: shortest round-trip decimal for floats."""
    if isinstance(value, bool):
        raise TypeError("booleans do not belong in stream files")
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"non-finite value {value} in stream")
        return repr(value)
    return str(value)


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _dump_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# writing
# ---------------------------------------------------------------------------

class TrialWriter:
    """Writes one trial's streams; exactly one writer per trial."""

    def __init__(self, campaign_dir: str | Path, spec: TrialSpec, channel_count: int,
                 seed: int | None = None, extra_meta: dict | None = None):
        self.campaign_dir = Path(campaign_dir)
        self.spec = spec
        self.channel_count = channel_count
        self.seed = seed
        self.extra_meta = dict(extra_meta or {})
        self.trial_dir = self.campaign_dir / "trials" / spec.trial_id
        self.trial_dir.mkdir(parents=True, exist_ok=True)
        self.started_at = time.time()
        self._finalized = False

        self._testbed = (self.trial_dir / "testbed.csv").open("w", encoding="utf-8", newline="")
        self._testbed.write(",".join(TESTBED_COLUMNS) + "\n")
        self._fsr = (self.trial_dir / "fsr.csv").open("w", encoding="utf-8", newline="")
        self._fsr.write("t," + ",".join(f"ch{i:02d}" for i in range(channel_count)) + "\n")
        self._manip = (self.trial_dir / "manipulator.csv").open("w", encoding="utf-8", newline="")
        self._manip_header_written = False
        self._frame_count = 0

    def append_frame(self, frame: dict) -> None:
        """Record one telemetry frame (wire payload shape) into both sensor streams."""
        fsr_counts = frame["fsr"]
        if len(fsr_counts) != self.channel_count:
            raise DatasetError(
                f"frame has {len(fsr_counts)} FSR channels, expected {self.channel_count}"
            )
        t = float(frame["t"])
        row = [
            fmt(t),
            fmt(float(frame["opening"])),
            fmt(float(frame["opening_measured"])),
            fmt(float(frame["velocity"])),
            fmt(float(frame["resistance"])),
            str(frame["reset_motor"]),
            str(int(frame["flags"])),
        ]
        self._testbed.write(",".join(row) + "\n")
        self._fsr.write(fmt(t) + "," + ",".join(str(int(c)) for c in fsr_counts) + "\n")
        self._frame_count += 1

    def append_manipulator(self, t: float, positions: list[float], velocities: list[float]) -> None:
        if not self._manip_header_written:
            n = len(positions)
            header = "t," + ",".join(f"q{i}" for i in range(n))
            header += "," + ",".join(f"qd{i}" for i in range(n))
            self._manip.write(header + "\n")
            self._manip_header_written = True
        cells = [fmt(float(t))]
        cells += [fmt(float(q)) for q in positions]
        cells += [fmt(float(qd)) for qd in velocities]
        self._manip.write(",".join(cells) + "\n")

    @property
    def frame_count(self) -> int:
        return self._frame_count

    def _close_streams(self) -> None:
        for handle in (self._testbed, self._fsr, self._manip):
            if not handle.closed:
                handle.close()

    def finalize(self, result: TrialResult, **more_meta) -> "TrialRecord":
        """Close streams, write meta.json, and update the campaign manifest."""
        if self._finalized:
            raise DatasetError("trial already finalized")
        if not self._manip_header_written:
            self._manip.write("t\n")  # keep the file well-formed even if unused
        self._close_streams()
        meta = {
            "schema_version": SCHEMA_VERSION,
            "trial": trial_spec_to_dict(self.spec),
            "result": {
                "label": result.label.value,
                "peak_opening": result.peak_opening,
                "pull_duration": result.pull_duration,
            },
            "seed": self.seed,
            "software_version": __version__,
            "timestamps": {"started_at": self.started_at, "finished_at": time.time()},
            "media_refs": self.extra_meta.pop("media_refs", []),
            **self.extra_meta,
            **more_meta,
        }
        _atomic_write_text(self.trial_dir / "meta.json", _dump_json(meta))
        checksums = {
            name: sha256_file(self.trial_dir / name)
            for name in STREAM_FILES + ("meta.json",)
        }
        update_manifest(
            self.campaign_dir,
            trial_entry={
                "trial_id": self.spec.trial_id,
                "path": f"trials/{self.spec.trial_id}",
                "result": result.label.value,
                "files": checksums,
            },
        )
        self._finalized = True
        return read_trial(self.trial_dir)

    def abandon(self, reason: str) -> None:
        """Keep partial output under .partial suffixes and note the loss."""
        self._close_streams()
        for name in STREAM_FILES:
            path = self.trial_dir / name
            if path.exists():
                os.replace(path, path.with_suffix(path.suffix + ".partial"))
        update_manifest(
            self.campaign_dir,
            annotation={"trial_id": self.spec.trial_id, "note": f"abandoned: {reason}"},
        )


def update_manifest(campaign_dir: str | Path, trial_entry: dict | None = None,
                    annotation: dict | None = None, campaign_spec: CampaignSpec | None = None,
                    campaign_id: str | None = None) -> dict:
    """Read-modify-write the campaign manifest atomically."""
    campaign_dir = Path(campaign_dir)
    campaign_dir.mkdir(parents=True, exist_ok=True)
    path = campaign_dir / "manifest.json"
    if path.exists():
        manifest = json.loads(path.read_text(encoding="utf-8"))
    else:
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "campaign_id": campaign_id or (campaign_spec.campaign_id if campaign_spec else campaign_dir.name),
            "campaign_spec": None,
            "trials": [],
            "annotations": [],
        }
    if campaign_spec is not None:
        manifest["campaign_spec"] = campaign_spec_to_dict(campaign_spec)
        manifest["campaign_id"] = campaign_spec.campaign_id
    if trial_entry is not None:
        manifest["trials"] = [
            t for t in manifest["trials"] if t["trial_id"] != trial_entry["trial_id"]
        ] + [trial_entry]
    if annotation is not None:
        manifest["annotations"].append(annotation)
    _atomic_write_text(path, _dump_json(manifest))
    return manifest


def trial_spec_to_dict(spec: TrialSpec) -> dict:
    return {
        "trial_id": spec.trial_id,
        "testbed": spec.testbed.value,
        "attachment": spec.attachment.value,
        "grasp": spec.grasp,
        "resistance": spec.resistance,
        "success_threshold": spec.success_threshold,
        "repetition_index": spec.repetition_index,
    }


def trial_spec_from_dict(data: dict) -> TrialSpec:
    return TrialSpec(
        trial_id=data["trial_id"],
        testbed=TestbedKind(data["testbed"]),
        attachment=AttachmentKind(data["attachment"]),
        grasp=data["grasp"],
        resistance=float(data["resistance"]),
        success_threshold=float(data["success_threshold"]),
        repetition_index=int(data["repetition_index"]),
    )


# ---------------------------------------------------------------------------
# reading
# ---------------------------------------------------------------------------

@dataclass
class TrialRecord:
    spec: TrialSpec
    result: TrialResult
    meta: dict
    testbed_rows: list[tuple]        # parsed per TESTBED_COLUMNS
    fsr_rows: list[tuple]            # (t, ch00, ...)
    manipulator_rows: list[tuple]    # (t, q..., qd...)
    path: Path
    complete: bool = True

    @property
    def opening_trace(self) -> list[tuple[float, float]]:
        return [(row[0], row[1]) for row in self.testbed_rows]

    def fsr_channel(self, channel: int) -> list[tuple[float, int]]:
        return [(row[0], row[1 + channel]) for row in self.fsr_rows]


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetError(f"{path} is empty")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]


def _parse_testbed(path: Path) -> list[tuple]:
    header, rows = _read_csv(path)
    if header != TESTBED_COLUMNS:
        raise DatasetError(f"{path} has unexpected columns {header}")
    return [
        (float(r[0]), float(r[1]), float(r[2]), float(r[3]), float(r[4]), r[5], int(r[6]))
        for r in rows
    ]


def _parse_fsr(path: Path) -> list[tuple]:
    header, rows = _read_csv(path)
    return [(float(r[0]), *[int(c) for c in r[1:]]) for r in rows]


def _parse_manipulator(path: Path) -> list[tuple]:
    header, rows = _read_csv(path)
    return [tuple(float(c) for c in r) for r in rows]


def read_trial(trial_dir: str | Path) -> TrialRecord:
    trial_dir = Path(trial_dir)
    meta_path = trial_dir / "meta.json"
    if not meta_path.exists():
        raise DatasetError(f"{trial_dir} has no meta.json (incomplete trial)")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DatasetError(
            f"unknown schema_version {meta.get('schema_version')!r} in {meta_path}"
        )
    spec = trial_spec_from_dict(meta["trial"])
    result = TrialResult(
        label=TrialLabel(meta["result"]["label"]),
        peak_opening=float(meta["result"]["peak_opening"]),
        pull_duration=float(meta["result"]["pull_duration"]),
    )
    return TrialRecord(
        spec=spec,
        result=result,
        meta=meta,
        testbed_rows=_parse_testbed(trial_dir / "testbed.csv"),
        fsr_rows=_parse_fsr(trial_dir / "fsr.csv"),
        manipulator_rows=_parse_manipulator(trial_dir / "manipulator.csv"),
        path=trial_dir,
    )


def write_trial_streams(record: TrialRecord, out_dir: str | Path) -> None:
    """Re-emit a record's stream files (used to prove byte round-trips)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "testbed.csv").open("w", encoding="utf-8", newline="") as f:
        f.write(",".join(TESTBED_COLUMNS) + "\n")
        for row in record.testbed_rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    with (out_dir / "fsr.csv").open("w", encoding="utf-8", newline="") as f:
        n = len(record.fsr_rows[0]) - 1 if record.fsr_rows else 0
        f.write("t," + ",".join(f"ch{i:02d}" for i in range(n)) + "\n")
        for row in record.fsr_rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    with (out_dir / "manipulator.csv").open("w", encoding="utf-8", newline="") as f:
        if record.manipulator_rows:
            n = (len(record.manipulator_rows[0]) - 1) // 2
            header = "t," + ",".join(f"q{i}" for i in range(n))
            header += "," + ",".join(f"qd{i}" for i in range(n))
            f.write(header + "\n")
            for row in record.manipulator_rows:
                f.write(",".join(fmt(v) for v in row) + "\n")
        else:
            f.write("t\n")


@dataclass
class CampaignData:
    manifest: dict
    records: list[TrialRecord]
    incomplete: list[str] = field(default_factory=list)


def load_campaign(campaign_dir: str | Path) -> CampaignData:
    """Load every finalized trial; incomplete trials are listed, not fatal."""
    campaign_dir = Path(campaign_dir)
    manifest_path = campaign_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("schema_version") != SCHEMA_VERSION:
            raise DatasetError(f"unknown manifest schema_version in {manifest_path}")
    else:
        manifest = {"schema_version": SCHEMA_VERSION, "campaign_id": campaign_dir.name,
                    "campaign_spec": None, "trials": [], "annotations": []}
    records, incomplete = [], []
    for entry in manifest["trials"]:
        trial_dir = campaign_dir / entry["path"]
        try:
            records.append(read_trial(trial_dir))
        except (DatasetError, OSError):
            incomplete.append(entry["trial_id"])
    # trials on disk but never finalized (e.g. crash before finalize)
    trials_root = campaign_dir / "trials"
    if trials_root.is_dir():
        listed = {e["trial_id"] for e in manifest["trials"]}
        for child in sorted(trials_root.iterdir()):
            if child.is_dir() and child.name not in listed:
                incomplete.append(child.name)
    return CampaignData(manifest=manifest, records=records, incomplete=incomplete)


@dataclass
class Violation:
    file: str
    message: str


def validate_campaign(campaign_dir: str | Path) -> list[Violation]:
    """Check schema, checksums, monotonicity, and stream alignment.

    Returns every violation found rather than stopping at the first.
    """
    campaign_dir = Path(campaign_dir)
    violations: list[Violation] = []
    manifest_path = campaign_dir / "manifest.json"
    if not manifest_path.exists():
        return violations  # empty campaign directory is valid
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return [Violation("manifest.json", f"unreadable: {exc}")]
    if manifest.get("schema_version") != SCHEMA_VERSION:
        violations.append(
            Violation("manifest.json", f"unknown schema_version {manifest.get('schema_version')!r}")
        )
        return violations

    for entry in manifest.get("trials", []):
        trial_rel = entry["path"]
        trial_dir = campaign_dir / trial_rel
        for name, expected in entry.get("files", {}).items():
            path = trial_dir / name
            if not path.exists():
                violations.append(Violation(f"{trial_rel}/{name}", "missing file"))
                continue
            actual = sha256_file(path)
            if actual != expected:
                violations.append(Violation(f"{trial_rel}/{name}", "checksum mismatch"))
        try:
            record = read_trial(trial_dir)
        except (DatasetError, ValueError, KeyError, OSError) as exc:
            violations.append(Violation(trial_rel, f"unreadable trial: {exc}"))
            continue
        violations.extend(_validate_record(record, trial_rel))
    return violations


def _validate_record(record: TrialRecord, trial_rel: str) -> list[Violation]:
    out = []
    for name, rows in [
        ("testbed.csv", record.testbed_rows),
        ("fsr.csv", record.fsr_rows),
        ("manipulator.csv", record.manipulator_rows),
    ]:
        times = [r[0] for r in rows]
        if any(b < a for a, b in zip(times, times[1:])):
            out.append(Violation(f"{trial_rel}/{name}", "timestamps not monotone"))
    expected_channels = {AttachmentKind.HANDLE: 12, AttachmentKind.KNOB: 5}[record.spec.attachment]
    for row in record.fsr_rows:
        if len(row) != 1 + expected_channels:
            out.append(Violation(f"{trial_rel}/fsr.csv",
                                 f"expected {1 + expected_channels} columns, got {len(row)}"))
            break
    testbed_times = [r[0] for r in record.testbed_rows]
    for row in record.fsr_rows:
        t = row[0]
        if not _has_neighbor(testbed_times, t, STREAM_ALIGNMENT_TOLERANCE_S):
            out.append(Violation(f"{trial_rel}/fsr.csv",
                                 f"frame at t={t} has no testbed frame within 10 ms"))
            break
    return out


def _has_neighbor(sorted_times: list[float], t: float, tol: float) -> bool:
    import bisect

    i = bisect.bisect_left(sorted_times, t)
    for j in (i - 1, i, i + 1):
        if 0 <= j < len(sorted_times) and abs(sorted_times[j] - t) <= tol:
            return True
    return False


# ---------------------------------------------------------------------------
# playback
# ---------------------------------------------------------------------------

def playback(record: TrialRecord, rate: float = 1.0,
             sleep: Callable[[float], None] = time.sleep) -> Iterator[tuple[str, tuple]]:
    """Re-emit recorded rows in time order with original spacing / rate.

    rate=math.inf plays back as fast as possible.  Payloads are exactly the
    recorded rows.
    """
    if rate <= 0.0:
        raise ValueError("rate must be positive")
    labeled = (
        [("testbed", r) for r in record.testbed_rows]
        + [("fsr", r) for r in record.fsr_rows]
        + [("manipulator", r) for r in record.manipulator_rows]
    )
    order = {"testbed": 0, "fsr": 1, "manipulator": 2}
    labeled.sort(key=lambda item: (item[1][0], order[item[0]]))
    last_t: Optional[float] = None
    for stream, row in labeled:
        t = row[0]
        if last_t is not None and math.isfinite(rate):
            delay = (t - last_t) / rate
            if delay > 0.0:
                sleep(delay)
        last_t = t
        yield stream, row
