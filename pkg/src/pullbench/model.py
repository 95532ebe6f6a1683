"""Shared domain vocabulary: testbeds, pull attachments, grasps, trials, campaigns.

Everything here is a plain value type plus pure functions; nothing mutates
after construction, so instances are safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class TestbedKind(Enum):
    DOOR = "door"
    DRAWER = "drawer"

    @property
    def opening_range(self) -> float:
        """Upper bound of the opening coordinate (degrees for door, mm for drawer)."""
        return _OPENING_RANGE[self]

    @property
    def max_resistance(self) -> float:
        """Maximum configurable resistance in newtons."""
        return _MAX_RESISTANCE[self]

    @property
    def units(self) -> str:
        return "deg" if self is TestbedKind.DOOR else "mm"

    @property
    def closed_tolerance(self) -> float:
        """Opening below this counts as closed (same value the reset logic uses)."""
        return _CLOSED_TOLERANCE[self]

    @property
    def default_success_threshold(self) -> float:
        return _DEFAULT_SUCCESS_THRESHOLD[self]


# Door swings 0..110 deg on the cabinet hinge; drawer travels 0..350 mm on its
# slides.  Resistance ceilings are the electromagnet / disk-brake limits.
_OPENING_RANGE = {TestbedKind.DOOR: 110.0, TestbedKind.DRAWER: 350.0}
_MAX_RESISTANCE = {TestbedKind.DOOR: 10.0, TestbedKind.DRAWER: 25.0}
_CLOSED_TOLERANCE = {TestbedKind.DOOR: 0.5, TestbedKind.DRAWER: 5.0}
_DEFAULT_SUCCESS_THRESHOLD = {TestbedKind.DOOR: 45.0, TestbedKind.DRAWER: 200.0}


class AttachmentKind(Enum):
    HANDLE = "handle"
    KNOB = "knob"


@dataclass(frozen=True)
class PullAttachment:
    """An instrumented handle or knob with its sensor layout.

    fsr_positions are (x, y, z) millimeters in the attachment frame; the z axis
    runs along the handle grip, origin at the grip center.
    """

    kind: AttachmentKind
    fsr_positions: tuple[tuple[float, float, float], ...]

    def __post_init__(self) -> None:
        expected = CHANNEL_COUNTS[self.kind]
        if len(self.fsr_positions) != expected:
            raise ValueError(
                f"{self.kind.value} attachment requires {expected} sensor positions, "
                f"got {len(self.fsr_positions)}"
            )

    @property
    def channel_count(self) -> int:
        return len(self.fsr_positions)

    def surface_error(self, point: Sequence[float]) -> float:
        """Distance (mm) from a point to the attachment's nominal grip surface."""
        x, y, z = point
        if self.kind is AttachmentKind.HANDLE:
            radial = abs(math.hypot(x, y) - HANDLE_GRIP_RADIUS_MM)
            axial = max(0.0, abs(z) - HANDLE_GRIP_HALF_LENGTH_MM)
            return math.hypot(radial, axial)
        return abs(math.sqrt(x * x + y * y + z * z) - KNOB_RADIUS_MM)


CHANNEL_COUNTS = {AttachmentKind.HANDLE: 12, AttachmentKind.KNOB: 5}

# Handle grip: a cylinder, sensors in 2 columns x 6 rows.  Knob: 5 sensors
# equally spaced around the equator.  Coordinates are a concrete reading of
# "evenly distributed"; swap via PullAttachment if a different layout is built.
HANDLE_GRIP_RADIUS_MM = 12.0
HANDLE_GRIP_HALF_LENGTH_MM = 75.0
HANDLE_ROW_SPACING_MM = 30.0
HANDLE_COLUMN_AZIMUTHS_DEG = (-45.0, 45.0)
KNOB_RADIUS_MM = 25.0


def _handle_positions() -> tuple[tuple[float, float, float], ...]:
    positions = []
    for row in range(6):
        z = (row - 2.5) * HANDLE_ROW_SPACING_MM
        for az_deg in HANDLE_COLUMN_AZIMUTHS_DEG:
            az = math.radians(az_deg)
            positions.append(
                (HANDLE_GRIP_RADIUS_MM * math.cos(az), HANDLE_GRIP_RADIUS_MM * math.sin(az), z)
            )
    return tuple(positions)


def _knob_positions() -> tuple[tuple[float, float, float], ...]:
    return tuple(
        (KNOB_RADIUS_MM * math.cos(2 * math.pi * k / 5), KNOB_RADIUS_MM * math.sin(2 * math.pi * k / 5), 0.0)
        for k in range(5)
    )


def standard_attachment(kind: AttachmentKind) -> PullAttachment:
    if kind is AttachmentKind.HANDLE:
        return PullAttachment(kind, _handle_positions())
    return PullAttachment(kind, _knob_positions())


@dataclass(frozen=True)
class GraspType:
    id: str
    description: str


# The five knob grasps are the published door-knob set.  Handle grasp names
# are this suite's own (no published list exists); they mirror the knob set.
KNOB_GRASPS = (
    GraspType("palm-horizontal", "Palm horizontal grasp (straight on)"),
    GraspType("fingertip-horizontal", "Fingertip horizontal grasp (straight on)"),
    GraspType("top-down-horizontal", "Top down horizontal grasp"),
    GraspType("fingertip-angled", "Fingertip angled grasp"),
    GraspType("fingertip-vertical", "Fingertip vertical grasp"),
)

HANDLE_GRASPS = (
    GraspType("palm-wrap", "Full palm wrap around the grip"),
    GraspType("fingertip-wrap", "Fingertip-only wrap around the grip"),
    GraspType("top-down-wrap", "Top down wrap over the grip"),
    GraspType("angled-wrap", "Angled approach wrap"),
    GraspType("vertical-wrap", "Vertical approach wrap"),
)

GRASP_CATALOG: dict[str, GraspType] = {g.id: g for g in KNOB_GRASPS + HANDLE_GRASPS}


class ResistanceRangeError(ValueError):
    """Resistance outside the testbed's configurable range."""

    def __init__(self, value: float, maximum: float):
        self.value = value
        self.maximum = maximum
        super().__init__(f"resistance {value} N out of range [0, {maximum}] N")


def validate_resistance(testbed: TestbedKind, value: float) -> float:
    if not math.isfinite(value) or value < 0.0 or value > testbed.max_resistance:
        raise ResistanceRangeError(value, testbed.max_resistance)
    return float(value)


@dataclass(frozen=True)
class TrialSpec:
    trial_id: str
    testbed: TestbedKind
    attachment: AttachmentKind
    grasp: str
    resistance: float
    success_threshold: float
    repetition_index: int

    def __post_init__(self) -> None:
        validate_resistance(self.testbed, self.resistance)
        if not 0.0 < self.success_threshold <= self.testbed.opening_range:
            raise ValueError(
                f"success threshold {self.success_threshold} outside "
                f"(0, {self.testbed.opening_range}] {self.testbed.units}"
            )
        if self.repetition_index < 0:
            raise ValueError("repetition_index must be >= 0")


@dataclass(frozen=True)
class CampaignSpec:
    campaign_id: str
    testbed: TestbedKind
    attachment_grasps: Mapping[AttachmentKind, tuple[str, ...]]
    resistances: tuple[float, ...]
    repetitions: int
    success_threshold: float

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        for r in self.resistances:
            validate_resistance(self.testbed, r)
        if not 0.0 < self.success_threshold <= self.testbed.opening_range:
            raise ValueError("success threshold outside testbed opening range")

    @property
    def expansion_count(self) -> int:
        grasp_total = sum(len(g) for g in self.attachment_grasps.values())
        return grasp_total * len(self.resistances) * self.repetitions


def format_resistance(value: float) -> str:
    """Compact resistance token used inside trial ids (25 -> '25', 7.5 -> '7.5')."""
    return format(value, "g")


def expand_campaign(spec: CampaignSpec) -> list[TrialSpec]:
    """Expand a campaign grid into its trials.

    Order is (attachment, grasp, resistance, repetition), each in the order
    given by the spec, so ids and ordering are stable across runs.
    """
    trials: list[TrialSpec] = []
    for attachment in (AttachmentKind.HANDLE, AttachmentKind.KNOB):
        for grasp in spec.attachment_grasps.get(attachment, ()):
            for resistance in spec.resistances:
                for rep in range(spec.repetitions):
                    trial_id = (
                        f"{spec.campaign_id}-{attachment.value}-{grasp}"
                        f"-r{format_resistance(resistance)}-{rep:02d}"
                    )
                    trials.append(
                        TrialSpec(
                            trial_id=trial_id,
                            testbed=spec.testbed,
                            attachment=attachment,
                            grasp=grasp,
                            resistance=resistance,
                            success_threshold=spec.success_threshold,
                            repetition_index=rep,
                        )
                    )
    assert len(trials) == spec.expansion_count
    return trials


class TrialLabel(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    ABORTED = "aborted"
    ERROR = "error"


@dataclass(frozen=True)
class TrialResult:
    label: TrialLabel
    peak_opening: float
    pull_duration: float


def evaluate_success(
    opening_trace: Sequence[tuple[float, float]],
    spec: TrialSpec,
    terminated_normally: bool,
) -> TrialResult:
    """Judge a trial from its (timestamp, opening) trace.

    Success means the opening peak reached the spec threshold and the trial
    terminated normally.  pull_duration is the span between the first and last
    samples where the opening exceeds the closed tolerance.  An empty trace
    yields an ERROR result rather than raising.
    """
    if not opening_trace:
        return TrialResult(TrialLabel.ERROR, peak_opening=0.0, pull_duration=0.0)

    peak = max(v for _, v in opening_trace)
    tol = spec.testbed.closed_tolerance
    open_times = [t for t, v in opening_trace if v > tol]
    duration = (open_times[-1] - open_times[0]) if open_times else 0.0

    if not terminated_normally:
        label = TrialLabel.ABORTED
    elif peak >= spec.success_threshold:
        label = TrialLabel.SUCCESS
    else:
        label = TrialLabel.FAILURE
    return TrialResult(label, peak_opening=peak, pull_duration=duration)


def load_campaign_spec(path: str | Path) -> CampaignSpec:
    """Load a campaign grid from its JSON config file (schema in docs/campaigns.md)."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return campaign_spec_from_dict(data)


def campaign_spec_from_dict(data: Mapping) -> CampaignSpec:
    try:
        testbed = TestbedKind(data["testbed"])
        attachment_grasps = {
            AttachmentKind(k): tuple(v) for k, v in data["attachment_grasps"].items()
        }
        spec = CampaignSpec(
            campaign_id=str(data["campaign_id"]),
            testbed=testbed,
            attachment_grasps=attachment_grasps,
            resistances=tuple(float(r) for r in data["resistances_n"]),
            repetitions=int(data["repetitions"]),
            success_threshold=float(
                data.get("success_threshold", testbed.default_success_threshold)
            ),
        )
    except KeyError as exc:
        raise ValueError(f"campaign config missing field {exc}") from exc
    for grasps in spec.attachment_grasps.values():
        for g in grasps:
            if g not in GRASP_CATALOG:
                raise ValueError(f"unknown grasp id {g!r}")
    return spec


def campaign_spec_to_dict(spec: CampaignSpec) -> dict:
    return {
        "campaign_id": spec.campaign_id,
        "testbed": spec.testbed.value,
        "attachment_grasps": {
            k.value: list(v) for k, v in spec.attachment_grasps.items()
        },
        "resistances_n": list(spec.resistances),
        "repetitions": spec.repetitions,
        "success_threshold": spec.success_threshold,
    }


def door_grid_campaign() -> CampaignSpec:
    """The published door grid: 5+5 grasps x {0,5,10} N x 10 reps = 300 trials."""
    return CampaignSpec(
        campaign_id="door-grid",
        testbed=TestbedKind.DOOR,
        attachment_grasps={
            AttachmentKind.HANDLE: tuple(g.id for g in HANDLE_GRASPS),
            AttachmentKind.KNOB: tuple(g.id for g in KNOB_GRASPS),
        },
        resistances=(0.0, 5.0, 10.0),
        repetitions=10,
        success_threshold=TestbedKind.DOOR.default_success_threshold,
    )


def drawer_grid_campaign() -> CampaignSpec:
    """The published drawer grid: 4+2 grasps x {0,7,10,15,20,25} N x 10 reps = 360."""
    return CampaignSpec(
        campaign_id="drawer-grid",
        testbed=TestbedKind.DRAWER,
        attachment_grasps={
            AttachmentKind.HANDLE: tuple(g.id for g in HANDLE_GRASPS[:4]),
            AttachmentKind.KNOB: tuple(g.id for g in KNOB_GRASPS[:2]),
        },
        resistances=(0.0, 7.0, 10.0, 15.0, 20.0, 25.0),
        repetitions=10,
        success_threshold=TestbedKind.DRAWER.default_success_threshold,
    )
