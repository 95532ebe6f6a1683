"""Deterministic fixed-step physics for the door and drawer benches.

Drawer: 1D mass with disk-brake force, Coulomb and viscous friction.
Door: rigid body about the hinge; electromagnets hold with the full setting
force until the door cracks past the release angle, then drop to zero.

Position updates use x += v*dt + a*dt^2/2 with per-step constant
acceleration, which reproduces constant-force motion exactly; velocity is
explicit Euler.  Identical params (seed included) and command/step schedule
give bit-identical sensor streams.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ..model import (
    AttachmentKind,
    PullAttachment,
    TestbedKind,
    standard_attachment,
    validate_resistance,
)
from . import fsr
from .params import MAX_STEP_S, SimParams

FLAG_DISLODGED = 1
FLAG_AT_HARD_STOP = 2

DEG_TO_RAD = math.pi / 180.0


class ResetMotor(Enum):
    IDLE = "idle"
    WINDING_IN = "winding_in"
    UNWINDING_SLACK = "unwinding_slack"


class SimStateError(RuntimeError):
    """Operation not legal in the bench's current state."""


@dataclass(frozen=True)
class TestbedState:
    opening: float              # deg (door) or mm (drawer)
    velocity: float             # units/s
    resistance_setting: float   # newtons
    brake_or_magnet_engaged: bool
    reset_motor: ResetMotor
    slack_remaining: float      # mm of reset string beyond taut
    dislodged: bool
    clock: float                # s, monotonic sim time
    fault: Optional[str] = None
    at_hard_stop: bool = False


@dataclass(frozen=True)
class SensorFrame:
    timestamp: float
    seq: int
    opening: float              # ground truth (mirrors measured on real hardware)
    opening_measured: float     # quantized + noisy
    velocity: float             # ground truth
    fsr_counts: tuple[int, ...]
    resistance_setting: float
    reset_motor: ResetMotor
    flags: int

    @property
    def dislodged(self) -> bool:
        return bool(self.flags & FLAG_DISLODGED)

    @property
    def at_hard_stop(self) -> bool:
        return bool(self.flags & FLAG_AT_HARD_STOP)


@dataclass(frozen=True)
class GripContact:
    contact_points: tuple[tuple[float, float, float], ...]  # attachment frame, mm
    normal_forces: tuple[float, ...]                        # N per contact
    tangential_load: float                                  # N, shared pull load
    friction_coefficient: float
    slipping: bool = False

    @property
    def total_normal(self) -> float:
        return sum(self.normal_forces)

    @property
    def friction_limit(self) -> float:
        return self.friction_coefficient * self.total_normal


def validate_grip(grip: GripContact, attachment: PullAttachment) -> None:
    if len(grip.contact_points) != len(grip.normal_forces):
        raise ValueError("one normal force per contact point required")
    for load in grip.normal_forces:
        if load < 0.0 or not math.isfinite(load):
            raise ValueError(f"contact normal force must be finite and >= 0, got {load}")
    for point in grip.contact_points:
        err = attachment.surface_error(point)
        if err > 2.0:
            raise ValueError(f"contact point {point} is {err:.1f} mm off the grip surface")


class TestbedSim:
    """Single-writer simulator; snapshots returned by ops are immutable."""

    RESET_DEBOUNCE_SAMPLES = 3
    RESET_SENSOR_RATE_HZ = 50.0  # closed-check cadence while winding in

    def __init__(
        self,
        testbed: TestbedKind,
        attachment: PullAttachment | AttachmentKind = AttachmentKind.HANDLE,
        params: SimParams | None = None,
    ):
        self.testbed = testbed
        if isinstance(attachment, AttachmentKind):
            attachment = standard_attachment(attachment)
        self.attachment = attachment
        self.params = params if params is not None else SimParams()
        self._rng = np.random.default_rng(self.params.rng_seed)

        # Generalized coordinate: meters (drawer) or radians (door).
        self._q = 0.0
        self._qd = 0.0
        self._clock = 0.0
        self._setting = 0.0
        self._engaged = False
        self._motor = ResetMotor.IDLE
        self._motor_purpose = ""
        self._slack_mm = self.params.slack_target
        self._dislodged = False
        self._fault: Optional[str] = None
        self._at_stop = False
        self._seq = 0
        self._brake_noise = 0.0
        self._reset_started = 0.0
        self._reset_debounce = 0
        self._reset_check_accum = 0.0
        self._frozen_measurement: Optional[float] = None
        self._pull_engaged = False
        self._events: list[dict] = []
        self.last_brake_hold = 0.0  # diagnostics: realized brake/magnet force

    # ------------------------------------------------------------------
    # unit helpers
    # ------------------------------------------------------------------

    def _units_per_q(self) -> float:
        """State units (deg or mm) per generalized unit (rad or m)."""
        return 1.0 / DEG_TO_RAD if self.testbed is TestbedKind.DOOR else 1000.0

    def _range_q(self) -> float:
        return self.testbed.opening_range / self._units_per_q()

    def _string_mm_per_q(self) -> float:
        """Reset-string millimeters paid out per generalized unit of opening."""
        if self.testbed is TestbedKind.DOOR:
            return self.params.door_string_radius * 1000.0  # mm per radian
        return 1000.0  # mm per meter

    @property
    def opening(self) -> float:
        return self._q * self._units_per_q()

    @property
    def state(self) -> TestbedState:
        return TestbedState(
            opening=self.opening,
            velocity=self._qd * self._units_per_q(),
            resistance_setting=self._setting,
            brake_or_magnet_engaged=self._engaged,
            reset_motor=self._motor,
            slack_remaining=self._slack_mm,
            dislodged=self._dislodged,
            clock=self._clock,
            fault=self._fault,
            at_hard_stop=self._at_stop,
        )

    def pop_events(self) -> list[dict]:
        events, self._events = self._events, []
        return events

    # ------------------------------------------------------------------
    # commands
    # ------------------------------------------------------------------

    def set_resistance(self, value: float) -> TestbedState:
        if self._motor is not ResetMotor.IDLE:
            raise SimStateError("cannot change resistance while the reset motor is running")
        validate_resistance(self.testbed, value)
        self._setting = float(value)
        self._engaged = self._setting > 0.0
        return self.state

    def begin_reset(self) -> TestbedState:
        if self._pull_engaged:
            raise SimStateError("cannot reset while a pull is active")
        self._motor = ResetMotor.WINDING_IN
        self._motor_purpose = "reset"
        self._engaged = False  # brake/magnet released for the whole reset
        self._reset_started = self._clock
        self._reset_debounce = 0
        self._reset_check_accum = 0.0
        return self.state

    def begin_release_slack(self) -> TestbedState:
        """Pay out reset-string slack; immediate no-op if already at target."""
        if self._pull_engaged:
            raise SimStateError("cannot unwind slack while a pull is active")
        if self._slack_mm >= self.params.slack_target:
            self._events.append({"name": "slack_ready"})
            return self.state
        self._motor = ResetMotor.UNWINDING_SLACK
        self._motor_purpose = "slack"
        self._reset_started = self._clock
        return self.state

    def abort(self) -> TestbedState:
        """Halt any reset motion and release the actuators."""
        self._motor = ResetMotor.IDLE
        self._motor_purpose = ""
        self._engaged = False
        self._qd = 0.0
        self._pull_engaged = False
        return self.state

    def clear_fault(self) -> TestbedState:
        self._dislodged = False
        self._fault = None
        return self.state

    def check_safety(self, inward_force: float) -> TestbedState:
        if not self._dislodged and inward_force > self.params.dislodge_threshold:
            self._dislodged = True
            self._fault = "dislodged"
            self._qd = 0.0
            self._events.append({"name": "fault", "fault": "dislodged"})
        return self.state

    # fault injection hooks for tests and fault drills
    def inject_frozen_position(self, value: float) -> None:
        self._frozen_measurement = float(value)

    def clear_injected_faults(self) -> None:
        self._frozen_measurement = None

    # ------------------------------------------------------------------
    # stepping
    # ------------------------------------------------------------------

    def step(self, applied_pull: float, dt: float) -> TestbedState:
        if not 0.0 < dt <= MAX_STEP_S:
            raise ValueError(f"dt must be in (0, {MAX_STEP_S}] s, got {dt}")
        if not math.isfinite(applied_pull):
            raise ValueError("applied pull force must be finite")

        self._clock += dt
        if self._dislodged:
            return self.state  # physical state frozen until the fault is cleared

        if self._motor is not ResetMotor.IDLE:
            self._step_motor(dt)
        else:
            self._step_dynamics(applied_pull, dt)
        return self.state

    def _brake_hold_force(self, dt: float) -> float:
        """Resistive hold force (N drawer / N*m door) from the brake or magnets."""
        if self.testbed is TestbedKind.DRAWER:
            noise = 0.0
            if self.params.brake_noise_amplitude > 0.0:
                # Low-passed uniform noise stays inside [-1, 1] by convexity,
                # so |F_brake - setting| <= amplitude * setting always holds.
                alpha = 1.0 - math.exp(
                    -2.0 * math.pi * self.params.brake_noise_bandwidth * dt
                )
                white = self._rng.uniform(-1.0, 1.0)
                self._brake_noise += alpha * (white - self._brake_noise)
                noise = self.params.brake_noise_amplitude * self._brake_noise
            self.last_brake_hold = self._setting * (1.0 + noise) if self._engaged else 0.0
            return self.last_brake_hold
        # Door magnets: full force below the release angle, zero once open.
        if self._engaged and self.opening < self.params.magnet_release_angle:
            self.last_brake_hold = self._setting
            return self._setting * self.params.handle_radius  # as hinge torque
        self.last_brake_hold = 0.0
        return 0.0

    def _step_dynamics(self, pull: float, dt: float) -> None:
        p = self.params
        if self.testbed is TestbedKind.DRAWER:
            drive = pull
            inertia = p.drawer_mass
        else:
            drive = pull * p.handle_radius
            inertia = p.door_inertia

        hold = self._brake_hold_force(dt) + p.coulomb_friction
        v = self._qd
        if v == 0.0 and abs(drive) <= hold:
            accel = 0.0  # static: below breakaway, nothing moves
        else:
            direction = math.copysign(1.0, v if v != 0.0 else drive)
            accel = (drive - hold * direction - p.viscous_damping * v) / inertia

        q_prev = self._q
        q_new = self._q + v * dt + 0.5 * accel * dt * dt
        v_new = v + accel * dt
        if v != 0.0 and v_new * v < 0.0:
            v_new = 0.0  # friction cannot reverse motion within a step

        # String coupling: opening consumes slack mm-for-mm; a taut string is
        # a hard stop because further travel would back-drive the reset motor.
        delta_mm = (q_new - q_prev) * self._string_mm_per_q()
        if delta_mm > 0.0:
            if delta_mm >= self._slack_mm:
                q_new = q_prev + self._slack_mm / self._string_mm_per_q()
                v_new = 0.0
                self._slack_mm = 0.0
            else:
                self._slack_mm -= delta_mm
        elif delta_mm < 0.0:
            self._slack_mm -= delta_mm  # closing pays slack back out

        self._at_stop = False
        range_q = self._range_q()
        if q_new <= 0.0:
            q_new, v_new, self._at_stop = 0.0, 0.0, True
        elif q_new >= range_q:
            q_new, v_new, self._at_stop = range_q, 0.0, True
        self._q, self._qd = q_new, v_new

    def _step_motor(self, dt: float) -> None:
        p = self.params
        rate_q = p.reset_speed / self._units_per_q()
        rate_mm = rate_q * self._string_mm_per_q()

        if self._motor is ResetMotor.WINDING_IN:
            if self._slack_mm > 0.0:
                # take-up: the motor is not yet coupled to the door/drawer,
                # so the closed check would only ever see noise here
                self._slack_mm = max(0.0, self._slack_mm - rate_mm * dt)
                self._qd = 0.0
            else:
                self._reset_check_accum += dt
                if self._reset_check_accum >= 1.0 / self.RESET_SENSOR_RATE_HZ:
                    self._reset_check_accum = 0.0
                    measured = self._measure_opening()
                    stop_at = self.testbed.closed_tolerance * p.reset_stop_fraction
                    if measured <= stop_at:
                        self._reset_debounce += 1
                    else:
                        self._reset_debounce = 0
                    if self._reset_debounce >= self.RESET_DEBOUNCE_SAMPLES:
                        self._motor = ResetMotor.UNWINDING_SLACK
                        self._qd = 0.0
                        return
                self._q = max(0.0, self._q - rate_q * dt)
                self._qd = -rate_q if self._q > 0.0 else 0.0
            if self._clock - self._reset_started > p.effective_reset_timeout(self.testbed):
                self._motor = ResetMotor.IDLE
                self._motor_purpose = ""
                self._qd = 0.0
                self._fault = "reset_timeout"
                self._events.append({"name": "fault", "fault": "reset_timeout"})
        elif self._motor is ResetMotor.UNWINDING_SLACK:
            self._qd = 0.0
            self._slack_mm += rate_mm * dt
            if self._slack_mm >= p.slack_target:
                self._motor = ResetMotor.IDLE
                purpose, self._motor_purpose = self._motor_purpose, ""
                self._engaged = self._setting > 0.0  # brake re-engages after reset
                self._events.append(
                    {"name": "reset_complete" if purpose == "reset" else "slack_ready"}
                )

    # ------------------------------------------------------------------
    # grip and pull
    # ------------------------------------------------------------------

    def apply_grip_and_pull(
        self, grip: GripContact, commanded_pull: float, dt: float
    ) -> tuple[TestbedState, GripContact]:
        """Transmit a pull through the grip's friction cone, slipping if exceeded.

        While slipping, contact points migrate along the grip surface and
        normal readings decay (silicone force redistribution).
        """
        validate_grip(grip, self.attachment)
        if not math.isfinite(commanded_pull) or commanded_pull < 0.0:
            raise ValueError("commanded pull must be finite and >= 0")

        limit = grip.friction_limit
        transmitted = min(commanded_pull, limit)
        slipping = commanded_pull > limit + 1e-12

        if slipping:
            decay = self.params.slip_decay_per_100ms ** (dt / 0.1)
            travel = self.params.slip_rate_mm_s * dt
            points = tuple(self._slip_point(pt, travel) for pt in grip.contact_points)
            normals = tuple(n * decay for n in grip.normal_forces)
        else:
            points = grip.contact_points
            normals = grip.normal_forces

        new_grip = replace(
            grip,
            contact_points=points,
            normal_forces=normals,
            tangential_load=transmitted,
            slipping=slipping,
        )
        self._pull_engaged = commanded_pull > 0.0
        state = self.step(transmitted, dt)
        return state, new_grip

    def release_pull(self) -> None:
        self._pull_engaged = False

    def _slip_point(
        self, point: tuple[float, float, float], travel_mm: float
    ) -> tuple[float, float, float]:
        x, y, z = point
        if self.attachment.kind is AttachmentKind.HANDLE:
            # Slide along the grip axis, stopping at the end of the cylinder.
            from ..model import HANDLE_GRIP_HALF_LENGTH_MM

            return (x, y, min(z + travel_mm, HANDLE_GRIP_HALF_LENGTH_MM))
        # Knob: slide around the equator.
        radius = math.hypot(x, y)
        if radius < 1e-9:
            return point
        az = math.atan2(y, x) + travel_mm / radius
        return (radius * math.cos(az), radius * math.sin(az), z)

    # ------------------------------------------------------------------
    # sensing
    # ------------------------------------------------------------------

    def _measure_opening(self) -> float:
        if self._frozen_measurement is not None:
            return self._frozen_measurement
        true = self.opening
        p = self.params
        if self.testbed is TestbedKind.DRAWER:
            noisy = true + (self._rng.normal(0.0, p.drawer_tof_noise_mm) if p.sensor_noise else 0.0)
            quant = p.drawer_tof_quant_mm
        else:
            noisy = true + (self._rng.normal(0.0, p.door_angle_noise_deg) if p.sensor_noise else 0.0)
            quant = 360.0 / (1 << p.door_angle_bits)
        return round(noisy / quant) * quant

    def sense(self, grip: GripContact | None = None) -> SensorFrame:
        p = self.params
        measured = self._measure_opening()

        if grip is None or not grip.contact_points:
            forces: Sequence[float] = [0.0] * self.attachment.channel_count
        else:
            forces = fsr.channel_forces(
                self.attachment.fsr_positions,
                grip.contact_points,
                grip.normal_forces,
                p.fsr_spread_sigma_mm,
            )
        counts = []
        for f in forces:
            c = fsr.force_to_counts(f, p)
            if p.sensor_noise and p.fsr_count_noise > 0.0:
                c += round(self._rng.normal(0.0, p.fsr_count_noise))
            counts.append(min(max(c, 0), p.adc_full_scale))

        flags = (FLAG_DISLODGED if self._dislodged else 0) | (
            FLAG_AT_HARD_STOP if self._at_stop else 0
        )
        frame = SensorFrame(
            timestamp=self._clock,
            seq=self._seq,
            opening=self.opening,
            opening_measured=measured,
            velocity=self._qd * self._units_per_q(),
            fsr_counts=tuple(counts),
            resistance_setting=self._setting,
            reset_motor=self._motor,
            flags=flags,
        )
        self._seq += 1
        return frame
