"""Scripted manipulator: canned grasp-and-pull behaviors with an action-style
goal/feedback/result interface.

The manipulator is physically coupled to the simulator (its tick runs inside
the daemon clock loop, like a real arm shares the testbed's physics), while
goals, feedback, and results cross threads to the orchestrator.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import AttachmentKind, TestbedKind, standard_attachment
from .sim import GripContact, TestbedSim

FEEDBACK_RATE_HZ = 50.0
JOINT_COUNT = 7

_HOME = (0.0, 0.4, 0.0, 1.2, 0.0, 0.8, 0.0)
_PREGRASP = (0.3, 0.8, -0.2, 1.5, 0.1, 1.0, 0.2)
_PULLED = (0.45, 0.95, -0.3, 1.35, 0.15, 1.05, 0.2)


@dataclass(frozen=True)
class PullProfile:
    """How the arm pulls once the grasp is set.

    velocity mode servos toward v_target (testbed units/s), ramping force as
    needed up to f_limit; force mode commands a fixed trapezoid.
    """

    mode: str = "velocity"      # "velocity" | "force"
    v_target: float = 100.0     # mm/s or deg/s
    f_limit: float = 35.0       # N actuator ceiling
    f_max: float = 20.0         # N, force-mode plateau
    ramp_s: float = 0.5
    duration_s: float = 3.0
    inward_push: float = 0.0    # N pressed into the testbed (fault drills)


@dataclass(frozen=True)
class GraspDefinition:
    grasp_id: str
    attachment: AttachmentKind
    channels: tuple[int, ...]       # FSR channels the fingers land on
    normal_per_contact: float       # N at full grip
    friction_coefficient: float = 0.8
    pose: tuple[float, ...] = (0.45, 0.0, 0.25, 0.0, 0.0, 1.5707963267948966)
    profile: PullProfile = field(default_factory=PullProfile)

    @property
    def total_normal(self) -> float:
        return self.normal_per_contact * len(self.channels)

    def make_grip(self) -> GripContact:
        attachment = standard_attachment(self.attachment)
        points = tuple(attachment.fsr_positions[c] for c in self.channels)
        return GripContact(
            contact_points=points,
            normal_forces=(self.normal_per_contact,) * len(points),
            tangential_load=0.0,
            friction_coefficient=self.friction_coefficient,
        )


def _handle(grasp_id, channels, normal):
    return GraspDefinition(grasp_id, AttachmentKind.HANDLE, channels, normal)


def _knob(grasp_id, channels, normal):
    return GraspDefinition(grasp_id, AttachmentKind.KNOB, channels, normal)


# Grip strengths separate the full-hand grasps (which hold through the top
# resistance settings) from fingertip grasps whose friction cone gives out.
DEFAULT_GRASP_LIBRARY: dict[str, GraspDefinition] = {
    g.grasp_id: g
    for g in [
        _handle("palm-wrap", (6, 7, 8, 9), 10.0),
        _handle("fingertip-wrap", (8, 9), 5.0),
        _handle("top-down-wrap", (4, 5, 6, 7), 6.0),
        _handle("angled-wrap", (7, 9, 11), 6.0),
        _handle("vertical-wrap", (2, 4, 6), 5.0),
        _knob("palm-horizontal", (0, 1, 2, 3, 4), 8.0),
        _knob("fingertip-horizontal", (0, 2), 5.0),
        _knob("top-down-horizontal", (1, 2, 3), 7.0),
        _knob("fingertip-angled", (0, 1), 5.0),
        _knob("fingertip-vertical", (2, 4), 5.0),
    ]
}


@dataclass(frozen=True)
class ManipulatorGoal:
    grasp_id: str
    attachment: AttachmentKind
    profile: Optional[PullProfile] = None   # None = grasp library default
    approach_s: float = 0.8
    grasp_s: float = 0.4
    retreat_s: float = 0.5                  # dwell after release; keeps the
                                            # grasp-release fall on the record


@dataclass(frozen=True)
class ManipulatorResult:
    completed: bool
    abort_reason: Optional[str] = None


class GoalHandle:
    def __init__(self) -> None:
        self._done = threading.Event()
        self._result: Optional[ManipulatorResult] = None

    def _finish(self, result: ManipulatorResult) -> None:
        if not self._done.is_set():        # result arrives exactly once
            self._result = result
            self._done.set()

    def wait_result(self, timeout: float) -> ManipulatorResult:
        if not self._done.wait(timeout):
            raise TimeoutError("manipulator result did not arrive")
        assert self._result is not None
        return self._result

    @property
    def done(self) -> bool:
        return self._done.is_set()


class ScriptedManipulator:
    """Replays grasp scripts against the simulated testbed.

    Feedback is emitted at a fixed sim-time rate with seeded per-joint noise,
    so runs are reproducible given the seed.
    """

    def __init__(self, grasp_library: dict[str, GraspDefinition] | None = None,
                 seed: int = 0, joint_noise_sigma: float = 0.002):
        self.grasp_library = dict(grasp_library or DEFAULT_GRASP_LIBRARY)
        self.joint_noise_sigma = joint_noise_sigma
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()
        self._goal: Optional[ManipulatorGoal] = None
        self._handle: Optional[GoalHandle] = None
        self._grasp: Optional[GraspDefinition] = None
        self._profile: Optional[PullProfile] = None
        self._stage = "idle"
        self._stage_t = 0.0
        self._servo_force = 0.0
        self._feedback: list[tuple[float, list[float], list[float]]] = []
        self._last_feedback_t = -math.inf
        self._abort_reason: Optional[str] = None
        self.current_grip: Optional[GripContact] = None

    @property
    def joint_count(self) -> int:
        return JOINT_COUNT

    @property
    def stage(self) -> str:
        return self._stage

    def send_goal(self, goal: ManipulatorGoal) -> GoalHandle:
        if goal.grasp_id not in self.grasp_library:
            raise KeyError(f"grasp {goal.grasp_id!r} is not in the library")
        grasp = self.grasp_library[goal.grasp_id]
        if grasp.attachment is not goal.attachment:
            raise ValueError(
                f"grasp {goal.grasp_id!r} targets the {grasp.attachment.value}, "
                f"goal says {goal.attachment.value}"
            )
        with self._lock:
            if self._goal is not None:
                raise RuntimeError("a goal is already active")
            self._goal = goal
            self._handle = GoalHandle()
            self._grasp = grasp
            self._profile = goal.profile or grasp.profile
            self._stage = "approach"
            self._stage_t = 0.0
            self._servo_force = 0.0
            self._abort_reason = None
            self.current_grip = None
            return self._handle

    def abort(self, reason: str = "operator abort") -> None:
        with self._lock:
            if self._goal is not None and self._handle is not None:
                self._abort_reason = reason

    def drain_feedback(self) -> list[tuple[float, list[float], list[float]]]:
        with self._lock:
            samples, self._feedback = self._feedback, []
            return samples

    def grasp_pose(self, grasp_id: str) -> tuple[float, ...]:
        return self.grasp_library[grasp_id].pose

    # ------------------------------------------------------------------
    # physics-side hook (runs in the daemon clock thread)
    # ------------------------------------------------------------------

    def tick(self, sim: TestbedSim, dt: float) -> None:
        with self._lock:
            goal, handle = self._goal, self._handle
            if goal is None or handle is None:
                sim.step(0.0, dt)
                return
            if self._abort_reason is not None:
                self.current_grip = None
                sim.release_pull()
                sim.step(0.0, dt)
                self._finish_locked(ManipulatorResult(False, self._abort_reason))
                return

            self._stage_t += dt
            profile = self._profile
            assert profile is not None and self._grasp is not None

            if self._stage == "approach":
                sim.step(0.0, dt)
                if self._stage_t >= goal.approach_s:
                    self._stage, self._stage_t = "grasp", 0.0
            elif self._stage == "grasp":
                # close the fingers: grip normals ramp in over the grasp window
                fraction = min(1.0, self._stage_t / goal.grasp_s)
                grip = self._grasp.make_grip()
                self.current_grip = replace(
                    grip, normal_forces=tuple(n * fraction for n in grip.normal_forces)
                )
                sim.step(0.0, dt)
                if self._stage_t >= goal.grasp_s:
                    self._stage, self._stage_t = "pull", 0.0
                    self._servo_force = 0.0
            elif self._stage == "pull":
                commanded = self._commanded_force(sim, profile, dt)
                if profile.inward_push > 0.0:
                    sim.check_safety(profile.inward_push)
                if self.current_grip is not None:
                    _, self.current_grip = sim.apply_grip_and_pull(
                        self.current_grip, commanded, dt
                    )
                if self._stage_t >= profile.duration_s:
                    self._stage, self._stage_t = "release", 0.0
            elif self._stage == "release":
                self.current_grip = None
                sim.release_pull()
                sim.step(0.0, dt)
                if self._stage_t >= goal.retreat_s:
                    self._finish_locked(ManipulatorResult(True))

            self._maybe_feedback(sim.state.clock)

    def _commanded_force(self, sim: TestbedSim, profile: PullProfile, dt: float) -> float:
        if profile.mode == "force":
            ramp = min(1.0, self._stage_t / profile.ramp_s)
            return min(profile.f_max * ramp, profile.f_limit)
        # velocity servo: integrate force while below the target speed
        gain = 2.0 * profile.f_limit / max(profile.v_target, 1e-9)
        error = profile.v_target - sim.state.velocity
        self._servo_force += gain * error * dt
        self._servo_force = min(max(self._servo_force, 0.0), profile.f_limit)
        return self._servo_force

    def _finish_locked(self, result: ManipulatorResult) -> None:
        handle = self._handle
        self._goal = None
        self._handle = None
        self._grasp = None
        self._profile = None
        self._stage = "done"
        self.current_grip = None
        if handle is not None:
            handle._finish(result)

    def _maybe_feedback(self, t: float) -> None:
        if t - self._last_feedback_t < 1.0 / FEEDBACK_RATE_HZ:
            return
        self._last_feedback_t = t
        nominal = self._nominal_joints()
        noise = self._rng.normal(0.0, self.joint_noise_sigma, JOINT_COUNT)
        q = [nominal[i] + float(noise[i]) for i in range(JOINT_COUNT)]
        qd = [float(self._rng.normal(0.0, self.joint_noise_sigma * 5.0))
              for _ in range(JOINT_COUNT)]
        self._feedback.append((t, q, qd))

    def _nominal_joints(self) -> tuple[float, ...]:
        def lerp(a, b, s):
            s = min(max(s, 0.0), 1.0)
            s = s * s * (3.0 - 2.0 * s)  # smoothstep
            return tuple(ai + (bi - ai) * s for ai, bi in zip(a, b))

        goal = self._goal
        if goal is None or self._stage == "idle":
            return _HOME
        if self._stage == "approach":
            return lerp(_HOME, _PREGRASP, self._stage_t / goal.approach_s)
        if self._stage == "grasp":
            return _PREGRASP
        if self._stage == "pull" and self._profile is not None:
            return lerp(_PREGRASP, _PULLED, self._stage_t / self._profile.duration_s)
        return _PULLED


def default_goal(grasp_id: str, attachment: AttachmentKind,
                 testbed: TestbedKind) -> ManipulatorGoal:
    """Goal with the pull speed matched to the testbed's units."""
    library = DEFAULT_GRASP_LIBRARY
    profile = library[grasp_id].profile
    if testbed is TestbedKind.DOOR:
        profile = replace(profile, v_target=40.0)  # deg/s
    return ManipulatorGoal(grasp_id=grasp_id, attachment=attachment, profile=profile)
