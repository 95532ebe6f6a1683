"""Trial orchestration: the executive state machine that runs campaigns
against a device daemon and a manipulator, evaluates outcomes, and drives
the recorder.

Every phase change goes through the documented transition table; an
undocumented transition raises immediately (the fault-injection suite
asserts this never fires).
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

from .client import CommandRejected, ControlClient, LinkError, TelemetryTap
from .dataset import TrialWriter, update_manifest
from .manipulator import ManipulatorGoal, ScriptedManipulator, default_goal
from .model import (
    CampaignSpec,
    TrialLabel,
    TrialResult,
    TrialSpec,
    evaluate_success,
    expand_campaign,
    validate_resistance,
)

log = logging.getLogger(__name__)


class TrialPhase(Enum):
    IDLE = "idle"
    SETUP = "setup"
    SLACK_OUT = "slack_out"
    ARM_APPROACH = "arm_approach"
    GRASP = "grasp"
    PULL = "pull"
    EVALUATE = "evaluate"
    RESETTING = "resetting"
    VERIFY_CLOSED = "verify_closed"
    DONE = "done"
    ABORTING = "aborting"
    FAULT = "fault"


# The documented phase graph.  FAULT is reachable from everywhere; DONE is
# reachable only from VERIFY_CLOSED.
TRANSITIONS: dict[TrialPhase, set[TrialPhase]] = {
    TrialPhase.IDLE: {TrialPhase.SETUP},
    TrialPhase.SETUP: {TrialPhase.SLACK_OUT, TrialPhase.ABORTING},
    TrialPhase.SLACK_OUT: {TrialPhase.ARM_APPROACH, TrialPhase.ABORTING},
    TrialPhase.ARM_APPROACH: {TrialPhase.GRASP, TrialPhase.ABORTING},
    TrialPhase.GRASP: {TrialPhase.PULL, TrialPhase.ABORTING},
    TrialPhase.PULL: {TrialPhase.EVALUATE, TrialPhase.ABORTING},
    TrialPhase.EVALUATE: {TrialPhase.RESETTING},
    TrialPhase.ABORTING: {TrialPhase.RESETTING},
    TrialPhase.RESETTING: {TrialPhase.RESETTING, TrialPhase.VERIFY_CLOSED},
    TrialPhase.VERIFY_CLOSED: {TrialPhase.DONE, TrialPhase.RESETTING},
    TrialPhase.DONE: {TrialPhase.IDLE},
    TrialPhase.FAULT: {TrialPhase.IDLE},
}


class UndocumentedTransition(RuntimeError):
    """A phase change outside the documented graph; indicates an executive bug."""


class PhaseTracker:
    def __init__(self, on_change: Optional[Callable[[TrialPhase], None]] = None):
        self.phase = TrialPhase.IDLE
        self.history: list[TrialPhase] = [TrialPhase.IDLE]
        self._on_change = on_change

    def to(self, phase: TrialPhase) -> None:
        if phase is self.phase:
            return
        allowed = TRANSITIONS[self.phase] | {TrialPhase.FAULT}
        if phase not in allowed:
            raise UndocumentedTransition(f"{self.phase.value} -> {phase.value}")
        self.phase = phase
        self.history.append(phase)
        if self._on_change is not None:
            self._on_change(phase)

    def retry_reset(self) -> None:
        """Explicit RESETTING self-loop so retries appear in the history."""
        if self.phase is not TrialPhase.RESETTING:
            raise UndocumentedTransition(f"{self.phase.value} -> resetting (retry)")
        self.history.append(TrialPhase.RESETTING)
        if self._on_change is not None:
            self._on_change(TrialPhase.RESETTING)


class TrialFault(RuntimeError):
    def __init__(self, reason: str, partial_record: bool = False):
        self.reason = reason
        self.partial_record = partial_record
        super().__init__(reason)


class DaemonSession:
    """Live link to a daemon: control channel plus a recording telemetry tap."""

    def __init__(self, host: str, port: int, accel: float = 1.0):
        self.accel = max(accel, 1e-9)
        self.control = ControlClient(host, port)
        self.tap = TelemetryTap(host, port)
        self.testbed_name = self.control.hello_info["testbed"]
        self.attachment_name = self.control.hello_info["attachment"]
        self.channel_count = self.control.hello_info["channel_count"]
        self._lock = threading.Lock()
        self._writer: Optional[TrialWriter] = None
        self._writer_error: Optional[str] = None
        self._trace: list[tuple[float, float]] = []
        self._trial_id: Optional[str] = None
        self._latest: Optional[dict] = None
        self._fresh = threading.Event()
        self.frame_listener: Optional[Callable[[dict], None]] = None
        self._stop = threading.Event()
        self._pump = threading.Thread(target=self._pump_loop, daemon=True)
        self._pump.start()

    def wall_timeout(self, sim_seconds: float) -> float:
        return sim_seconds / self.accel + 5.0

    # -- pump ---------------------------------------------------------
    def _pump_loop(self) -> None:
        while not self._stop.is_set():
            try:
                msg = self.tap.read(timeout=0.2)
            except LinkError:
                return
            if msg is None or msg.msg_type.value != "telemetry":
                continue
            payload = msg.payload
            with self._lock:
                self._latest = payload
                self._fresh.set()
                if self._writer is not None and payload.get("trial_id") == self._trial_id:
                    try:
                        self._writer.append_frame(payload)
                        self._trace.append(
                            (payload["t"], payload["opening_measured"])
                        )
                    except OSError as exc:
                        self._writer_error = str(exc)
                        self._writer = None
            listener = self.frame_listener
            if listener is not None:
                listener(payload)

    # -- commands and events -------------------------------------------
    def command(self, name: str, **args) -> dict:
        return self.control.request(name, **args).payload

    def wait_slack_ready(self, sim_timeout: float = 30.0) -> None:
        self.control.wait_event("slack_ready", timeout=self.wall_timeout(sim_timeout))

    def wait_reset_outcome(self, sim_timeout: float = 60.0) -> str:
        deadline = time.monotonic() + self.wall_timeout(sim_timeout)
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0.0:
                raise LinkError("no reset outcome event arrived")
            evt = self.control.next_event(remaining)
            if evt is None:
                continue
            name = evt.payload.get("name")
            if name == "reset_complete":
                return "complete"
            if name == "fault":
                return evt.payload.get("fault", "fault")

    def drain_faults(self) -> list[str]:
        faults = []
        while True:
            evt = self.control.next_event(0.0)
            if evt is None:
                return faults
            if evt.payload.get("name") == "fault":
                faults.append(evt.payload.get("fault", "fault"))

    # -- recording ------------------------------------------------------
    def start_recording(self, writer: TrialWriter, trial_id: str) -> None:
        with self._lock:
            self._writer = writer
            self._writer_error = None
            self._trial_id = trial_id
            self._trace = []

    def stop_recording(self) -> list[tuple[float, float]]:
        with self._lock:
            trace = self._trace
            self._writer = None
            self._trial_id = None
            self._trace = []
            return trace

    def current_trace(self) -> list[tuple[float, float]]:
        with self._lock:
            return list(self._trace)

    @property
    def writer_error(self) -> Optional[str]:
        with self._lock:
            return self._writer_error

    def measured_opening(self, samples: int = 10, sim_timeout: float = 5.0) -> float:
        values: list[float] = []
        deadline = time.monotonic() + self.wall_timeout(sim_timeout)
        last_t = None
        while len(values) < samples:
            if time.monotonic() > deadline:
                raise LinkError("telemetry dried up while verifying closure")
            self._fresh.clear()
            self._fresh.wait(timeout=0.5)
            with self._lock:
                frame = self._latest
            if frame is None or frame["t"] == last_t:
                continue
            last_t = frame["t"]
            values.append(frame["opening_measured"])
        return sum(values) / len(values)

    @property
    def connected(self) -> bool:
        return self.control.connected

    def close(self) -> None:
        self._stop.set()
        self.control.close()
        self.tap.close()
        self._pump.join(timeout=2.0)


@dataclass
class TrialOutcome:
    spec: TrialSpec
    result: TrialResult
    record_path: Optional[Path]
    phase_history: list[TrialPhase]
    fault: Optional[str] = None
    partial: bool = False


_STAGE_ORDER = ["approach", "grasp", "pull"]
_STAGE_PHASE = {
    "approach": TrialPhase.ARM_APPROACH,
    "grasp": TrialPhase.GRASP,
    "pull": TrialPhase.PULL,
}
_STAGE_RANK = {TrialPhase.ARM_APPROACH: 0, TrialPhase.GRASP: 1, TrialPhase.PULL: 2}


def run_trial(
    spec: TrialSpec,
    session,
    manipulator,
    writer_factory: Callable[[TrialSpec], TrialWriter],
    *,
    should_abort: Optional[Callable[[], bool]] = None,
    phase_cb: Optional[Callable[[TrialPhase], None]] = None,
    feedback_cb: Optional[Callable[[tuple], None]] = None,
    reset_retry_budget: int = 2,
    poll_s: float = 0.002,
) -> TrialOutcome:
    """Execute one grasp-and-pull trial end to end.

    Fault handling: reset timeouts retry up to the budget then fault; a
    manipulator abort still resets the bench and records an Aborted trial;
    link loss faults with the partial record flagged.
    """
    phases = PhaseTracker(on_change=phase_cb)
    writer: Optional[TrialWriter] = None
    recording = False
    feedback_rows: list[tuple] = []
    aborted = False
    goal_handle = None

    def collect_feedback() -> None:
        for sample in manipulator.drain_feedback():
            feedback_rows.append(sample)
            if feedback_cb is not None:
                feedback_cb(sample)

    try:
        phases.to(TrialPhase.SETUP)
        if session.attachment_name != spec.attachment.value:
            session.command("set_attachment", attachment=spec.attachment.value)
            session.attachment_name = spec.attachment.value
        session.command("set_resistance", newtons=spec.resistance)

        phases.to(TrialPhase.SLACK_OUT)
        session.command("release_slack")
        session.wait_slack_ready()

        writer = writer_factory(spec)
        session.command("start_record", trial_id=spec.trial_id,
                        metadata={"grasp": spec.grasp})
        session.start_recording(writer, spec.trial_id)
        recording = True

        phases.to(TrialPhase.ARM_APPROACH)
        goal_handle = manipulator.send_goal(
            default_goal(spec.grasp, spec.attachment, spec.testbed)
        )
        pull_deadline = time.monotonic() + session.wall_timeout(20.0)
        while not goal_handle.done:
            if time.monotonic() > pull_deadline:
                raise TrialFault("manipulator stalled", partial_record=True)
            if should_abort is not None and should_abort() and not aborted:
                manipulator.abort("operator abort")
                aborted = True
            for fault in session.drain_faults():
                manipulator.abort(f"testbed fault: {fault}")
                raise TrialFault(fault, partial_record=True)
            _advance_stage(phases, manipulator.stage)
            collect_feedback()
            time.sleep(poll_s)
        collect_feedback()
        result = goal_handle.wait_result(timeout=1.0)

        if result.completed:
            _advance_stage(phases, "pull")  # ensure we logged reaching PULL
            phases.to(TrialPhase.EVALUATE)
        else:
            phases.to(TrialPhase.ABORTING)

        trace = session.current_trace()
        trial_result = evaluate_success(trace, spec, terminated_normally=result.completed)
        session.command("stop_record")
        session.stop_recording()
        recording = False
        if session.writer_error is not None:
            raise TrialFault(f"recorder failure: {session.writer_error}", partial_record=True)

        phases.to(TrialPhase.RESETTING)
        attempts = 0
        while True:
            session.command("reset")
            outcome = session.wait_reset_outcome()
            if outcome == "complete":
                phases.to(TrialPhase.VERIFY_CLOSED)
                measured = session.measured_opening()
                if measured <= spec.testbed.closed_tolerance:
                    break
                attempts += 1
                if attempts > reset_retry_budget:
                    raise TrialFault("bench did not verify closed", partial_record=False)
                phases.to(TrialPhase.RESETTING)
            else:
                attempts += 1
                if attempts > reset_retry_budget:
                    raise TrialFault(outcome, partial_record=False)
                phases.retry_reset()

        for t, q, qd in feedback_rows:
            writer.append_manipulator(t, q, qd)
        record = writer.finalize(
            trial_result,
            grasp_pose=list(manipulator.grasp_pose(spec.grasp)),
            testbed=spec.testbed.value,
            attachment=spec.attachment.value,
        )
        writer = None
        phases.to(TrialPhase.DONE)
        return TrialOutcome(spec, trial_result, record.path, phases.history)

    except (TrialFault, LinkError, CommandRejected) as exc:
        reason = exc.reason if isinstance(exc, TrialFault) else str(exc)
        partial = getattr(exc, "partial_record", True)
        phases.to(TrialPhase.FAULT)
        if goal_handle is not None and not goal_handle.done:
            manipulator.abort(f"fault: {reason}")
        if recording:
            session.stop_recording()
            _best_effort(session, "stop_record")
        _best_effort(session, "abort")
        if writer is not None:
            try:
                writer.abandon(reason)
            except OSError:
                pass
        log.warning("trial %s faulted: %s", spec.trial_id, reason)
        return TrialOutcome(
            spec,
            TrialResult(TrialLabel.ERROR, peak_opening=0.0, pull_duration=0.0),
            None,
            phases.history,
            fault=reason,
            partial=partial,
        )


def _advance_stage(phases: PhaseTracker, stage: str) -> None:
    """Walk the tracker through any manipulator stages the poll loop skipped,
    so a fast run still logs ARM_APPROACH -> GRASP -> PULL in order."""
    if stage not in _STAGE_PHASE or phases.phase not in _STAGE_RANK:
        return
    for name in _STAGE_ORDER[: _STAGE_ORDER.index(stage) + 1]:
        phase = _STAGE_PHASE[name]
        if _STAGE_RANK[phase] > _STAGE_RANK[phases.phase]:
            phases.to(phase)


def _best_effort(session, command_name: str, **args) -> None:
    try:
        session.command(command_name, **args)
    except Exception:
        pass


@dataclass
class CampaignReport:
    campaign_id: str
    cells: dict[tuple[str, float], dict[str, int]] = field(default_factory=dict)
    outcomes: list[TrialOutcome] = field(default_factory=list)
    fault_count: int = 0
    completed: bool = False

    def tally(self, outcome: TrialOutcome) -> None:
        cell = self.cells.setdefault(
            (outcome.spec.grasp, outcome.spec.resistance),
            {"success": 0, "failure": 0, "aborted": 0, "error": 0},
        )
        cell[outcome.result.label.value] += 1
        if outcome.fault:
            self.fault_count += 1
        self.outcomes.append(outcome)

    @property
    def total(self) -> int:
        return len(self.outcomes)


class CampaignRunner:
    """Runs a campaign sequentially with operator controls and status fan-out."""

    def __init__(
        self,
        campaign: CampaignSpec,
        session: DaemonSession,
        manipulator: ScriptedManipulator,
        out_dir: str | Path,
        *,
        seed: int = 0,
        auto_continue: bool = False,
    ):
        self.campaign = campaign
        self.session = session
        self.manipulator = manipulator
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.auto_continue = auto_continue

        self._status_lock = threading.Lock()
        self._listeners: list[Callable[[dict], None]] = []
        self.feedback_listener: Optional[Callable[[tuple], None]] = None
        self._pause = threading.Event()
        self._resume = threading.Event()
        self._abort_current = threading.Event()
        self._override: Optional[float] = None
        self.report = CampaignReport(campaign.campaign_id)
        self._trial_index = 0
        self._trial_total = 0
        self._trial_id: Optional[str] = None
        self._phase = TrialPhase.IDLE
        self._fault: Optional[str] = None
        self._last_result: Optional[str] = None
        self._done = threading.Event()

    # -- status ----------------------------------------------------------
    def add_status_listener(self, listener: Callable[[dict], None]) -> None:
        with self._status_lock:
            self._listeners.append(listener)
        listener(self.status())

    def status(self) -> dict:
        with self._status_lock:
            return {
                "campaign_id": self.campaign.campaign_id,
                "trial_index": self._trial_index,
                "trial_total": self._trial_total,
                "trial_id": self._trial_id,
                "phase": self._phase.value,
                "fault": self._fault,
                "paused": self._pause.is_set(),
                "last_result": self._last_result,
                "testbed": self.campaign.testbed.value,
                "done": self._done.is_set(),
            }

    def _emit_status(self) -> None:
        snapshot = self.status()
        with self._status_lock:
            listeners = list(self._listeners)
        for listener in listeners:
            listener(snapshot)

    def _set(self, **fields) -> None:
        with self._status_lock:
            for key, value in fields.items():
                setattr(self, f"_{key}", value)
        self._emit_status()

    # -- operator controls -------------------------------------------------
    def pause_after_trial(self) -> None:
        self._pause.set()
        self._emit_status()

    def resume(self) -> None:
        self._pause.clear()
        self._resume.set()
        self._emit_status()

    def request_abort_current(self) -> None:
        self._abort_current.set()

    def override_next_resistance(self, newtons: float) -> None:
        validate_resistance(self.campaign.testbed, newtons)
        self._override = newtons

    @property
    def phase(self) -> TrialPhase:
        return self._phase

    @property
    def faulted(self) -> bool:
        return self._fault is not None

    def recover(self) -> None:
        """Fault -> ClearFault -> Reset -> Idle."""
        self.session.command("clear_fault")
        self.session.command("reset")
        outcome = self.session.wait_reset_outcome()
        if outcome != "complete":
            raise TrialFault(f"recovery reset failed: {outcome}")
        self._set(fault=None, phase=TrialPhase.IDLE)

    # -- the campaign loop ---------------------------------------------------
    def run(self) -> CampaignReport:
        trials = expand_campaign(self.campaign)
        self._trial_total = len(trials)
        update_manifest(self.out_dir, campaign_spec=self.campaign)
        self.session.command("start_stream")
        self.session.command("reset")  # establish a known closed state
        self.session.wait_reset_outcome()

        for index, spec in enumerate(trials):
            while self._pause.is_set():
                self._resume.wait(timeout=0.1)
            self._resume.clear()
            if self._override is not None:
                spec = replace(spec, resistance=self._override)
                update_manifest(self.out_dir, annotation={
                    "trial_id": spec.trial_id,
                    "note": f"resistance overridden to {self._override} N",
                })
                self._override = None
            self._abort_current.clear()
            self._set(trial_index=index, trial_id=spec.trial_id, phase=TrialPhase.IDLE)

            outcome = run_trial(
                spec,
                self.session,
                self.manipulator,
                self._writer_factory,
                should_abort=self._abort_current.is_set,
                phase_cb=lambda phase: self._set(phase=phase),
                feedback_cb=self._forward_feedback,
            )
            self.report.tally(outcome)
            self._set(last_result=outcome.result.label.value,
                      trial_index=index + 1)
            if outcome.fault:
                self._set(fault=outcome.fault)
                if not self.auto_continue:
                    break
                try:
                    self.recover()
                except (TrialFault, LinkError, CommandRejected) as exc:
                    log.error("recovery failed: %s", exc)
                    break

        self.report.completed = self.report.total == self._trial_total
        self._done.set()
        self._set(phase=self._phase)  # emit final snapshot with done=True
        return self.report

    def _forward_feedback(self, sample: tuple) -> None:
        listener = self.feedback_listener
        if listener is not None:
            listener(sample)

    def _writer_factory(self, spec: TrialSpec) -> TrialWriter:
        return TrialWriter(
            self.out_dir, spec, channel_count=self.session.channel_count,
            seed=self.seed,
        )
