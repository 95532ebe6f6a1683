import time

import pytest

from pullbench.client import CommandRejected, ControlClient
from pullbench.dataset import load_campaign, read_trial, validate_campaign
from pullbench.gateway import GatewayServer
from pullbench.model import TrialLabel, evaluate_success
from pullbench.orchestrator import TrialPhase
from pullbench.sim import SimParams
from pullbench.wire import MsgType

from conftest import mini_campaign


def wait_for(predicate, timeout=60.0, interval=0.01, message="condition"):
    deadline = time.time() + timeout
    while time.time() < deadline:
        if predicate():
            return
        time.sleep(interval)
    raise AssertionError(f"timed out waiting for {message}")


class TestMiniCampaign:
    def test_runs_unattended_with_correct_labels(self, live_rig_factory, tmp_path):
        rig = live_rig_factory(mini_campaign(repetitions=2))
        rig.run_async()
        rig.wait()
        report = rig.runner.report

        assert report.total == 8
        assert report.completed
        assert report.fault_count == 0
        # strong grasp holds through 25 N; the fingertip grasp slips out
        assert report.cells[("palm-wrap", 0.0)]["success"] == 2
        assert report.cells[("palm-wrap", 25.0)]["success"] == 2
        assert report.cells[("fingertip-wrap", 0.0)]["success"] == 2
        assert report.cells[("fingertip-wrap", 25.0)]["failure"] == 2

        data = load_campaign(tmp_path / "campaign")
        assert len(data.records) == 8
        assert data.incomplete == []
        assert validate_campaign(tmp_path / "campaign") == []

    def test_labels_match_ground_truth_openings(self, live_rig_factory, tmp_path):
        rig = live_rig_factory(mini_campaign(repetitions=1))
        rig.run_async()
        rig.wait()
        data = load_campaign(tmp_path / "campaign")
        assert len(data.records) == 4
        for record in data.records:
            truth = [(row[0], row[1]) for row in record.testbed_rows]  # true opening
            expected = evaluate_success(truth, record.spec, True)
            assert record.result.label is expected.label, record.spec.trial_id

    def test_streams_per_record(self, live_rig_factory, tmp_path):
        rig = live_rig_factory(mini_campaign(repetitions=1, resistances=(0.0,)))
        rig.run_async()
        rig.wait()
        data = load_campaign(tmp_path / "campaign")
        for record in data.records:
            assert len(record.testbed_rows) > 100
            assert len(record.fsr_rows) == len(record.testbed_rows)
            assert len(record.manipulator_rows) > 50
            assert record.meta["grasp_pose"]


class TestGateway:
    def start_gateway(self, rig):
        gateway = GatewayServer(rig.runner)
        gateway.start()
        return gateway

    def console(self, gateway) -> ControlClient:
        return ControlClient("127.0.0.1", gateway.port, role="console")

    def drain_status(self, console, out):
        while True:
            try:
                msg = console.status.get_nowait()
            except Exception:
                return
            out.append(msg.payload)

    def test_two_consoles_identical_status_sequences(self, live_rig_factory):
        rig = live_rig_factory(mini_campaign(repetitions=1, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            a = self.console(gateway)
            b = self.console(gateway)
            rig.run_async()
            rig.wait()
            time.sleep(0.3)
            seq_a, seq_b = [], []
            self.drain_status(a, seq_a)
            self.drain_status(b, seq_b)
            assert len(seq_a) > 5
            assert seq_a == seq_b
            # every phase of a completed trial appeared on the stream
            phases = [s["phase"] for s in seq_a]
            for expected in ("setup", "pull", "evaluate", "resetting", "done"):
                assert expected in phases
            a.close()
            b.close()
        finally:
            gateway.stop()

    def test_status_query_mid_campaign(self, live_rig_factory):
        rig = live_rig_factory(mini_campaign(repetitions=2, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            console = self.console(gateway)
            rig.run_async()
            wait_for(lambda: rig.runner.status()["trial_id"] is not None,
                     message="campaign start")
            reply = console.request("status")
            assert reply.payload["trial_total"] == 4
            assert 0 <= reply.payload["trial_index"] <= 4
            assert reply.payload["campaign_id"] == "mini"
            rig.wait()
            console.close()
        finally:
            gateway.stop()

    def test_abort_control_round_trip(self, live_rig_factory):
        rig = live_rig_factory(mini_campaign(repetitions=1, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            console = self.console(gateway)
            rig.run_async()
            wait_for(lambda: rig.runner.phase is TrialPhase.PULL,
                     message="pull phase")
            reply = console.request("abort_current")
            assert reply.msg_type is MsgType.ACK
            rig.wait()
            labels = [o.result.label for o in rig.runner.report.outcomes]
            assert TrialLabel.ABORTED in labels
            aborted = [o for o in rig.runner.report.outcomes
                       if o.result.label is TrialLabel.ABORTED][0]
            assert TrialPhase.ABORTING in aborted.phase_history
            assert TrialPhase.RESETTING in aborted.phase_history
            console.close()
        finally:
            gateway.stop()

    def test_resistance_override_applied_and_validated(self, live_rig_factory, tmp_path):
        rig = live_rig_factory(mini_campaign(repetitions=2, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            console = self.console(gateway)
            # out-of-range override rejected naming the max
            with pytest.raises(CommandRejected) as exc:
                console.request("set_resistance_override", newtons=26.0)
            assert exc.value.nack.payload["error"] == "range"
            assert exc.value.nack.payload["max"] == 25.0

            reply = console.request("set_resistance_override", newtons=10.0)
            assert reply.payload["newtons"] == 10.0
            rig.run_async()
            rig.wait()
            overridden = [o for o in rig.runner.report.outcomes
                          if o.spec.resistance == 10.0]
            assert len(overridden) == 1
            record = read_trial(overridden[0].record_path)
            assert record.spec.resistance == 10.0
            console.close()
        finally:
            gateway.stop()

    def test_live_telemetry_and_feedback_reach_console(self, live_rig_factory):
        rig = live_rig_factory(mini_campaign(repetitions=1, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            console = self.console(gateway)
            rig.run_async()
            rig.wait()
            time.sleep(0.2)
            frames = []
            while not console.telemetry.empty():
                frames.append(console.telemetry.get_nowait())
            events = []
            while not console.events.empty():
                events.append(console.events.get_nowait())
            assert frames, "no live telemetry reached the console"
            assert any(e.payload.get("name") == "manip_feedback" for e in events)
            seqs = [f.seq for f in frames]
            assert seqs == sorted(seqs)
            console.close()
        finally:
            gateway.stop()

    def test_controls_rejected_during_fault_except_recovery(self, live_rig_factory):
        # the frozen sensor makes every winding phase run into the timeout
        rig = live_rig_factory(mini_campaign(repetitions=1, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            # freeze the position sensor so every reset times out
            rig.daemon.backend.sim.inject_frozen_position(300.0)
            console = self.console(gateway)
            rig.run_async()
            wait_for(lambda: rig.runner.faulted, timeout=90.0, message="fault")
            with pytest.raises(CommandRejected) as exc:
                console.request("pause_after_trial")
            assert exc.value.nack.payload["error"] == "fault"
            assert console.request("clear_fault").msg_type is MsgType.ACK
            rig.daemon.backend.sim.clear_injected_faults()
            reply = console.request("reset")
            assert reply.payload.get("recovery") == "started"
            wait_for(lambda: not rig.runner.faulted, timeout=30.0, message="recovery")
            rig.wait()
            console.close()
        finally:
            gateway.stop()

    def test_recorded_trials_served_exactly(self, live_rig_factory, tmp_path):
        rig = live_rig_factory(mini_campaign(repetitions=1, resistances=(0.0,)))
        gateway = self.start_gateway(rig)
        try:
            rig.run_async()
            rig.wait()
            console = self.console(gateway)
            listing = console.request("list_trials").payload["trials"]
            assert len(listing) == 2
            trial_id = listing[0]["trial_id"]
            served = console.request("get_trial", trial_id=trial_id).payload
            record = read_trial(tmp_path / "campaign" / "trials" / trial_id)
            assert served["fsr"] == [list(r) for r in record.fsr_rows]
            assert served["testbed"] == [list(r) for r in record.testbed_rows]
            with pytest.raises(CommandRejected):
                console.request("get_trial", trial_id="nope")
            console.close()
        finally:
            gateway.stop()
