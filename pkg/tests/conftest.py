import threading

import pytest

from pullbench.daemon import Daemon, DaemonConfig
from pullbench.manipulator import ScriptedManipulator
from pullbench.model import AttachmentKind, CampaignSpec, TestbedKind
from pullbench.orchestrator import CampaignRunner, DaemonSession
from pullbench.sim import SimParams

ACCEL = 60.0


def mini_campaign(repetitions=3, resistances=(0.0, 25.0)) -> CampaignSpec:
    """Strong and weak handle grasps across low/high drawer resistance."""
    return CampaignSpec(
        campaign_id="mini",
        testbed=TestbedKind.DRAWER,
        attachment_grasps={AttachmentKind.HANDLE: ("palm-wrap", "fingertip-wrap")},
        resistances=resistances,
        repetitions=repetitions,
        success_threshold=200.0,
    )


class LiveRig:
    """Daemon + scripted arm + session + runner, accelerated for tests."""

    def __init__(self, campaign: CampaignSpec, out_dir, seed=11, accel=ACCEL,
                 auto_continue=False, sim_params=None):
        first_attachment = next(iter(campaign.attachment_grasps))
        self.daemon = Daemon(DaemonConfig(
            testbed=campaign.testbed,
            attachment=first_attachment,
            accel=accel,
            sim_params=sim_params or SimParams(rng_seed=seed),
        ))
        self.daemon.start()
        self.manipulator = ScriptedManipulator(seed=seed)
        self.daemon.backend.attach_actor(self.manipulator)
        self.session = DaemonSession("127.0.0.1", self.daemon.port, accel=accel)
        self.runner = CampaignRunner(
            campaign, self.session, self.manipulator, out_dir,
            seed=seed, auto_continue=auto_continue,
        )
        self._thread = None

    def run_async(self) -> threading.Thread:
        self._thread = threading.Thread(target=self.runner.run, daemon=True)
        self._thread.start()
        return self._thread

    def wait(self, timeout=120.0) -> None:
        assert self._thread is not None
        self._thread.join(timeout)
        assert not self._thread.is_alive(), "campaign did not finish in time"

    def close(self) -> None:
        self.session.close()
        self.daemon.stop()


@pytest.fixture
def live_rig_factory(tmp_path):
    rigs = []

    def build(campaign=None, **kwargs) -> LiveRig:
        rig = LiveRig(campaign or mini_campaign(), tmp_path / "campaign", **kwargs)
        rigs.append(rig)
        return rig

    yield build
    for rig in rigs:
        rig.close()
