import json

import pytest
from hypothesis import given, strategies as st

from pullbench.model import (
    AttachmentKind,
    CampaignSpec,
    GraspType,
    PullAttachment,
    ResistanceRangeError,
    TestbedKind,
    TrialLabel,
    TrialSpec,
    campaign_spec_from_dict,
    campaign_spec_to_dict,
    door_grid_campaign,
    drawer_grid_campaign,
    evaluate_success,
    expand_campaign,
    load_campaign_spec,
    standard_attachment,
)


def make_trial(testbed=TestbedKind.DRAWER, resistance=0.0, threshold=200.0, rep=0):
    return TrialSpec(
        trial_id="t-handle-palm-wrap-r0-00",
        testbed=testbed,
        attachment=AttachmentKind.HANDLE,
        grasp="palm-wrap",
        resistance=resistance,
        success_threshold=threshold,
        repetition_index=rep,
    )


class TestCampaignExpansion:
    def test_published_grid_counts(self):
        door = expand_campaign(door_grid_campaign())
        drawer = expand_campaign(drawer_grid_campaign())
        assert len(door) == 300
        assert len(drawer) == 360
        assert len(door) + len(drawer) == 660

    def test_expansion_matches_closed_form(self):
        spec = CampaignSpec(
            campaign_id="mini",
            testbed=TestbedKind.DRAWER,
            attachment_grasps={AttachmentKind.HANDLE: ("palm-wrap", "fingertip-wrap")},
            resistances=(0.0, 25.0),
            repetitions=3,
            success_threshold=200.0,
        )
        trials = expand_campaign(spec)
        assert len(trials) == spec.expansion_count == 2 * 2 * 3

    def test_ids_unique_and_stable(self):
        first = expand_campaign(drawer_grid_campaign())
        second = expand_campaign(drawer_grid_campaign())
        ids = [t.trial_id for t in first]
        assert len(set(ids)) == len(ids)
        assert ids == [t.trial_id for t in second]

    def test_ordering_is_attachment_grasp_resistance_rep(self):
        spec = CampaignSpec(
            campaign_id="ord",
            testbed=TestbedKind.DOOR,
            attachment_grasps={
                AttachmentKind.KNOB: ("palm-horizontal",),
                AttachmentKind.HANDLE: ("palm-wrap",),
            },
            resistances=(0.0, 5.0),
            repetitions=2,
            success_threshold=45.0,
        )
        trials = expand_campaign(spec)
        keys = [(t.attachment, t.grasp, t.resistance, t.repetition_index) for t in trials]
        # handle block comes first regardless of dict insertion order
        assert keys[0] == (AttachmentKind.HANDLE, "palm-wrap", 0.0, 0)
        assert keys == sorted(
            keys, key=lambda k: ((k[0] is not AttachmentKind.HANDLE), k[2], k[3])
        )

    def test_zero_repetitions_rejected(self):
        with pytest.raises(ValueError):
            CampaignSpec(
                campaign_id="bad",
                testbed=TestbedKind.DRAWER,
                attachment_grasps={AttachmentKind.HANDLE: ("palm-wrap",)},
                resistances=(0.0,),
                repetitions=0,
                success_threshold=200.0,
            )

    def test_empty_grasp_map_expands_empty(self):
        spec = CampaignSpec(
            campaign_id="empty",
            testbed=TestbedKind.DRAWER,
            attachment_grasps={},
            resistances=(0.0, 7.0),
            repetitions=10,
            success_threshold=200.0,
        )
        assert expand_campaign(spec) == []

    def test_out_of_range_resistance_names_value(self):
        with pytest.raises(ResistanceRangeError) as exc:
            CampaignSpec(
                campaign_id="bad",
                testbed=TestbedKind.DOOR,
                attachment_grasps={AttachmentKind.KNOB: ("palm-horizontal",)},
                resistances=(0.0, 15.0),
                repetitions=1,
                success_threshold=45.0,
            )
        assert "15" in str(exc.value)
        assert exc.value.maximum == 10.0


class TestResistanceBounds:
    @pytest.mark.parametrize("value", range(-1, 31))
    def test_acceptance_exactly_on_range(self, value):
        for testbed in TestbedKind:
            should_pass = 0 <= value <= testbed.max_resistance
            if should_pass:
                make_trial(testbed=testbed, resistance=float(value),
                           threshold=testbed.default_success_threshold)
            else:
                with pytest.raises(ResistanceRangeError):
                    make_trial(testbed=testbed, resistance=float(value),
                               threshold=testbed.default_success_threshold)

    def test_door_rejection_names_max(self):
        with pytest.raises(ResistanceRangeError) as exc:
            make_trial(testbed=TestbedKind.DOOR, resistance=15.0, threshold=45.0)
        assert exc.value.maximum == 10.0


class TestEvaluateSuccess:
    def test_drawer_peak_over_threshold(self):
        trace = [(0.0, 0.0), (1.0, 100.0), (2.0, 250.0), (3.0, 240.0)]
        result = evaluate_success(trace, make_trial(threshold=200.0), True)
        assert result.label is TrialLabel.SUCCESS
        assert result.peak_opening == 250.0

    def test_closed_door_is_failure(self):
        trace = [(t * 0.1, 0.0) for t in range(50)]
        spec = make_trial(testbed=TestbedKind.DOOR, threshold=45.0)
        result = evaluate_success(trace, spec, True)
        assert result.label is TrialLabel.FAILURE
        assert result.peak_opening == 0.0
        assert result.pull_duration == 0.0

    def test_abnormal_termination_is_aborted(self):
        trace = [(0.0, 0.0), (1.0, 210.0)]
        result = evaluate_success(trace, make_trial(threshold=200.0), False)
        assert result.label is TrialLabel.ABORTED
        assert result.peak_opening == 210.0

    def test_empty_trace_is_error_not_crash(self):
        result = evaluate_success([], make_trial(), True)
        assert result.label is TrialLabel.ERROR

    def test_pull_duration_spans_open_samples(self):
        trace = [(0.0, 0.0), (1.0, 10.0), (2.0, 300.0), (3.0, 10.0), (4.0, 0.0)]
        result = evaluate_success(trace, make_trial(), True)
        assert result.pull_duration == 2.0  # 10 mm > 5 mm tolerance at t=1..3

    @given(
        peak=st.floats(min_value=0.0, max_value=350.0),
        low=st.floats(min_value=1.0, max_value=350.0),
        bump=st.floats(min_value=0.0, max_value=349.0),
    )
    def test_threshold_monotonicity(self, peak, low, bump):
        high = min(350.0, low + bump)
        trace = [(0.0, 0.0), (1.0, peak)]
        r_low = evaluate_success(trace, make_trial(threshold=low), True)
        r_high = evaluate_success(trace, make_trial(threshold=high), True)
        if r_low.label is TrialLabel.FAILURE:
            assert r_high.label is TrialLabel.FAILURE


class TestAttachments:
    def test_channel_counts(self):
        assert standard_attachment(AttachmentKind.HANDLE).channel_count == 12
        assert standard_attachment(AttachmentKind.KNOB).channel_count == 5

    def test_position_count_enforced(self):
        with pytest.raises(ValueError):
            PullAttachment(AttachmentKind.KNOB, ((0.0, 0.0, 0.0),) * 4)

    def test_fsr_positions_on_surface(self):
        for kind in AttachmentKind:
            att = standard_attachment(kind)
            for pos in att.fsr_positions:
                assert att.surface_error(pos) < 1e-9


class TestKnobGraspCatalog:
    def test_exactly_the_five_published_knob_grasps(self):
        from pullbench.model import KNOB_GRASPS

        descriptions = [g.description for g in KNOB_GRASPS]
        assert descriptions == [
            "Palm horizontal grasp (straight on)",
            "Fingertip horizontal grasp (straight on)",
            "Top down horizontal grasp",
            "Fingertip angled grasp",
            "Fingertip vertical grasp",
        ]


class TestCampaignConfig:
    def test_json_round_trip(self, tmp_path):
        spec = drawer_grid_campaign()
        path = tmp_path / "campaign.json"
        path.write_text(json.dumps(campaign_spec_to_dict(spec)), encoding="utf-8")
        loaded = load_campaign_spec(path)
        assert loaded == spec

    def test_unknown_grasp_rejected(self):
        data = campaign_spec_to_dict(drawer_grid_campaign())
        data["attachment_grasps"]["handle"] = ["no-such-grasp"]
        with pytest.raises(ValueError, match="no-such-grasp"):
            campaign_spec_from_dict(data)

    def test_missing_field_reported(self):
        with pytest.raises(ValueError, match="campaign config missing"):
            campaign_spec_from_dict({"testbed": "drawer"})
