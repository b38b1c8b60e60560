import dataclasses

import pytest
from hypothesis import given, strategies as st

from robocell.core import (
    CellEvent,
    CellPhase,
    EvaluationJob,
    IllegalTransition,
    InitialStateRanges,
    JobEvent,
    JobStatus,
    Scene,
    SuccessThresholds,
    TaskSpec,
    VerdictLabel,
    cell_transition,
    job_transition,
    validate_task_spec,
)
from robocell.tasks import DEFAULT_TASKS


def _job(status=JobStatus.QUEUED):
    return EvaluationJob(
        job_id="j", submitter="s", task_id="open_drawer",
        policy_endpoint="http://x", num_trials=1, status=status,
    )


class TestJobTransitions:
    def test_queued_start_runs(self):
        assert job_transition(_job(), JobEvent.START).status == JobStatus.RUNNING

    def test_running_escalate_awaits(self):
        job = _job(JobStatus.RUNNING)
        assert job_transition(job, JobEvent.ESCALATE).status == JobStatus.AWAITING_INTERVENTION

    def test_terminal_rejects_start(self):
        with pytest.raises(IllegalTransition):
            job_transition(_job(JobStatus.COMPLETED), JobEvent.START)

    def test_original_job_not_mutated(self):
        job = _job()
        job_transition(job, JobEvent.START)
        assert job.status == JobStatus.QUEUED

    def test_full_lifecycle(self):
        job = _job()
        for event in (JobEvent.START, JobEvent.TRIAL_DONE, JobEvent.ESCALATE,
                      JobEvent.RESUME, JobEvent.COMPLETE):
            job = job_transition(job, event)
        assert job.status == JobStatus.COMPLETED

    def test_awaiting_can_cancel(self):
        job = _job(JobStatus.AWAITING_INTERVENTION)
        assert job_transition(job, JobEvent.CANCEL).status == JobStatus.CANCELED


class TestCellTransitions:
    def test_reset_fail_stays_resetting_until_escalate(self):
        phase = CellPhase.RESETTING
        for _ in range(3):
            phase = cell_transition(phase, CellEvent.RESET_FAIL)
            assert phase == CellPhase.RESETTING
        assert cell_transition(phase, CellEvent.ESCALATE) == CellPhase.AWAITING_INTERVENTION

    def test_idle_cooldown(self):
        assert cell_transition(CellPhase.IDLE, CellEvent.COOLDOWN_DUE) == CellPhase.COOLING_DOWN

    def test_running_defers_cooldown(self):
        assert cell_transition(CellPhase.RUNNING_TRIAL, CellEvent.COOLDOWN_DUE) == CellPhase.RUNNING_TRIAL

    def test_escalate_from_every_phase(self):
        for phase in CellPhase:
            assert cell_transition(phase, CellEvent.ESCALATE) == CellPhase.AWAITING_INTERVENTION

    def test_awaiting_only_exits_via_resume(self):
        for event in CellEvent:
            if event == CellEvent.RESUME:
                assert cell_transition(CellPhase.AWAITING_INTERVENTION, event) == CellPhase.IDLE
                continue
            try:
                nxt = cell_transition(CellPhase.AWAITING_INTERVENTION, event)
            except IllegalTransition:
                continue
            assert nxt == CellPhase.AWAITING_INTERVENTION

    def test_trial_flow(self):
        phase = CellPhase.IDLE
        for event, expected in (
            (CellEvent.TRIAL_START, CellPhase.RUNNING_TRIAL),
            (CellEvent.TRIAL_END, CellPhase.CLASSIFYING_SUCCESS),
            (CellEvent.CLASSIFY_DONE, CellPhase.RESETTING),
            (CellEvent.RESET_OK, CellPhase.IDLE),
        ):
            phase = cell_transition(phase, event)
            assert phase == expected

    def test_reboot_flow(self):
        phase = cell_transition(CellPhase.RUNNING_TRIAL, CellEvent.MOTOR_FAULT)
        assert phase == CellPhase.REBOOTING_MOTORS
        assert cell_transition(phase, CellEvent.REBOOT_FAIL) == CellPhase.FAULTED
        assert cell_transition(CellPhase.FAULTED, CellEvent.REBOOT_OK) == CellPhase.IDLE

    def test_cooldown_only_entered_from_idle(self):
        entering = [
            (phase, event)
            for phase in CellPhase
            for event in CellEvent
            if _next_or_none(phase, event) == CellPhase.COOLING_DOWN
            and phase != CellPhase.COOLING_DOWN
        ]
        assert entering == [(CellPhase.IDLE, CellEvent.COOLDOWN_DUE)]


def _next_or_none(phase, event):
    try:
        return cell_transition(phase, event)
    except IllegalTransition:
        return None


@given(st.lists(st.sampled_from(list(JobEvent)), max_size=40))
def test_job_status_stays_in_domain_and_escalate_lands_awaiting(events):
    job = _job()
    for event in events:
        try:
            nxt = job_transition(job, event)
        except IllegalTransition:
            continue
        assert nxt.status in JobStatus
        if event == JobEvent.ESCALATE:
            assert nxt.status == JobStatus.AWAITING_INTERVENTION
        job = nxt


@given(st.lists(st.sampled_from(list(CellEvent)), max_size=60))
def test_cell_replay_reproduces_final_phase(events):
    phase = CellPhase.IDLE
    applied = []
    for event in events:
        try:
            phase = cell_transition(phase, event)
        except IllegalTransition:
            continue
        applied.append(event)
        assert phase in CellPhase
        if event == CellEvent.ESCALATE:
            assert phase == CellPhase.AWAITING_INTERVENTION
    # Replaying the accepted event log lands on the identical phase.
    replay = CellPhase.IDLE
    for event in applied:
        replay = cell_transition(replay, event)
    assert replay == phase


class TestValidateTaskSpec:
    def test_default_tasks_are_clean(self):
        for task in DEFAULT_TASKS.values():
            assert validate_task_spec(task, workspace_xy=((0.05, 0.45), (-0.25, 0.25))) == []

    def test_paper_default_step_budgets(self):
        expected = {"open_drawer": 70, "close_drawer": 70, "put_in_sink": 100,
                    "put_in_basket": 100, "fold_cloth": 80}
        for task_id, steps in expected.items():
            assert DEFAULT_TASKS[task_id].max_steps == steps
            assert validate_task_spec(DEFAULT_TASKS[task_id], strict_defaults=True) == []

    def test_zero_steps_flagged(self):
        bad = dataclasses.replace(DEFAULT_TASKS["open_drawer"], max_steps=0)
        assert any("max_steps" in v for v in validate_task_spec(bad))

    def test_empty_range_flagged(self):
        bad = dataclasses.replace(
            DEFAULT_TASKS["put_in_sink"],
            initial_state_distribution=InitialStateRanges(
                object_x_m=(0.2, 0.2), object_y_m=(-0.16, -0.08)
            ),
        )
        assert any("initial_state_distribution" in v for v in validate_task_spec(bad))

    def test_range_outside_workspace_flagged(self):
        bad = dataclasses.replace(
            DEFAULT_TASKS["put_in_sink"],
            initial_state_distribution=InitialStateRanges(
                object_x_m=(0.2, 0.9), object_y_m=(-0.16, -0.08)
            ),
        )
        violations = validate_task_spec(bad, workspace_xy=((0.05, 0.45), (-0.25, 0.25)))
        assert any("workspace" in v for v in violations)

    def test_container_rule_needs_target(self):
        bad = TaskSpec(
            task_id="t", scene=Scene.SINK, instruction="x", max_steps=10,
            success_prompt="p", reset_instruction="r", reset_prompt="rp",
            initial_state_distribution=InitialStateRanges(object_x_m=(0.1, 0.2), object_y_m=(0.0, 0.1)),
            success_threshold_params=SuccessThresholds(rule="object_in_container"),
            answer_table={"yes": VerdictLabel.SUCCESS},
        )
        assert any("target_container" in v for v in validate_task_spec(bad))
