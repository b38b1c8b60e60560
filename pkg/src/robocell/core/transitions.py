"""Pure state machines for job lifecycle and cell phase.

Transition tables are explicit dicts so an event log replayed through
them reproduces stored states exactly.
"""

from __future__ import annotations

from dataclasses import replace

from .types import (
    CellEvent,
    CellPhase,
    EvaluationJob,
    JobEvent,
    JobStatus,
    Scene,
    TaskSpec,
)


class IllegalTransition(Exception):
    def __init__(self, current, event):
        self.current = current
        self.event = event
        super().__init__(f"illegal transition: {current.value} + {event.value}")


JOB_TRANSITIONS: dict[tuple[JobStatus, JobEvent], JobStatus] = {
    (JobStatus.QUEUED, JobEvent.START): JobStatus.RUNNING,
    (JobStatus.QUEUED, JobEvent.CANCEL): JobStatus.CANCELED,
    (JobStatus.RUNNING, JobEvent.TRIAL_DONE): JobStatus.RUNNING,
    (JobStatus.RUNNING, JobEvent.ESCALATE): JobStatus.AWAITING_INTERVENTION,
    (JobStatus.RUNNING, JobEvent.COMPLETE): JobStatus.COMPLETED,
    (JobStatus.RUNNING, JobEvent.CANCEL): JobStatus.CANCELED,
    (JobStatus.RUNNING, JobEvent.FAIL): JobStatus.FAILED,
    (JobStatus.AWAITING_INTERVENTION, JobEvent.RESUME): JobStatus.RUNNING,
    (JobStatus.AWAITING_INTERVENTION, JobEvent.CANCEL): JobStatus.CANCELED,
}

_P = CellPhase
_E = CellEvent

CELL_TRANSITIONS: dict[tuple[CellPhase, CellEvent], CellPhase] = {
    (_P.IDLE, _E.TRIAL_START): _P.RUNNING_TRIAL,
    (_P.IDLE, _E.RESET_START): _P.RESETTING,
    (_P.IDLE, _E.COOLDOWN_DUE): _P.COOLING_DOWN,
    (_P.RUNNING_TRIAL, _E.TRIAL_END): _P.CLASSIFYING_SUCCESS,
    (_P.RUNNING_TRIAL, _E.MOTOR_FAULT): _P.REBOOTING_MOTORS,
    # Cooldown is deferred while any work is in flight; it only starts from IDLE.
    (_P.RUNNING_TRIAL, _E.COOLDOWN_DUE): _P.RUNNING_TRIAL,
    (_P.CLASSIFYING_SUCCESS, _E.CLASSIFY_DONE): _P.RESETTING,
    (_P.CLASSIFYING_SUCCESS, _E.COOLDOWN_DUE): _P.CLASSIFYING_SUCCESS,
    (_P.RESETTING, _E.RESET_OK): _P.IDLE,
    (_P.RESETTING, _E.RESET_FAIL): _P.RESETTING,
    (_P.RESETTING, _E.MOTOR_FAULT): _P.REBOOTING_MOTORS,
    (_P.RESETTING, _E.COOLDOWN_DUE): _P.RESETTING,
    (_P.REBOOTING_MOTORS, _E.REBOOT_OK): _P.IDLE,
    (_P.REBOOTING_MOTORS, _E.REBOOT_FAIL): _P.FAULTED,
    (_P.REBOOTING_MOTORS, _E.COOLDOWN_DUE): _P.REBOOTING_MOTORS,
    (_P.FAULTED, _E.REBOOT_OK): _P.IDLE,
    (_P.FAULTED, _E.REBOOT_FAIL): _P.FAULTED,
    (_P.FAULTED, _E.COOLDOWN_DUE): _P.FAULTED,
    (_P.COOLING_DOWN, _E.COOLDOWN_DONE): _P.IDLE,
    (_P.COOLING_DOWN, _E.COOLDOWN_DUE): _P.COOLING_DOWN,
    (_P.AWAITING_INTERVENTION, _E.RESUME): _P.IDLE,
    (_P.AWAITING_INTERVENTION, _E.COOLDOWN_DUE): _P.AWAITING_INTERVENTION,
}

# Escalation wins from every phase; re-escalating while parked is a no-op
# (the ticket layer deduplicates).
for _phase in CellPhase:
    CELL_TRANSITIONS[(_phase, _E.ESCALATE)] = _P.AWAITING_INTERVENTION


def job_transition(job: EvaluationJob, event: JobEvent) -> EvaluationJob:
    """Return the job with its status advanced, or raise IllegalTransition."""
    try:
        nxt = JOB_TRANSITIONS[(job.status, event)]
    except KeyError:
        raise IllegalTransition(job.status, event) from None
    return replace(job, status=nxt)


def cell_transition(phase: CellPhase, event: CellEvent) -> CellPhase:
    """Deterministic next phase, or raise IllegalTransition."""
    try:
        return CELL_TRANSITIONS[(phase, event)]
    except KeyError:
        raise IllegalTransition(phase, event) from None


# Paper-default step budgets per scene; validate_task_spec flags other values
# only when strict_defaults is requested.
DEFAULT_MAX_STEPS = {Scene.DRAWER: 70, Scene.SINK: 100, Scene.CLOTH: 80}


def validate_task_spec(spec: TaskSpec, workspace_xy=None, strict_defaults: bool = False) -> list[str]:
    """Return a list of human-readable invariant violations (empty when valid).

    workspace_xy: optional ((min_x, max_x), (min_y, max_y)) used to check that
    object placement ranges stay inside the boundary.
    """
    violations: list[str] = []
    if spec.max_steps < 1:
        violations.append(f"max_steps: must be >= 1, got {spec.max_steps}")
    if strict_defaults and spec.max_steps != DEFAULT_MAX_STEPS[spec.scene]:
        violations.append(
            f"max_steps: {spec.max_steps} differs from the {spec.scene.value} default "
            f"{DEFAULT_MAX_STEPS[spec.scene]}"
        )
    if not spec.instruction.strip():
        violations.append("instruction: must be non-empty")
    if not spec.success_prompt.strip():
        violations.append("success_prompt: must be non-empty")

    ranges = spec.initial_state_distribution.active_ranges()
    expected = {
        Scene.DRAWER: {"drawer_openness_m"},
        Scene.SINK: {"object_x_m", "object_y_m"},
        Scene.CLOTH: {"fold_fraction"},
    }[spec.scene]
    missing = expected - set(ranges)
    if missing:
        violations.append(f"initial_state_distribution: missing ranges {sorted(missing)}")
    for name, (lo, hi) in ranges.items():
        if not lo < hi:
            violations.append(f"initial_state_distribution: {name} range [{lo}, {hi}] is empty")
    if workspace_xy is not None:
        (min_x, max_x), (min_y, max_y) = workspace_xy
        xr = spec.initial_state_distribution.object_x_m
        yr = spec.initial_state_distribution.object_y_m
        if xr is not None and not (min_x <= xr[0] and xr[1] <= max_x):
            violations.append(f"initial_state_distribution: object_x_m {xr} exceeds workspace x {min_x, max_x}")
        if yr is not None and not (min_y <= yr[0] and yr[1] <= max_y):
            violations.append(f"initial_state_distribution: object_y_m {yr} exceeds workspace y {min_y, max_y}")

    thresholds = spec.success_threshold_params
    if thresholds.rule not in ("drawer_open", "drawer_closed", "object_in_container", "cloth_folded"):
        violations.append(f"success_threshold_params: unknown rule {thresholds.rule!r}")
    if thresholds.rule == "object_in_container" and thresholds.target_container not in ("sink", "basket"):
        violations.append("success_threshold_params: container rule requires target_container sink|basket")
    if not spec.answer_table:
        violations.append("answer_table: must map classifier answers to verdicts")
    return violations
