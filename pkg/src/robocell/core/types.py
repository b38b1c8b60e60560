"""Shared domain types for jobs, episodes, cells, and tasks.

Everything in here is a plain value type: no I/O, no clocks, no locks.
Mutation happens by building new values (or appending to per-episode logs
owned by a single evaluation sequence).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace


class Scene(str, enum.Enum):
    DRAWER = "drawer"
    SINK = "sink"
    CLOTH = "cloth"


class VerdictLabel(str, enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    INVALID = "invalid"


class JobStatus(str, enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    # Presentation-only variant of QUEUED: head of its cell's queue while the
    # cell is cooling down. Never stored; derived by the API layer.
    COOLDOWN_BLOCKED = "cooldown_blocked"
    AWAITING_INTERVENTION = "awaiting_intervention"
    COMPLETED = "completed"
    CANCELED = "canceled"
    FAILED = "failed"


TERMINAL_JOB_STATUSES = frozenset(
    {JobStatus.COMPLETED, JobStatus.CANCELED, JobStatus.FAILED}
)


class JobEvent(str, enum.Enum):
    START = "start"
    TRIAL_DONE = "trial_done"
    ESCALATE = "escalate"
    RESUME = "resume"
    CANCEL = "cancel"
    COMPLETE = "complete"
    FAIL = "fail"


class CellPhase(str, enum.Enum):
    IDLE = "idle"
    RUNNING_TRIAL = "running_trial"
    CLASSIFYING_SUCCESS = "classifying_success"
    RESETTING = "resetting"
    REBOOTING_MOTORS = "rebooting_motors"
    COOLING_DOWN = "cooling_down"
    AWAITING_INTERVENTION = "awaiting_intervention"
    FAULTED = "faulted"


class CellEvent(str, enum.Enum):
    TRIAL_START = "trial_start"
    TRIAL_END = "trial_end"
    CLASSIFY_DONE = "classify_done"
    RESET_START = "reset_start"
    RESET_OK = "reset_ok"
    RESET_FAIL = "reset_fail"
    MOTOR_FAULT = "motor_fault"
    REBOOT_OK = "reboot_ok"
    REBOOT_FAIL = "reboot_fail"
    COOLDOWN_DUE = "cooldown_due"
    COOLDOWN_DONE = "cooldown_done"
    ESCALATE = "escalate"
    RESUME = "resume"


class StepPhase(str, enum.Enum):
    EVAL = "eval"
    RESET = "reset"


class InterventionReason(str, enum.Enum):
    RESET_EXHAUSTED = "reset_exhausted"
    MOTOR_REBOOT_EXHAUSTED = "motor_reboot_exhausted"
    INVALID_STATE_DETECTED = "invalid_state_detected"


@dataclass(frozen=True)
class InitialStateRanges:
    """Uniform ranges the scene is randomized over between trials.

    Only the fields matching the task's scene are populated.
    """

    drawer_openness_m: tuple[float, float] | None = None
    object_x_m: tuple[float, float] | None = None
    object_y_m: tuple[float, float] | None = None
    fold_fraction: tuple[float, float] | None = None
    # Gripper start pose is jittered uniformly by +/- this much around home.
    gripper_jitter_m: float = 0.02

    def active_ranges(self) -> dict[str, tuple[float, float]]:
        out: dict[str, tuple[float, float]] = {}
        for name in ("drawer_openness_m", "object_x_m", "object_y_m", "fold_fraction"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


@dataclass(frozen=True)
class SuccessThresholds:
    """Scene-specific scalars deciding task success on a final state."""

    rule: str  # one of: drawer_open, drawer_closed, object_in_container, cloth_folded
    drawer_open_min_m: float = 0.015
    drawer_closed_max_m: float = 0.002
    fold_fraction_min: float = 0.25
    target_container: str | None = None  # "sink" or "basket"


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    scene: Scene
    instruction: str
    max_steps: int
    success_prompt: str
    reset_instruction: str
    reset_prompt: str
    initial_state_distribution: InitialStateRanges
    success_threshold_params: SuccessThresholds
    # Lowercased classifier answer text -> verdict, e.g. {"yes": SUCCESS, ...}.
    answer_table: dict[str, VerdictLabel] = field(default_factory=dict)

    def answer_for(self, label: VerdictLabel) -> str:
        for text, verdict in self.answer_table.items():
            if verdict == label:
                return text
        raise KeyError(f"no answer text maps to {label} for task {self.task_id}")


@dataclass
class StepRecord:
    step_index: int
    action: tuple[float, ...]
    phase: StepPhase
    boundary_clamped: bool = False
    motor_fault: bool = False

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "action": list(self.action),
            "phase": self.phase.value,
            "boundary_clamped": self.boundary_clamped,
            "motor_fault": self.motor_fault,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        return cls(
            step_index=d["step_index"],
            action=tuple(d["action"]),
            phase=StepPhase(d["phase"]),
            boundary_clamped=d.get("boundary_clamped", False),
            motor_fault=d.get("motor_fault", False),
        )


@dataclass
class EpisodeRecord:
    """One evaluation attempt. Invalidated attempts stay in the log and the
    replacement run points back via rerun_of."""

    index: int
    initial_state_summary: dict = field(default_factory=dict)
    final_state_summary: dict = field(default_factory=dict)
    steps_executed: int = 0
    step_log: list[StepRecord] = field(default_factory=list)
    success_verdict: VerdictLabel | None = None
    success_raw_answer: str | None = None
    reset_attempts: int = 0
    motor_failures: int = 0
    valid: bool = False
    invalid_reason: str | None = None  # motor_failure | invalid_state | policy_error | canceled
    rerun_of: int | None = None
    wall_time_s: float = 0.0
    policy_latency_ms: dict = field(default_factory=dict)

    def eval_steps(self) -> int:
        return sum(1 for s in self.step_log if s.phase == StepPhase.EVAL)

    def reset_steps(self) -> int:
        return sum(1 for s in self.step_log if s.phase == StepPhase.RESET)

    def to_dict(self, include_steps: bool = True) -> dict:
        d = {
            "index": self.index,
            "initial_state_summary": self.initial_state_summary,
            "final_state_summary": self.final_state_summary,
            "steps_executed": self.steps_executed,
            "success_verdict": self.success_verdict.value if self.success_verdict else None,
            "success_raw_answer": self.success_raw_answer,
            "reset_attempts": self.reset_attempts,
            "motor_failures": self.motor_failures,
            "valid": self.valid,
            "invalid_reason": self.invalid_reason,
            "rerun_of": self.rerun_of,
            "wall_time_s": self.wall_time_s,
            "policy_latency_ms": self.policy_latency_ms,
            "eval_steps": self.eval_steps(),
            "reset_steps": self.reset_steps(),
        }
        if include_steps:
            d["step_log"] = [s.to_dict() for s in self.step_log]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeRecord":
        rec = cls(
            index=d["index"],
            initial_state_summary=d.get("initial_state_summary", {}),
            final_state_summary=d.get("final_state_summary", {}),
            steps_executed=d.get("steps_executed", 0),
            step_log=[StepRecord.from_dict(s) for s in d.get("step_log", [])],
            success_verdict=VerdictLabel(d["success_verdict"]) if d.get("success_verdict") else None,
            success_raw_answer=d.get("success_raw_answer"),
            reset_attempts=d.get("reset_attempts", 0),
            motor_failures=d.get("motor_failures", 0),
            valid=d.get("valid", False),
            invalid_reason=d.get("invalid_reason"),
            rerun_of=d.get("rerun_of"),
            wall_time_s=d.get("wall_time_s", 0.0),
            policy_latency_ms=d.get("policy_latency_ms", {}),
        )
        return rec


@dataclass
class EvaluationJob:
    job_id: str
    submitter: str
    task_id: str
    policy_endpoint: str
    num_trials: int
    status: JobStatus = JobStatus.QUEUED
    submitted_at: float = 0.0
    started_at: float | None = None
    finished_at: float | None = None
    cell_id: str | None = None
    episodes: list[EpisodeRecord] = field(default_factory=list)

    def with_status(self, status: JobStatus) -> "EvaluationJob":
        return replace(self, status=status)

    def summary_dict(self) -> dict:
        valid = [e for e in self.episodes if e.valid]
        return {
            "job_id": self.job_id,
            "submitter": self.submitter,
            "task_id": self.task_id,
            "policy_endpoint": self.policy_endpoint,
            "num_trials": self.num_trials,
            "status": self.status.value,
            "submitted_at": self.submitted_at,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "cell_id": self.cell_id,
            "episodes_total": len(self.episodes),
            "episodes_valid": len(valid),
            "successes": sum(1 for e in valid if e.success_verdict == VerdictLabel.SUCCESS),
        }


@dataclass
class InterventionTicket:
    ticket_id: str
    cell_id: str
    reason: InterventionReason
    raised_at: float
    job_id: str | None = None
    resolved_at: float | None = None
    # Successful webhook deliveries so far; at-least-once, so >= 1 once the
    # receiver is reachable.
    notification_delivery_count: int = 0

    @property
    def resolved(self) -> bool:
        return self.resolved_at is not None

    def to_dict(self) -> dict:
        return {
            "ticket_id": self.ticket_id,
            "cell_id": self.cell_id,
            "reason": self.reason.value,
            "raised_at": self.raised_at,
            "job_id": self.job_id,
            "resolved_at": self.resolved_at,
            "notification_delivery_count": self.notification_delivery_count,
        }


def finite(x: float) -> bool:
    return isinstance(x, (int, float)) and math.isfinite(x)
