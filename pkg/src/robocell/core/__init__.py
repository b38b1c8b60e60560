from .types import (
    CellEvent,
    CellPhase,
    EpisodeRecord,
    EvaluationJob,
    InitialStateRanges,
    InterventionReason,
    InterventionTicket,
    JobEvent,
    JobStatus,
    Scene,
    StepPhase,
    StepRecord,
    SuccessThresholds,
    TaskSpec,
    TERMINAL_JOB_STATUSES,
    VerdictLabel,
)
from .transitions import (
    CELL_TRANSITIONS,
    DEFAULT_MAX_STEPS,
    IllegalTransition,
    JOB_TRANSITIONS,
    cell_transition,
    job_transition,
    validate_task_spec,
)

__all__ = [
    "CellEvent",
    "CellPhase",
    "CELL_TRANSITIONS",
    "DEFAULT_MAX_STEPS",
    "EpisodeRecord",
    "EvaluationJob",
    "IllegalTransition",
    "InitialStateRanges",
    "InterventionReason",
    "InterventionTicket",
    "JOB_TRANSITIONS",
    "JobEvent",
    "JobStatus",
    "Scene",
    "StepPhase",
    "StepRecord",
    "SuccessThresholds",
    "TaskSpec",
    "TERMINAL_JOB_STATUSES",
    "VerdictLabel",
    "cell_transition",
    "job_transition",
    "validate_task_spec",
]
