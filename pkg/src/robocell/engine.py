"""The autonomous evaluation loop.

Per trial: verify the scene is in-distribution, roll the remote policy out
for up to K steps under blocking control, classify success once on the final
state, then reset with verified retries. Motor faults invalidate the trial
and trigger a reboot plus re-run; exhausted retry budgets escalate to a human
via the intervention channel and the loop resumes after the operator presses
resume.

Only valid episodes (no motor failure, no protocol error, no invalid verdict)
count toward the trial quota and the success rate.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field

from . import gateway
from .core.types import (
    CellEvent,
    EpisodeRecord,
    EvaluationJob,
    InterventionReason,
    InterventionTicket,
    JobEvent,
    JobStatus,
    StepPhase,
    StepRecord,
    TaskSpec,
    VerdictLabel,
)
from .core.transitions import job_transition
from .gateway import (
    MalformedResponse,
    ObservationPayload,
    PolicyEndpoint,
    PolicyTimeout,
    RESET_ANSWER_TABLE,
    UnparseableAnswer,
)
from .safety import InterventionManager
from .simcell.cell import SimCell
from .simcell.world import ground_truth_success

logger = logging.getLogger(__name__)

RESET_OK = "ok"
RESET_ESCALATED = "escalated"


class EngineError(Exception):
    pass


class PolicyUnreachable(EngineError):
    """Too many consecutive policy protocol failures; the job fails."""


class InterventionUnresolved(EngineError):
    """Raised in non-blocking mode when the loop parks on an open ticket."""

    def __init__(self, job, result, ticket):
        self.job = job
        self.result = result
        self.ticket = ticket
        super().__init__(f"job {job.job_id} awaiting intervention {ticket.ticket_id}")


@dataclass
class EngineConfig:
    reset_max_attempts: int = 3
    reboot_max_attempts: int = 3
    early_stop_on_oracle_success: bool = False
    cooldown_period_s: float = 1200.0
    cooldown_interval_s: float = 21600.0
    # Consecutive protocol errors tolerated before the job fails outright.
    max_consecutive_policy_errors: int = 5
    block_on_intervention: bool = True
    include_proprio: bool = True

    def __post_init__(self):
        if self.reset_max_attempts < 1 or self.reboot_max_attempts < 1:
            raise ValueError("retry budgets must be >= 1")
        if self.cooldown_period_s <= 0 or self.cooldown_interval_s <= 0:
            raise ValueError("cooldown values must be positive")


@dataclass
class EvaluationResult:
    job_id: str
    episodes: list[EpisodeRecord] = field(default_factory=list)
    success_count: int = 0
    valid_count: int = 0
    motor_failure_reruns: int = 0
    interventions: list[InterventionTicket] = field(default_factory=list)
    total_eval_steps: int = 0
    total_reset_steps: int = 0
    final_event: JobEvent | None = None
    error: str | None = None

    def running_rate(self) -> float:
        return self.success_count / self.valid_count if self.valid_count else 0.0


class CancelToken:
    def __init__(self):
        self._event = threading.Event()

    def request(self):
        self._event.set()

    @property
    def requested(self) -> bool:
        return self._event.is_set()


@dataclass
class EngineHooks:
    """Callbacks into the owning service; all optional.

    on_episode(record, result) fires after each episode is classified.
    on_status(job) fires on every job status change the engine makes.
    """

    on_episode: object = None
    on_status: object = None

    def episode(self, record, result):
        if self.on_episode:
            self.on_episode(record, result)

    def status(self, job):
        if self.on_status:
            self.on_status(job)


def _latency_stats(latencies: list[float]) -> dict:
    if not latencies:
        return {"count": 0}
    return {
        "count": len(latencies),
        "mean_ms": sum(latencies) / len(latencies),
        "min_ms": min(latencies),
        "max_ms": max(latencies),
    }


class Engine:
    """Runs evaluation jobs on one cell; strictly sequential within the cell."""

    def __init__(
        self,
        task: TaskSpec,
        cell: SimCell,
        policy_endpoint: PolicyEndpoint,
        classifier_endpoint: PolicyEndpoint,
        config: EngineConfig | None = None,
        interventions: InterventionManager | None = None,
        hooks: EngineHooks | None = None,
        clock=time.time,
        frame_dir=None,
    ):
        self.task = task
        self.cell = cell
        self.policy_endpoint = policy_endpoint
        self.classifier_endpoint = classifier_endpoint
        self.config = config or EngineConfig()
        self.interventions = interventions or InterventionManager()
        self.hooks = hooks or EngineHooks()
        self.clock = clock
        self.frame_dir = frame_dir

    # -- public entry --------------------------------------------------------

    def run_evaluation(self, job: EvaluationJob, cancel: CancelToken | None = None):
        """Run trials until num_trials valid episodes exist (or the job is
        canceled / fails / parks). Returns (job, EvaluationResult)."""
        if job.status != JobStatus.RUNNING:
            raise EngineError(f"job must be RUNNING, is {job.status.value}")
        cancel = cancel or CancelToken()
        result = EvaluationResult(job_id=job.job_id)
        if self.cell.world is None:
            self.cell.prepare(self.task)

        index = 0
        rerun_of: int | None = None
        consecutive_policy_errors = 0

        while result.valid_count < job.num_trials:
            if cancel.requested:
                return self._finalize(job, result, JobEvent.CANCEL)

            self.cell.begin_episode(index)
            pre_steps: list[StepRecord] = []
            job = self._ensure_ready(job, result, pre_steps, cancel)
            if cancel.requested:
                return self._finalize(job, result, JobEvent.CANCEL)

            record = self._run_episode(index, rerun_of, pre_steps, cancel)
            result.episodes.append(record)
            job.episodes = result.episodes
            if record.valid:
                result.valid_count += 1
                if record.success_verdict == VerdictLabel.SUCCESS:
                    result.success_count += 1
                rerun_of = None
                consecutive_policy_errors = 0
            job = job_transition(job, JobEvent.TRIAL_DONE)
            self.hooks.episode(record, result)

            if record.invalid_reason == "canceled":
                self._teardown_after_cancel(record, result)
                return self._finalize(job, result, JobEvent.CANCEL)

            skip_reset = False
            if not record.valid:
                rerun_of = record.index
                if record.invalid_reason == "motor_failure":
                    result.motor_failure_reruns += 1
                    job = self._handle_motor_failure(job, result, cancel)
                elif record.invalid_reason == "invalid_state":
                    job = self._escalate(
                        job, result, InterventionReason.INVALID_STATE_DETECTED, cancel
                    )
                    skip_reset = True  # the operator restored the scene by hand
                elif record.invalid_reason == "policy_error":
                    consecutive_policy_errors += 1
                    if consecutive_policy_errors >= self.config.max_consecutive_policy_errors:
                        result.error = (
                            f"{consecutive_policy_errors} consecutive policy protocol errors"
                        )
                        return self._finalize(job, result, JobEvent.FAIL)
                if cancel.requested:
                    return self._finalize(job, result, JobEvent.CANCEL)

            if not skip_reset:
                outcome, attempts, job = self._execute_reset(job, result, record.step_log, cancel)
                record.reset_attempts = attempts
                if cancel.requested:
                    return self._finalize(job, result, JobEvent.CANCEL)
            index += 1

        return self._finalize(job, result, JobEvent.COMPLETE)

    # -- episode -------------------------------------------------------------

    def _run_episode(
        self,
        index: int,
        rerun_of: int | None,
        pre_steps: list[StepRecord],
        cancel: CancelToken,
    ) -> EpisodeRecord:
        task = self.task
        cell = self.cell
        record = EpisodeRecord(index=index, rerun_of=rerun_of)
        record.step_log.extend(pre_steps)
        started = self.clock()
        latencies: list[float] = []

        cell.send(CellEvent.TRIAL_START)
        cell.start_eval_rollout(task.max_steps)
        record.initial_state_summary = cell.summary()
        self._save_frame(index, "first")

        steps = 0
        aborted = False
        try:
            while steps < task.max_steps:
                obs = ObservationPayload(
                    image_png=cell.observation_png(),
                    instruction=task.instruction,
                    proprio=cell.proprio() if self.config.include_proprio else None,
                )
                try:
                    chunk, latency_ms = gateway.query_policy(self.policy_endpoint, obs)
                except (PolicyTimeout, MalformedResponse) as exc:
                    record.valid = False
                    record.invalid_reason = "policy_error"
                    logger.warning("episode %d aborted by policy error: %s", index, exc)
                    cell.send(CellEvent.TRIAL_END)
                    cell.send(CellEvent.CLASSIFY_DONE)  # teardown; nothing to classify
                    aborted = True
                    return record
                latencies.append(latency_ms)

                # Blocking control: execute the whole chunk, then re-observe.
                for action in chunk.actions:
                    if steps >= task.max_steps:
                        break
                    step_rec, _ = cell.apply_action(action, StepPhase.EVAL)
                    record.step_log.append(step_rec)
                    steps += 1
                    if step_rec.motor_fault:
                        record.motor_failures += 1
                        record.valid = False
                        record.invalid_reason = "motor_failure"
                        cell.send(CellEvent.MOTOR_FAULT)
                        aborted = True
                        return record
                    if cancel.requested:
                        record.valid = False
                        record.invalid_reason = "canceled"
                        aborted = True
                        return record
                if self.config.early_stop_on_oracle_success and ground_truth_success(
                    cell.world, task
                ):
                    break

            cell.send(CellEvent.TRIAL_END)
            try:
                verdict = gateway.query_classifier(
                    self.classifier_endpoint,
                    cell.observation_png(),
                    task.success_prompt,
                    task.answer_table,
                )
            except (PolicyTimeout, MalformedResponse, UnparseableAnswer) as exc:
                record.valid = False
                record.invalid_reason = "policy_error"
                logger.warning("episode %d classifier error: %s", index, exc)
                cell.send(CellEvent.CLASSIFY_DONE)
                return record
            record.success_verdict = verdict.label
            record.success_raw_answer = verdict.raw_text
            if verdict.label == VerdictLabel.INVALID:
                record.valid = False
                record.invalid_reason = "invalid_state"
            else:
                record.valid = record.motor_failures == 0
            return record
        finally:
            record.steps_executed = steps
            record.final_state_summary = cell.summary()
            record.wall_time_s = self.clock() - started
            record.policy_latency_ms = _latency_stats(latencies)
            if not aborted or record.invalid_reason in ("motor_failure",):
                self._save_frame(index, "final")

    # -- reset ---------------------------------------------------------------

    def _execute_reset(
        self,
        job: EvaluationJob,
        result: EvaluationResult,
        step_sink: list[StepRecord],
        cancel: CancelToken,
    ):
        """Reset with verified retries. Returns (outcome, attempts, job)."""
        cell = self.cell
        from .core.types import CellPhase

        if cell.phase == CellPhase.CLASSIFYING_SUCCESS:
            cell.send(CellEvent.CLASSIFY_DONE)
        elif cell.phase == CellPhase.IDLE:
            cell.send(CellEvent.RESET_START)

        attempts = 0
        while attempts < self.config.reset_max_attempts:
            if cancel.requested:
                return RESET_ESCALATED, attempts, job
            attempts += 1
            rollout = cell.run_reset(self.task)
            step_sink.extend(rollout.steps)
            result.total_reset_steps += len(rollout.steps)
            if rollout.fault_interrupted:
                cell.send(CellEvent.MOTOR_FAULT)
                job = self._handle_motor_failure(job, result, cancel)
                if cancel.requested:
                    return RESET_ESCALATED, attempts, job
                cell.send(CellEvent.RESET_START)
                continue
            verdict = gateway.query_classifier(
                self.classifier_endpoint,
                cell.observation_png(),
                self.task.reset_prompt,
                RESET_ANSWER_TABLE,
            )
            if verdict.label == VerdictLabel.SUCCESS:
                cell.send(CellEvent.RESET_OK)
                return RESET_OK, attempts, job
            cell.send(CellEvent.RESET_FAIL)

        job = self._escalate(job, result, InterventionReason.RESET_EXHAUSTED, cancel)
        return RESET_ESCALATED, attempts, job

    def _ensure_ready(self, job, result, pre_steps: list[StepRecord], cancel) -> EvaluationJob:
        """Pre-trial in-distribution check via the reset-success classifier."""
        verdict = gateway.query_classifier(
            self.classifier_endpoint,
            self.cell.observation_png(),
            self.task.reset_prompt,
            RESET_ANSWER_TABLE,
        )
        if verdict.label == VerdictLabel.SUCCESS:
            return job
        outcome, _, job = self._execute_reset(job, result, pre_steps, cancel)
        return job

    # -- fault recovery --------------------------------------------------------

    def _handle_motor_failure(self, job, result, cancel) -> EvaluationJob:
        """Reboot at a safe arm position; escalate after the retry budget."""
        cell = self.cell
        attempts = 0
        while attempts < self.config.reboot_max_attempts:
            if cancel.requested:
                return job
            attempts += 1
            if cell.reboot_motors():
                cell.send(CellEvent.REBOOT_OK)
                return job
            cell.send(CellEvent.REBOOT_FAIL)
        return self._escalate(job, result, InterventionReason.MOTOR_REBOOT_EXHAUSTED, cancel)

    # -- escalation ------------------------------------------------------------

    def _escalate(self, job, result, reason: InterventionReason, cancel) -> EvaluationJob:
        ticket = self.interventions.raise_ticket(self.cell.cell_id, reason, job.job_id)
        if not result.interventions or result.interventions[-1].ticket_id != ticket.ticket_id:
            result.interventions.append(ticket)
        self.cell.send(CellEvent.ESCALATE)
        job = job_transition(job, JobEvent.ESCALATE)
        self.hooks.status(job)
        if not self.config.block_on_intervention:
            raise InterventionUnresolved(job, result, ticket)
        resolved = self.interventions.await_resolution(
            ticket.ticket_id, should_abort=lambda: cancel.requested
        )
        if not resolved:
            # Cancel requested while parked; caller finalizes.
            return job
        self.cell.send(CellEvent.RESUME)
        self.cell.human_fix(self.task)
        job = job_transition(job, JobEvent.RESUME)
        self.hooks.status(job)
        return job

    # -- teardown ----------------------------------------------------------------

    def _teardown_after_cancel(self, record, result):
        """Best-effort reset so the cell is usable for the next job."""
        from .core.types import CellPhase

        cell = self.cell
        try:
            if cell.phase == CellPhase.RUNNING_TRIAL:
                cell.send(CellEvent.TRIAL_END)
                cell.send(CellEvent.CLASSIFY_DONE)
            elif cell.phase == CellPhase.CLASSIFYING_SUCCESS:
                cell.send(CellEvent.CLASSIFY_DONE)
            if cell.world is not None and cell.world.motors_ok and cell.phase == CellPhase.RESETTING:
                rollout = cell.run_reset(self.task)
                record.step_log.extend(rollout.steps)
                result.total_reset_steps += len(rollout.steps)
                cell.send(CellEvent.RESET_OK if rollout.internal_success else CellEvent.RESET_FAIL)
                if cell.phase == CellPhase.RESETTING:
                    cell.send(CellEvent.RESET_OK)  # leave the cell idle regardless
        except Exception:
            logger.exception("post-cancel reset failed; leaving cell as-is")

    def _finalize(self, job, result, event: JobEvent):
        if job.status == JobStatus.AWAITING_INTERVENTION and event == JobEvent.CANCEL:
            job = job_transition(job, JobEvent.CANCEL)
        elif job.status == JobStatus.RUNNING:
            job = job_transition(job, event)
        job.finished_at = self.clock()
        result.final_event = event
        result.total_eval_steps = sum(e.eval_steps() for e in result.episodes if e.valid)
        self.hooks.status(job)
        return job, result

    def _save_frame(self, index: int, tag: str):
        if self.frame_dir is None:
            return
        from pathlib import Path

        path = Path(self.frame_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / f"ep{index:04d}_{tag}.png").write_bytes(self.cell.observation_png())
