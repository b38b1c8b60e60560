"""FIFO job queue and multi-cell dispatcher with between-job cooldowns.

The scheduler is the single writer of the job store: submissions, dispatch,
progress updates, and cancelation all funnel through its lock. Cells run at
most one job at a time; a 20-minute cooldown is inserted after every 6 hours
of accumulated *active* (non-idle) time, and only ever between jobs.

The clock is injectable so a 24-hour schedule can be simulated in
milliseconds.
"""

from __future__ import annotations

import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field

from .core.types import (
    EpisodeRecord,
    EvaluationJob,
    JobEvent,
    JobStatus,
    TERMINAL_JOB_STATUSES,
)
from .core.transitions import job_transition
from .engine import CancelToken


class WallClock:
    def now(self) -> float:
        return time.time()


@dataclass
class SimClock:
    t: float = 0.0

    def now(self) -> float:
        return self.t

    def advance(self, dt: float) -> float:
        self.t += dt
        return self.t


class SchedulerError(Exception):
    pass


class UnknownTask(SchedulerError):
    pass


class InvalidTrialCount(SchedulerError):
    pass


class UnknownJob(SchedulerError):
    pass


class TerminalJob(SchedulerError):
    pass


class SubmitterBusy(SchedulerError):
    """Submitter already has a pending job on this cell (light abuse control)."""


@dataclass
class CellSlot:
    cell_id: str
    task_ids: tuple[str, ...]
    cooldown_period_s: float = 1200.0
    cooldown_interval_s: float = 21600.0
    queue: deque = field(default_factory=deque)
    running: str | None = None
    cooling_until: float | None = None
    active_since_cooldown: float = 0.0
    cooldown_windows: list[tuple[float, float]] = field(default_factory=list)
    job_windows: list[list] = field(default_factory=list)  # [job_id, start, end|None]

    @property
    def cooldown_count(self) -> int:
        return len(self.cooldown_windows)


@dataclass(frozen=True)
class Assignment:
    cell_id: str
    job_id: str


@dataclass
class TickResult:
    assignments: list[Assignment] = field(default_factory=list)
    cooldown_started: list[str] = field(default_factory=list)
    cooldown_ended: list[str] = field(default_factory=list)


class Scheduler:
    def __init__(
        self,
        cells: list[CellSlot],
        tasks: dict,
        clock=None,
        default_num_trials: int = 50,
        submitter_pending_limit: int = 1,
    ):
        self.clock = clock or WallClock()
        self.tasks = tasks
        self.default_num_trials = default_num_trials
        self.submitter_pending_limit = submitter_pending_limit
        self._lock = threading.RLock()
        self.slots: dict[str, CellSlot] = {c.cell_id: c for c in cells}
        self.jobs: dict[str, EvaluationJob] = {}
        self.cancel_tokens: dict[str, CancelToken] = {}
        self._task_to_cell: dict[str, str] = {}
        for slot in cells:
            for task_id in slot.task_ids:
                self._task_to_cell.setdefault(task_id, slot.cell_id)

    # -- submission ----------------------------------------------------------

    def submit(
        self,
        task_id: str,
        policy_url: str,
        num_trials: int | None = None,
        submitter: str = "anonymous",
        health_probe=None,
    ) -> str:
        """Queue a job FIFO on the cell hosting its task.

        health_probe, when given, is called with the policy URL; a falsy
        result only logs a warning (submissions are honor-system).
        """
        if task_id not in self.tasks or task_id not in self._task_to_cell:
            raise UnknownTask(task_id)
        trials = self.default_num_trials if num_trials is None else num_trials
        if trials < 1:
            raise InvalidTrialCount(f"num_trials must be >= 1, got {trials}")
        warning = None
        if health_probe is not None and not health_probe(policy_url):
            warning = f"policy endpoint {policy_url} failed its health probe"
        with self._lock:
            cell_id = self._task_to_cell[task_id]
            slot = self.slots[cell_id]
            if self.submitter_pending_limit > 0:
                pending = sum(
                    1
                    for jid in slot.queue
                    if self.jobs[jid].submitter == submitter
                )
                if pending >= self.submitter_pending_limit:
                    raise SubmitterBusy(
                        f"{submitter} already has {pending} queued job(s) on {cell_id}"
                    )
            job = EvaluationJob(
                job_id=uuid.uuid4().hex[:12],
                submitter=submitter,
                task_id=task_id,
                policy_endpoint=policy_url,
                num_trials=trials,
                status=JobStatus.QUEUED,
                submitted_at=self.clock.now(),
                cell_id=cell_id,
            )
            self.jobs[job.job_id] = job
            slot.queue.append(job.job_id)
            self.cancel_tokens[job.job_id] = CancelToken()
            if warning:
                import logging

                logging.getLogger(__name__).warning("%s (job %s queued anyway)", warning, job.job_id)
            return job.job_id

    # -- dispatch --------------------------------------------------------------

    def dispatch_tick(self) -> TickResult:
        """Start work on every idle cell: finish due cooldowns, insert new
        ones once the active-time ledger crosses the interval, else pop the
        FIFO head."""
        now = self.clock.now()
        result = TickResult()
        with self._lock:
            for slot in self.slots.values():
                if slot.cooling_until is not None:
                    if now >= slot.cooling_until:
                        slot.cooling_until = None
                        result.cooldown_ended.append(slot.cell_id)
                    else:
                        continue
                if slot.running is not None:
                    continue
                if slot.active_since_cooldown >= slot.cooldown_interval_s:
                    slot.cooling_until = now + slot.cooldown_period_s
                    slot.cooldown_windows.append((now, slot.cooling_until))
                    slot.active_since_cooldown = 0.0
                    result.cooldown_started.append(slot.cell_id)
                    continue
                if slot.queue:
                    job_id = slot.queue.popleft()
                    job = job_transition(self.jobs[job_id], JobEvent.START)
                    job.started_at = now
                    self.jobs[job_id] = job
                    slot.running = job_id
                    slot.job_windows.append([job_id, now, None])
                    result.assignments.append(Assignment(slot.cell_id, job_id))
        return result

    def report_done(self, cell_id: str, job_id: str, final_job: EvaluationJob, active_seconds: float):
        """Record a finished run: store the engine's final job value, free the
        cell, and accrue active time toward the next cooldown."""
        with self._lock:
            slot = self.slots[cell_id]
            if slot.running != job_id:
                raise SchedulerError(f"{job_id} is not running on {cell_id}")
            if final_job.status not in TERMINAL_JOB_STATUSES:
                raise SchedulerError(f"job {job_id} reported done in {final_job.status.value}")
            now = self.clock.now()
            if final_job.finished_at is None:
                final_job.finished_at = now
            self.jobs[job_id] = final_job
            slot.running = None
            slot.active_since_cooldown += max(active_seconds, 0.0)
            for window in reversed(slot.job_windows):
                if window[0] == job_id and window[2] is None:
                    window[2] = now
                    break

    # -- mid-run updates (engine hooks) ----------------------------------------

    def update_job(self, job: EvaluationJob):
        with self._lock:
            self.jobs[job.job_id] = job

    def append_episode(self, job_id: str, record: EpisodeRecord):
        with self._lock:
            job = self.jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            if not job.episodes or job.episodes[-1].index < record.index:
                job.episodes.append(record)

    # -- cancelation -------------------------------------------------------------

    def cancel(self, job_id: str) -> JobStatus:
        with self._lock:
            job = self.jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            if job.status in TERMINAL_JOB_STATUSES:
                raise TerminalJob(f"{job_id} already {job.status.value}")
            if job.status == JobStatus.QUEUED:
                slot = self.slots[job.cell_id]
                try:
                    slot.queue.remove(job_id)
                except ValueError:
                    pass
                job = job_transition(job, JobEvent.CANCEL)
                job.finished_at = self.clock.now()
                self.jobs[job_id] = job
                return job.status
            # Running or awaiting intervention: the engine stops at the next
            # step boundary and the worker reports the terminal status.
            self.cancel_tokens[job_id].request()
            return job.status

    # -- snapshots ----------------------------------------------------------------

    def job(self, job_id: str) -> EvaluationJob:
        with self._lock:
            job = self.jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            return job

    def effective_status(self, job: EvaluationJob) -> JobStatus:
        """QUEUED surfaces as COOLDOWN_BLOCKED while its cell's head-of-line
        work is parked behind a cooldown window (presentation only)."""
        if job.status != JobStatus.QUEUED:
            return job.status
        slot = self.slots.get(job.cell_id)
        if slot and slot.cooling_until is not None and slot.queue and slot.queue[0] == job.job_id:
            return JobStatus.COOLDOWN_BLOCKED
        return job.status

    def snapshot_jobs(self) -> list[dict]:
        with self._lock:
            out = []
            for job in sorted(self.jobs.values(), key=lambda j: j.submitted_at):
                d = job.summary_dict()
                d["status"] = self.effective_status(job).value
                d["queue_position"] = self._queue_position(job)
                out.append(d)
            return out

    def snapshot_job(self, job_id: str) -> dict:
        with self._lock:
            job = self.job(job_id)
            d = job.summary_dict()
            d["status"] = self.effective_status(job).value
            d["queue_position"] = self._queue_position(job)
            d["episodes"] = [e.to_dict(include_steps=False) for e in job.episodes]
            return d

    def snapshot_cells(self) -> list[dict]:
        with self._lock:
            now = self.clock.now()
            out = []
            for slot in self.slots.values():
                out.append(
                    {
                        "cell_id": slot.cell_id,
                        "tasks": list(slot.task_ids),
                        "running_job": slot.running,
                        "queued_jobs": list(slot.queue),
                        "cooling_down": slot.cooling_until is not None,
                        "cooldown_remaining_s": (
                            max(0.0, slot.cooling_until - now) if slot.cooling_until else 0.0
                        ),
                        "active_since_cooldown_s": slot.active_since_cooldown,
                        "cooldown_count": slot.cooldown_count,
                    }
                )
            return out

    def _queue_position(self, job: EvaluationJob) -> int | None:
        if job.status != JobStatus.QUEUED:
            return None
        slot = self.slots.get(job.cell_id)
        if not slot:
            return None
        try:
            return list(slot.queue).index(job.job_id)
        except ValueError:
            return None
