"""REST surface and service runtime.

The runtime owns one worker thread per cell plus a dispatcher thread; all job
store writes funnel through the scheduler. Live progress is fanned out over
server-sent events with bounded per-subscriber buffers (slow consumers get
disconnected rather than block the publisher).
"""

from __future__ import annotations

import io
import json
import logging
import queue
import threading
import time
import zipfile
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, RedirectResponse, Response, StreamingResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import gateway
from .config import CellConfig, ServiceConfig, default_service_config
from .core.types import JobStatus, TERMINAL_JOB_STATUSES
from .core.transitions import job_transition
from .core.types import JobEvent
from .engine import Engine, EngineHooks, EvaluationResult
from .report import InvalidLabel, ReportStore, UnknownEpisode, UnknownReport
from .safety import InterventionManager, UnknownTicket, WebhookNotifier
from .scheduler import (
    CellSlot,
    InvalidTrialCount,
    Scheduler,
    SubmitterBusy,
    TerminalJob,
    UnknownJob,
    UnknownTask,
)
from .simcell import SimCell, spawn_builtin_classifier_server
from .tasks import build_default_tasks

logger = logging.getLogger(__name__)

_TERMINAL_VALUES = {s.value for s in TERMINAL_JOB_STATUSES}


class EventBus:
    """Per-job fan-out with bounded buffers."""

    _CLOSE = object()

    def __init__(self, buffer_size: int = 256):
        self.buffer_size = buffer_size
        self._lock = threading.Lock()
        self._subs: dict[str, list[queue.Queue]] = {}

    def publish(self, job_id: str, event: dict):
        with self._lock:
            subs = self._subs.get(job_id, [])
            dead = []
            for q in subs:
                try:
                    q.put_nowait(event)
                except queue.Full:
                    dead.append(q)  # slow consumer: disconnect
            for q in dead:
                subs.remove(q)
                try:
                    q.put_nowait(self._CLOSE)
                except queue.Full:
                    pass

    def subscribe(self, job_id: str) -> queue.Queue:
        q: queue.Queue = queue.Queue(maxsize=self.buffer_size)
        with self._lock:
            self._subs.setdefault(job_id, []).append(q)
        return q

    def unsubscribe(self, job_id: str, q: queue.Queue):
        with self._lock:
            subs = self._subs.get(job_id, [])
            if q in subs:
                subs.remove(q)

    @property
    def close_sentinel(self):
        return self._CLOSE


@dataclass
class CellExec:
    config: CellConfig
    simcell: SimCell
    classifier_servers: dict = field(default_factory=dict)  # task_id -> ServerHandle
    assignments: queue.Queue = field(default_factory=queue.Queue)


class ServiceRuntime:
    def __init__(self, config: ServiceConfig | None = None):
        self.config = config or default_service_config()
        self.tasks = build_default_tasks()
        self.reports = ReportStore(self.config.report_root)
        notifier = (
            WebhookNotifier(self.config.notification)
            if self.config.notification.webhook_url
            else None
        )
        self.interventions = InterventionManager(
            notifier=notifier,
            persist_path=str(self.reports.root / "tickets.jsonl"),
            resume_url_base=f"http://{self.config.host}:{self.config.port}",
        )
        slots = [
            CellSlot(
                cell_id=c.cell_id,
                task_ids=c.task_ids,
                cooldown_period_s=c.cooldown_period_s,
                cooldown_interval_s=c.cooldown_interval_s,
            )
            for c in self.config.cells
        ]
        self.scheduler = Scheduler(
            slots,
            self.tasks,
            default_num_trials=self.config.default_num_trials,
            submitter_pending_limit=self.config.submitter_pending_limit,
        )
        self.bus = EventBus(self.config.event_buffer_size)
        self.cells: dict[str, CellExec] = {
            c.cell_id: CellExec(
                config=c,
                simcell=SimCell(
                    c.cell_id, fault=c.fault, bounds=c.bounds, seed=c.seed
                ),
            )
            for c in self.config.cells
        }
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._started = False

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        if self._started:
            return
        self._started = True
        for cell in self.cells.values():
            for task_id in cell.config.task_ids:
                cell.classifier_servers[task_id] = spawn_builtin_classifier_server(
                    cell.config.fault.classifier_confusion,
                    self.tasks[task_id],
                    bounds=cell.config.bounds,
                    seed=cell.config.seed,
                )
            t = threading.Thread(target=self._worker, args=(cell,), daemon=True)
            t.start()
            self._threads.append(t)
        d = threading.Thread(target=self._dispatcher, daemon=True)
        d.start()
        self._threads.append(d)

    def stop(self):
        self._stop.set()
        for cell in self.cells.values():
            for handle in cell.classifier_servers.values():
                handle.close()
        for t in self._threads:
            t.join(timeout=5)

    # -- background threads ----------------------------------------------------

    def _dispatcher(self):
        from .core.types import CellEvent

        while not self._stop.is_set():
            tick = self.scheduler.dispatch_tick()
            for cell_id in tick.cooldown_started:
                self.cells[cell_id].simcell.send(CellEvent.COOLDOWN_DUE)
            for cell_id in tick.cooldown_ended:
                self.cells[cell_id].simcell.send(CellEvent.COOLDOWN_DONE)
            for assignment in tick.assignments:
                self.cells[assignment.cell_id].assignments.put(assignment.job_id)
            self._stop.wait(0.02)

    def _worker(self, cell: CellExec):
        while not self._stop.is_set():
            try:
                job_id = cell.assignments.get(timeout=0.1)
            except queue.Empty:
                continue
            self._run_job(cell, job_id)

    def _run_job(self, cell: CellExec, job_id: str):
        job = self.scheduler.job(job_id)
        task = self.tasks[job.task_id]
        self.bus.publish(job_id, {"type": "status", "status": JobStatus.RUNNING.value})

        def on_episode(record, result):
            self.scheduler.append_episode(job_id, record)
            self.bus.publish(
                job_id,
                {
                    "type": "episode",
                    "index": record.index,
                    "verdict": record.success_verdict.value if record.success_verdict else None,
                    "valid": record.valid,
                    "rerun_of": record.rerun_of,
                    "valid_count": result.valid_count,
                    "success_count": result.success_count,
                    "num_trials": job.num_trials,
                    "running_rate": result.running_rate(),
                },
            )

        def on_status(j):
            self.scheduler.update_job(j)
            if j.status not in TERMINAL_JOB_STATUSES:
                self.bus.publish(job_id, {"type": "status", "status": j.status.value})

        cell.simcell.prepare(task)
        engine = Engine(
            task=task,
            cell=cell.simcell,
            policy_endpoint=gateway.PolicyEndpoint(job.policy_endpoint),
            classifier_endpoint=cell.classifier_servers[job.task_id].endpoint(),
            config=self.config.engine,
            interventions=self.interventions,
            hooks=EngineHooks(on_episode=on_episode, on_status=on_status),
            frame_dir=self.reports.frames_dir(job_id),
        )
        started = time.time()
        try:
            final_job, result = engine.run_evaluation(job, self.scheduler.cancel_tokens[job_id])
        except Exception as exc:
            logger.exception("job %s crashed", job_id)
            final_job = job_transition(job, JobEvent.FAIL) if job.status == JobStatus.RUNNING else job
            final_job.finished_at = time.time()
            result = EvaluationResult(job_id=job_id, error=f"{type(exc).__name__}: {exc}")
            result.final_event = JobEvent.FAIL
        active_seconds = time.time() - started
        try:
            self.reports.finalize(final_job, result, result.interventions)
        except Exception:
            logger.exception("report finalize failed for %s", job_id)
        self.scheduler.report_done(cell.config.cell_id, job_id, final_job, active_seconds)
        self.bus.publish(
            job_id,
            {
                "type": "status",
                "status": final_job.status.value,
                "report_url": f"/api/reports/{job_id}",
            },
        )

    # -- api helpers ----------------------------------------------------------

    def submit(self, task_id: str, policy_url: str, num_trials, submitter: str) -> str:
        def probe(url):
            return gateway.health_check(gateway.PolicyEndpoint(url, request_timeout_ms=2000, max_retries=0))

        return self.scheduler.submit(
            task_id, policy_url, num_trials, submitter, health_probe=probe
        )

    def cell_snapshots(self) -> list[dict]:
        snaps = self.scheduler.snapshot_cells()
        for snap in snaps:
            cell = self.cells[snap["cell_id"]]
            snap["phase"] = cell.simcell.phase.value
            ticket = self.interventions.unresolved_for_cell(snap["cell_id"])
            snap["unresolved_ticket"] = ticket.to_dict() if ticket else None
        return snaps

    def resume_cell(self, cell_id: str):
        ticket = self.interventions.unresolved_for_cell(cell_id)
        if ticket is None:
            return None
        return self.interventions.resolve(ticket.ticket_id)


# -- HTTP layer -----------------------------------------------------------------


class SubmitBody(BaseModel):
    task_id: str
    policy_url: str
    num_trials: int | None = None
    submitter: str = "anonymous"


class RelabelBody(BaseModel):
    episode_index: int
    new_label: str
    annotator: str = "operator"


def _sse(event: dict) -> str:
    return f"data: {json.dumps(event)}\n\n"


def create_app(runtime: ServiceRuntime) -> FastAPI:
    app = FastAPI(title="robocell", docs_url=None, redoc_url=None)

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors())})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/api/tasks")
    def list_tasks():
        return [
            {
                "task_id": t.task_id,
                "scene": t.scene.value,
                "instruction": t.instruction,
                "max_steps": t.max_steps,
            }
            for t in runtime.tasks.values()
        ]

    @app.post("/api/jobs", status_code=202)
    def submit_job(body: SubmitBody):
        try:
            job_id = runtime.submit(body.task_id, body.policy_url, body.num_trials, body.submitter)
        except UnknownTask as exc:
            return JSONResponse(status_code=404, content={"error": f"unknown task: {exc}"})
        except InvalidTrialCount as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        except SubmitterBusy as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})
        return {"job_id": job_id}

    @app.get("/api/jobs")
    def list_jobs():
        return runtime.scheduler.snapshot_jobs()

    @app.get("/api/jobs/{job_id}")
    def job_detail(job_id: str):
        try:
            detail = runtime.scheduler.snapshot_job(job_id)
        except UnknownJob:
            return JSONResponse(status_code=404, content={"error": "unknown job"})
        if detail["status"] in _TERMINAL_VALUES:
            detail["report_url"] = f"/api/reports/{job_id}"
        return detail

    @app.post("/api/jobs/{job_id}/cancel")
    def cancel_job(job_id: str):
        try:
            status = runtime.scheduler.cancel(job_id)
        except UnknownJob:
            return JSONResponse(status_code=404, content={"error": "unknown job"})
        except TerminalJob as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})
        return {"job_id": job_id, "status": status.value}

    @app.get("/api/jobs/{job_id}/events")
    def job_events(job_id: str):
        try:
            runtime.scheduler.job(job_id)
        except UnknownJob:
            return JSONResponse(status_code=404, content={"error": "unknown job"})

        def stream():
            q = runtime.bus.subscribe(job_id)
            try:
                snapshot = runtime.scheduler.snapshot_job(job_id)
                last_index = max(
                    (e["index"] for e in snapshot.get("episodes", [])), default=-1
                )
                yield _sse({"type": "snapshot", "job": snapshot})
                if snapshot["status"] in _TERMINAL_VALUES:
                    return
                while True:
                    try:
                        event = q.get(timeout=15.0)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    if event is runtime.bus.close_sentinel:
                        return
                    if event.get("type") == "episode" and event["index"] <= last_index:
                        continue
                    yield _sse(event)
                    if event.get("type") == "status" and event.get("status") in _TERMINAL_VALUES:
                        return
            finally:
                runtime.bus.unsubscribe(job_id, q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    @app.get("/api/cells")
    def list_cells():
        return runtime.cell_snapshots()

    @app.post("/api/cells/{cell_id}/resume")
    def resume_cell(cell_id: str):
        if cell_id not in runtime.cells:
            return JSONResponse(status_code=404, content={"error": "unknown cell"})
        try:
            ticket = runtime.resume_cell(cell_id)
        except UnknownTicket:
            ticket = None
        if ticket is None:
            return JSONResponse(
                status_code=409, content={"error": "no unresolved intervention for this cell"}
            )
        return {"resolved": ticket.to_dict()}

    @app.get("/api/reports/{job_id}")
    def get_report(job_id: str):
        try:
            return runtime.reports.read_report(job_id)
        except UnknownReport:
            return JSONResponse(status_code=404, content={"error": "no report for this job"})

    @app.get("/api/reports/{job_id}/frames/{name}")
    def get_frame(job_id: str, name: str):
        path = runtime.reports.frames_dir(job_id) / name
        if "/" in name or "\\" in name or not path.is_file():
            return JSONResponse(status_code=404, content={"error": "no such frame"})
        return FileResponse(path, media_type="image/png")

    @app.get("/api/reports/{job_id}/archive")
    def get_archive(job_id: str):
        job_dir = runtime.reports.job_dir(job_id)
        if not job_dir.is_dir():
            return JSONResponse(status_code=404, content={"error": "no report for this job"})
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            for path in sorted(job_dir.rglob("*")):
                if path.is_file():
                    zf.write(path, path.relative_to(job_dir))
        return Response(
            content=buf.getvalue(),
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="{job_id}.zip"'},
        )

    @app.post("/api/reports/{job_id}/relabel")
    def relabel(job_id: str, body: RelabelBody):
        try:
            report = runtime.reports.relabel_episode(
                job_id, body.episode_index, body.new_label, body.annotator
            )
        except UnknownReport:
            return JSONResponse(status_code=404, content={"error": "no report for this job"})
        except (UnknownEpisode, InvalidLabel) as exc:
            return JSONResponse(status_code=400, content={"error": str(exc)})
        return report

    if runtime.config.console_dir:
        from pathlib import Path

        console = Path(runtime.config.console_dir)
        if console.is_dir():
            app.mount("/ui", StaticFiles(directory=str(console), html=True), name="console")

            @app.get("/")
            def index():
                return RedirectResponse("/ui/")

    return app
