"""Programmatic safety measures: workspace clamping, joint-effort limits,
and the human-intervention escalation channel.

Ticket store is single-writer behind a lock; webhook delivery runs on a
background thread with its own retry loop so an unreachable receiver never
blocks the evaluation sequence.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .core.types import InterventionReason, InterventionTicket

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WorkspaceBounds:
    min_xyz: tuple[float, float, float]
    max_xyz: tuple[float, float, float]
    effort_limit: tuple[float, ...] = (1.5, 1.5, 1.5, 1.5, 1.5, 1.5)

    def __post_init__(self):
        for lo, hi in zip(self.min_xyz, self.max_xyz):
            if not lo < hi:
                raise ValueError(f"degenerate workspace axis [{lo}, {hi}]")
        if any(l <= 0 for l in self.effort_limit):
            raise ValueError("effort limits must be positive")

    def xy_ranges(self):
        return (self.min_xyz[0], self.max_xyz[0]), (self.min_xyz[1], self.max_xyz[1])


DEFAULT_BOUNDS = WorkspaceBounds(min_xyz=(0.05, -0.25, 0.02), max_xyz=(0.45, 0.25, 0.35))


def clamp_to_workspace(pose, bounds: WorkspaceBounds) -> tuple[tuple[float, float, float], bool]:
    """Componentwise clamp of an xyz position; flag says whether anything moved."""
    clamped = []
    changed = False
    for value, lo, hi in zip(pose, bounds.min_xyz, bounds.max_xyz):
        c = min(max(value, lo), hi)
        changed = changed or (c != value)
        clamped.append(c)
    return (clamped[0], clamped[1], clamped[2]), changed


def check_efforts(efforts, bounds: WorkspaceBounds) -> list[int]:
    """Indices of joints whose |effort| strictly exceeds the limit."""
    return [
        i
        for i, (e, limit) in enumerate(zip(efforts, bounds.effort_limit))
        if abs(e) > limit
    ]


@dataclass
class NotificationConfig:
    webhook_url: str | None = None
    retry_backoff_ms: list[int] = field(default_factory=lambda: [100, 500, 2000])
    idempotency_window_s: int = 3600
    request_timeout_s: float = 3.0

    def __post_init__(self):
        if not self.retry_backoff_ms:
            raise ValueError("need at least one backoff entry")


class WebhookNotifier:
    """At-least-once webhook delivery keyed by an idempotency header.

    Retries follow the configured backoff list, then repeat the last entry
    until the receiver accepts or the notifier is closed. The key stays
    constant across retries so the receiver can deduplicate.
    """

    IDEMPOTENCY_HEADER = "X-Idempotency-Key"

    def __init__(self, config: NotificationConfig):
        self.config = config
        self._closed = threading.Event()
        self._threads: list[threading.Thread] = []

    def deliver(self, payload: dict, idempotency_key: str, on_delivered=None) -> bool:
        """First attempt synchronously; on failure keep retrying in background.

        Returns True if the synchronous attempt landed.
        """
        if self.config.webhook_url is None:
            return False
        if self._post(payload, idempotency_key):
            if on_delivered:
                on_delivered()
            return True
        t = threading.Thread(
            target=self._retry_loop,
            args=(payload, idempotency_key, on_delivered),
            daemon=True,
        )
        self._threads.append(t)
        t.start()
        return False

    def close(self):
        self._closed.set()

    def _post(self, payload: dict, key: str) -> bool:
        try:
            resp = requests.post(
                self.config.webhook_url,
                json=payload,
                headers={self.IDEMPOTENCY_HEADER: key},
                timeout=self.config.request_timeout_s,
            )
            return 200 <= resp.status_code < 300
        except requests.RequestException:
            return False

    def _retry_loop(self, payload: dict, key: str, on_delivered):
        backoffs = list(self.config.retry_backoff_ms)
        i = 0
        while not self._closed.is_set():
            delay = backoffs[min(i, len(backoffs) - 1)] / 1000.0
            if self._closed.wait(delay):
                return
            if self._post(payload, key):
                if on_delivered:
                    on_delivered()
                return
            i += 1


class UnknownTicket(Exception):
    pass


class AlreadyResolved(Exception):
    pass


class InterventionManager:
    """Creates, deduplicates, resolves, and persists intervention tickets.

    At most one unresolved ticket exists per cell: re-escalating an already
    parked cell returns the existing ticket without a new notification.
    """

    def __init__(
        self,
        notifier: WebhookNotifier | None = None,
        clock=time.time,
        persist_path: str | Path | None = None,
        resume_url_base: str | None = None,
    ):
        self._lock = threading.Lock()
        self._tickets: dict[str, InterventionTicket] = {}
        self._resolved_events: dict[str, threading.Event] = {}
        self._notifier = notifier
        self._clock = clock
        self._persist_path = Path(persist_path) if persist_path else None
        self._resume_url_base = resume_url_base

    def raise_ticket(
        self, cell_id: str, reason: InterventionReason, job_id: str | None = None
    ) -> InterventionTicket:
        with self._lock:
            existing = self._unresolved_for_cell_locked(cell_id)
            if existing is not None:
                return existing
            ticket = InterventionTicket(
                ticket_id=uuid.uuid4().hex[:12],
                cell_id=cell_id,
                reason=reason,
                raised_at=self._clock(),
                job_id=job_id,
            )
            self._tickets[ticket.ticket_id] = ticket
            self._resolved_events[ticket.ticket_id] = threading.Event()
            self._persist(ticket)
        if self._notifier is not None:
            payload = {
                "ticket_id": ticket.ticket_id,
                "cell_id": cell_id,
                "reason": reason.value,
                "job_id": job_id,
                "timestamp": ticket.raised_at,
                "resume_url": (
                    f"{self._resume_url_base}/api/cells/{cell_id}/resume"
                    if self._resume_url_base
                    else None
                ),
            }
            delivered = self._notifier.deliver(
                payload, ticket.ticket_id, on_delivered=lambda: self._count_delivery(ticket.ticket_id)
            )
            if not delivered:
                logger.warning("notifier unreachable for ticket %s; retrying in background", ticket.ticket_id)
        return ticket

    def resolve(self, ticket_id: str) -> InterventionTicket:
        with self._lock:
            ticket = self._tickets.get(ticket_id)
            if ticket is None:
                raise UnknownTicket(ticket_id)
            if ticket.resolved:
                raise AlreadyResolved(ticket_id)
            ticket.resolved_at = self._clock()
            self._persist(ticket)
            self._resolved_events[ticket_id].set()
            return ticket

    def await_resolution(self, ticket_id: str, timeout: float | None = None, should_abort=None) -> bool:
        """Block until the ticket resolves. should_abort() is polled so a
        cancel can unblock a parked evaluation."""
        with self._lock:
            if ticket_id not in self._tickets:
                raise UnknownTicket(ticket_id)
            event = self._resolved_events[ticket_id]
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            if event.wait(0.02):
                return True
            if should_abort is not None and should_abort():
                return False
            if deadline is not None and time.monotonic() > deadline:
                return False

    def unresolved_for_cell(self, cell_id: str) -> InterventionTicket | None:
        with self._lock:
            return self._unresolved_for_cell_locked(cell_id)

    def get(self, ticket_id: str) -> InterventionTicket:
        with self._lock:
            if ticket_id not in self._tickets:
                raise UnknownTicket(ticket_id)
            return self._tickets[ticket_id]

    def all_tickets(self) -> list[InterventionTicket]:
        with self._lock:
            return list(self._tickets.values())

    def _unresolved_for_cell_locked(self, cell_id: str) -> InterventionTicket | None:
        for t in self._tickets.values():
            if t.cell_id == cell_id and not t.resolved:
                return t
        return None

    def _count_delivery(self, ticket_id: str):
        with self._lock:
            ticket = self._tickets.get(ticket_id)
            if ticket is not None:
                ticket.notification_delivery_count += 1

    def _persist(self, ticket: InterventionTicket):
        if self._persist_path is None:
            return
        self._persist_path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._persist_path, "a") as fh:
            fh.write(json.dumps(ticket.to_dict()) + "\n")
