"""Fault-injection knobs for a simulated cell."""

from __future__ import annotations

from dataclasses import dataclass, field

VERDICT_ORDER = ("success", "failure", "invalid")

IDENTITY_CONFUSION: tuple[tuple[float, ...], ...] = (
    (1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, 0.0, 1.0),
)


def _prob(name: str, value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be within [0, 1], got {value}")
    return float(value)


@dataclass(frozen=True)
class FaultProfile:
    motor_failure_prob_per_step: float = 0.0
    # Row-stochastic over (success, failure, invalid): row = true label,
    # column = emitted label.
    classifier_confusion: tuple[tuple[float, ...], ...] = IDENTITY_CONFUSION
    reset_failure_prob: float = 0.0
    object_escape_prob_per_episode: float = 0.0
    reboot_failure_prob: float = 0.0
    # Multiplier on the per-step motor failure probability while any joint
    # effort exceeds its limit.
    effort_fault_factor: float = 10.0

    def __post_init__(self):
        _prob("motor_failure_prob_per_step", self.motor_failure_prob_per_step)
        _prob("reset_failure_prob", self.reset_failure_prob)
        _prob("object_escape_prob_per_episode", self.object_escape_prob_per_episode)
        _prob("reboot_failure_prob", self.reboot_failure_prob)
        rows = self.classifier_confusion
        if len(rows) != 3 or any(len(r) != 3 for r in rows):
            raise ValueError("classifier_confusion must be 3x3")
        for i, row in enumerate(rows):
            for p in row:
                _prob(f"classifier_confusion[{i}]", p)
            if abs(sum(row) - 1.0) > 1e-9:
                raise ValueError(f"classifier_confusion row {i} sums to {sum(row)}, not 1")
        if self.effort_fault_factor < 1.0:
            raise ValueError("effort_fault_factor must be >= 1")


ZERO_FAULTS = FaultProfile()


def symmetric_confusion(error: float) -> tuple[tuple[float, ...], ...]:
    """Identity with `error` probability mass moved off-diagonal, split evenly."""
    _prob("error", error)
    off = error / 2.0
    keep = 1.0 - error
    return (
        (keep, off, off),
        (off, keep, off),
        (off, off, keep),
    )
