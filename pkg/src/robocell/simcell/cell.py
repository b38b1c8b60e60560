"""Stateful runtime for one simulated robot cell.

Owns the world, the cell phase machine, and the per-episode RNG discipline:
one base seed per cell, split by episode index, so a re-run of episode k is
reproducible no matter how many episodes ran before it.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..core.types import CellEvent, CellPhase, Scene, StepPhase, StepRecord, TaskSpec
from ..core.transitions import cell_transition
from ..safety import DEFAULT_BOUNDS, WorkspaceBounds
from .faults import FaultProfile, ZERO_FAULTS
from .render import observation_png
from .world import (
    DEFAULT_GEOMETRY,
    CellWorldState,
    MotorsDown,
    SceneGeometry,
    perturbed_non_initial_state,
    sample_initial_state,
    step,
)

_SETUP_STREAM = 1 << 20
_REPAIR_STREAM = 1 << 21


class ResetRollout:
    """Outcome of one builtin reset attempt."""

    def __init__(self, internal_success: bool, steps: list[StepRecord], fault_interrupted: bool):
        self.internal_success = internal_success
        self.steps = steps
        self.fault_interrupted = fault_interrupted


class SimCell:
    def __init__(
        self,
        cell_id: str,
        fault: FaultProfile = ZERO_FAULTS,
        geometry: SceneGeometry = DEFAULT_GEOMETRY,
        bounds: WorkspaceBounds = DEFAULT_BOUNDS,
        seed: int = 0,
        scripted_reset_scenes: tuple[Scene, ...] = (Scene.DRAWER,),
    ):
        self.cell_id = cell_id
        self.fault = fault
        self.geometry = geometry
        self.bounds = bounds
        self.seed = seed
        self.scripted_reset_scenes = scripted_reset_scenes
        self.phase = CellPhase.IDLE
        self.event_log: list[tuple[str, str]] = []
        self.world: CellWorldState | None = None
        self.episode_index = -1
        self._episode_rng: np.random.Generator | None = None
        self._repair_count = 0

    # -- phase machine -----------------------------------------------------

    def send(self, event: CellEvent) -> CellPhase:
        self.phase = cell_transition(self.phase, event)
        self.event_log.append((event.value, self.phase.value))
        return self.phase

    # -- rng discipline ----------------------------------------------------

    def _rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(stream,)))

    # -- lifecycle ---------------------------------------------------------

    def prepare(self, task: TaskSpec) -> None:
        """Set the scene up for a fresh job (the cell's standing state)."""
        self.world = sample_initial_state(task, self._rng(_SETUP_STREAM), self.geometry, self.bounds)

    def begin_episode(self, episode_index: int) -> None:
        assert self.world is not None, "prepare() must run before episodes"
        self.episode_index = episode_index
        self._episode_rng = self._rng(episode_index)

    def start_eval_rollout(self, max_steps: int) -> None:
        """Zero the step counter and arm this episode's escape schedule.

        Called after any pre-trial reset fix-ups so escapes can only fire
        during evaluation steps.
        """
        assert self.world is not None and self._episode_rng is not None
        escape_at = None
        if self.fault.object_escape_prob_per_episode > 0.0:
            if self._episode_rng.random() < self.fault.object_escape_prob_per_episode:
                escape_at = int(self._episode_rng.integers(1, max_steps + 1))
        self.world = replace(self.world, elapsed_steps=0, escape_at_step=escape_at)

    # -- stepping ----------------------------------------------------------

    def apply_action(self, action, phase: StepPhase) -> tuple[StepRecord, list[str]]:
        assert self.world is not None
        index = self.world.elapsed_steps
        self.world, events = step(
            self.world, action, self.fault, self._episode_rng, self.geometry, self.bounds
        )
        rec = StepRecord(
            step_index=index,
            action=tuple(float(a) for a in action),
            phase=phase,
            boundary_clamped="boundary_clamped" in events,
            motor_fault="motor_fault" in events,
        )
        return rec, events

    def observation_png(self) -> bytes:
        assert self.world is not None
        return observation_png(self.world, max(self.episode_index, 0), self.geometry, self.bounds)

    def proprio(self) -> tuple[float, ...]:
        assert self.world is not None
        w = self.world
        return (*w.gripper_pos, *w.gripper_rpy, w.gripper)

    # -- reset / recovery --------------------------------------------------

    def run_reset(self, task: TaskSpec) -> ResetRollout:
        """One attempt of the builtin reset policy.

        Drives the gripper home over a fixed number of steps (each subject to
        fault injection), then lands the scene either on a fresh initial-state
        draw or, with reset_failure_prob, on a perturbed out-of-distribution
        state.
        """
        assert self.world is not None
        if not self.world.motors_ok:
            raise MotorsDown("reset needs healthy motors")
        rng = self._episode_rng if self._episode_rng is not None else self._rng(_SETUP_STREAM)
        scripted = task.scene in self.scripted_reset_scenes
        count = (
            self.geometry.scripted_reset_step_count if scripted else self.geometry.reset_step_count
        )
        steps: list[StepRecord] = []
        home = self.geometry.home_pose
        for i in range(count):
            pos = self.world.gripper_pos
            remaining = count - i
            delta = (
                (home[0] - pos[0]) / remaining,
                (home[1] - pos[1]) / remaining,
                (home[2] - pos[2]) / remaining,
            )
            rec, _ = self.apply_action((*delta, 0.0, 0.0, 0.0, 0.0), StepPhase.RESET)
            steps.append(rec)
            if rec.motor_fault:
                return ResetRollout(False, steps, fault_interrupted=True)
        ok = rng.random() >= self.fault.reset_failure_prob
        if ok:
            self.world = replace(
                sample_initial_state(task, rng, self.geometry, self.bounds),
                elapsed_steps=self.world.elapsed_steps,
            )
        else:
            self.world = perturbed_non_initial_state(self.world, task, self.geometry, self.bounds)
        return ResetRollout(ok, steps, fault_interrupted=False)

    def reboot_motors(self) -> bool:
        """Software reboot at a safe arm position; may itself fail."""
        assert self.world is not None
        rng = self._episode_rng if self._episode_rng is not None else self._rng(_SETUP_STREAM)
        if self.fault.reboot_failure_prob > 0.0 and rng.random() < self.fault.reboot_failure_prob:
            return False
        self.world = replace(
            self.world, gripper_pos=self.geometry.home_pose, gripper=0.0, motors_ok=True
        )
        return True

    def human_fix(self, task: TaskSpec) -> None:
        """What the operator does before pressing resume: restore the scene
        and the arm by hand."""
        self._repair_count += 1
        rng = self._rng(_REPAIR_STREAM + self._repair_count)
        self.world = sample_initial_state(task, rng, self.geometry, self.bounds)

    def summary(self) -> dict:
        assert self.world is not None
        return self.world.summary()
