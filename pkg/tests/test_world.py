import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robocell.core.types import InitialStateRanges, Scene
from robocell.safety import DEFAULT_BOUNDS
from robocell.simcell import (
    CellWorldState,
    DEFAULT_GEOMETRY,
    DistributionDegenerate,
    FaultProfile,
    SceneMismatch,
    ZERO_FAULTS,
    ground_truth_success,
    in_distribution,
    sample_initial_state,
    step,
)
from robocell.simcell.world import MotorsDown, perturbed_non_initial_state
from robocell.tasks import DEFAULT_TASKS

G = DEFAULT_GEOMETRY
ZERO = (0.0,) * 7


def drawer_world(openness=0.0, **kw):
    return CellWorldState(scene=Scene.DRAWER, gripper_pos=G.home_pose, drawer_openness_m=openness, **kw)


def sink_world(xy=(0.2, -0.12), **kw):
    return CellWorldState(
        scene=Scene.SINK, gripper_pos=G.home_pose, object_xy_m=xy,
        container=G.container_of(xy), **kw,
    )


def cloth_world(fold=0.0, **kw):
    return CellWorldState(scene=Scene.CLOTH, gripper_pos=G.home_pose, fold_fraction=fold, **kw)


class TestStep:
    def test_zero_action_only_advances_clock(self):
        w0 = drawer_world(openness=0.004)
        w1, events = step(w0, ZERO, ZERO_FAULTS, None)
        assert w1.elapsed_steps == 1
        assert events == []
        # Efforts are telemetry recomputed every step; everything else holds.
        assert dataclasses.replace(w1, elapsed_steps=0, joint_efforts=w0.joint_efforts) == w0
        assert w1.joint_efforts == (G.effort_base,) * 6

    def test_boundary_clamp_event(self):
        w0 = drawer_world()
        w1, events = step(w0, (5.0, 0, 0, 0, 0, 0, 0), ZERO_FAULTS, None)
        assert w1.gripper_pos[0] == DEFAULT_BOUNDS.max_xyz[0]
        assert "boundary_clamped" in events

    def test_forced_motor_fault(self):
        rng = np.random.default_rng(0)
        fault = FaultProfile(motor_failure_prob_per_step=1.0)
        w1, events = step(drawer_world(), ZERO, fault, rng)
        assert "motor_fault" in events and not w1.motors_ok
        with pytest.raises(MotorsDown):
            step(w1, ZERO, fault, rng)

    def test_non_finite_action_rejected(self):
        with pytest.raises(ValueError):
            step(drawer_world(), (math.nan, 0, 0, 0, 0, 0, 0), ZERO_FAULTS, None)
        with pytest.raises(ValueError):
            step(drawer_world(), (0, 0, 0, 0, 0, 0), ZERO_FAULTS, None)

    def test_drawer_drag(self):
        handle = G.drawer_handle_pos(0.0)
        w = drawer_world()
        w = dataclasses.replace(w, gripper_pos=handle, gripper=1.0)
        w1, _ = step(w, (0, 0.02, 0, 0, 0, 0, 1.0), ZERO_FAULTS, None)
        assert w1.drawer_openness_m == pytest.approx(0.02)
        # Keep pulling far past the rail: openness saturates at travel max.
        for _ in range(20):
            w1, _ = step(w1, (0, 0.02, 0, 0, 0, 0, 1.0), ZERO_FAULTS, None)
        assert w1.drawer_openness_m == G.drawer_travel_max_m

    def test_drawer_requires_closed_gripper(self):
        w = dataclasses.replace(drawer_world(), gripper_pos=G.drawer_handle_pos(0.0))
        w1, _ = step(w, (0, 0.02, 0, 0, 0, 0, 0.0), ZERO_FAULTS, None)
        assert w1.drawer_openness_m == 0.0

    def test_object_drag_updates_container(self):
        w = sink_world(xy=(0.2, -0.12))
        assert w.container == "basket"
        grab = (0.2, -0.12, G.object_grab_z_m)
        w = dataclasses.replace(w, gripper_pos=grab, gripper=1.0)
        for _ in range(30):
            w, _ = step(w, (0, 0.01, 0, 0, 0, 0, 1.0), ZERO_FAULTS, None)
        assert w.object_xy_m[1] == pytest.approx(0.18, abs=1e-9)
        assert w.container == "none" or w.container == "sink"

    def test_high_gripper_cannot_drag_object(self):
        w = sink_world(xy=(0.2, -0.12))
        w = dataclasses.replace(w, gripper_pos=(0.2, -0.12, 0.3), gripper=1.0)
        w1, _ = step(w, (0, 0.02, 0, 0, 0, 0, 1.0), ZERO_FAULTS, None)
        assert w1.object_xy_m == (0.2, -0.12)

    def test_cloth_fold_monotone_along_diagonal(self):
        w = cloth_world()
        corner = G.cloth_corner_pos(0.0)
        w = dataclasses.replace(w, gripper_pos=(corner[0], corner[1], G.object_grab_z_m), gripper=1.0)
        length = G.cloth_diag_len()
        ux = (G.cloth_corner_end[0] - G.cloth_corner_start[0]) / length
        uy = (G.cloth_corner_end[1] - G.cloth_corner_start[1]) / length
        folds = [0.0]
        for _ in range(8):
            w, _ = step(w, (ux * 0.02, uy * 0.02, 0, 0, 0, 0, 1.0), ZERO_FAULTS, None)
            folds.append(w.fold_fraction)
        assert all(b >= a for a, b in zip(folds, folds[1:]))
        assert folds[-1] == pytest.approx(8 * 0.02 / length, abs=1e-9)
        # Dragging far past the end corner saturates the fold at 1.
        for _ in range(20):
            w, _ = step(w, (ux * 0.02, uy * 0.02, 0, 0, 0, 0, 1.0), ZERO_FAULTS, None)
        assert w.fold_fraction == 1.0

    def test_escape_schedule_fires(self):
        w = dataclasses.replace(sink_world(), escape_at_step=3)
        events_seen = []
        for _ in range(4):
            w, events = step(w, ZERO, ZERO_FAULTS, None)
            events_seen.extend(events)
        assert w.escaped and "object_escaped" in events_seen
        assert w.container == "none"

    def test_effort_overload_amplifies_fault(self):
        # At 10x amplification a 0.1 base probability is certain under overload.
        fault = FaultProfile(motor_failure_prob_per_step=0.1, effort_fault_factor=10.0)
        w = dataclasses.replace(drawer_world(), gripper_pos=(DEFAULT_BOUNDS.max_xyz[0],) + G.home_pose[1:])
        w1, events = step(w, (0.5, 0, 0, 0, 0, 0, 0), fault, np.random.default_rng(1))
        assert "effort_overload" in events
        assert "motor_fault" in events


class TestGroundTruth:
    def test_drawer_open_threshold(self):
        task = DEFAULT_TASKS["open_drawer"]
        assert ground_truth_success(drawer_world(0.015), task) is True
        assert ground_truth_success(drawer_world(0.0149), task) is False

    def test_drawer_closed_threshold(self):
        task = DEFAULT_TASKS["close_drawer"]
        assert ground_truth_success(drawer_world(0.002), task) is True
        assert ground_truth_success(drawer_world(0.01), task) is False

    def test_fold_threshold(self):
        task = DEFAULT_TASKS["fold_cloth"]
        assert ground_truth_success(cloth_world(0.25), task) is True
        assert ground_truth_success(cloth_world(0.24), task) is False

    def test_container_rules(self):
        sink_task = DEFAULT_TASKS["put_in_sink"]
        assert ground_truth_success(sink_world(G.sink_center), sink_task) is True
        assert ground_truth_success(sink_world((0.0, 0.0)), sink_task) is False
        assert ground_truth_success(sink_world(G.basket_center), sink_task) is False

    def test_escaped_never_contained(self):
        task = DEFAULT_TASKS["put_in_sink"]
        w = dataclasses.replace(sink_world(G.sink_center), escaped=True, container="none")
        assert ground_truth_success(w, task) is False

    def test_scene_mismatch(self):
        with pytest.raises(SceneMismatch):
            ground_truth_success(drawer_world(), DEFAULT_TASKS["put_in_sink"])

    def test_pure_function_of_state(self):
        task = DEFAULT_TASKS["open_drawer"]
        w = drawer_world(0.02)
        assert ground_truth_success(w, task) == ground_truth_success(
            dataclasses.replace(w, elapsed_steps=99), task
        )


class TestSampling:
    def test_deterministic_per_seed(self):
        task = DEFAULT_TASKS["put_in_sink"]
        a = sample_initial_state(task, np.random.default_rng(42))
        b = sample_initial_state(task, np.random.default_rng(42))
        assert a == b

    def test_never_starts_successful(self):
        for task in DEFAULT_TASKS.values():
            rng = np.random.default_rng(3)
            for _ in range(50):
                w = sample_initial_state(task, rng)
                assert ground_truth_success(w, task) is False
                assert in_distribution(w, task) is True

    def test_open_drawer_always_below_threshold(self):
        task = DEFAULT_TASKS["open_drawer"]
        rng = np.random.default_rng(9)
        assert all(
            sample_initial_state(task, rng).drawer_openness_m < 0.015 for _ in range(200)
        )

    def test_uniform_moments_of_object_x(self):
        # Oracle: closed-form uniform moments over the configured range.
        task = DEFAULT_TASKS["put_in_sink"]
        lo, hi = task.initial_state_distribution.object_x_m
        n = 1000
        rng = np.random.default_rng(123)
        xs = [sample_initial_state(task, rng).object_xy_m[0] for _ in range(n)]
        midpoint = (lo + hi) / 2
        sigma = (hi - lo) / math.sqrt(12.0) / math.sqrt(n)
        assert abs(np.mean(xs) - midpoint) < 3 * sigma

    def test_degenerate_distribution_raises(self):
        task = DEFAULT_TASKS["open_drawer"]
        always_open = dataclasses.replace(
            task, initial_state_distribution=InitialStateRanges(drawer_openness_m=(0.05, 0.06))
        )
        with pytest.raises(DistributionDegenerate):
            sample_initial_state(always_open, np.random.default_rng(0))

    def test_perturbed_state_is_out_of_distribution(self):
        rng = np.random.default_rng(5)
        for task in DEFAULT_TASKS.values():
            w = sample_initial_state(task, rng)
            bad = perturbed_non_initial_state(w, task)
            assert in_distribution(bad, task) is False


class TestDeterminism:
    def test_golden_trace(self):
        # Identical seed and action stream reproduce states and fault events.
        task = DEFAULT_TASKS["open_drawer"]
        fault = FaultProfile(motor_failure_prob_per_step=0.02)

        def run():
            rng = np.random.default_rng(777)
            w = sample_initial_state(task, rng)
            trace = []
            arng = np.random.default_rng(1)
            for _ in range(200):
                if not w.motors_ok:
                    w = dataclasses.replace(w, motors_ok=True)
                action = tuple(arng.uniform(-0.02, 0.02, size=7))
                w, events = step(w, action, fault, rng)
                trace.append((w, tuple(events)))
            return trace

        assert run() == run()

    @given(
        st.lists(
            st.tuples(*[st.floats(-0.3, 0.3, allow_nan=False) for _ in range(7)]),
            min_size=1,
            max_size=60,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_workspace_containment_fuzz(self, actions):
        w = sink_world()
        for action in actions:
            w, _ = step(w, action, ZERO_FAULTS, None)
            for axis in range(3):
                assert DEFAULT_BOUNDS.min_xyz[axis] <= w.gripper_pos[axis] <= DEFAULT_BOUNDS.max_xyz[axis]
            assert 0.0 <= w.fold_fraction <= 1.0
            assert 0.0 <= w.drawer_openness_m <= G.drawer_travel_max_m
