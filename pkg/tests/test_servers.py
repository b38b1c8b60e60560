"""Builtin policy/classifier server behavior, exercised over real HTTP."""

import base64
import dataclasses
import json

import numpy as np
import pytest

from robocell.core.types import Scene, VerdictLabel
from robocell.gateway import PolicyEndpoint, query_classifier, query_policy, ObservationPayload
from robocell.metrics import wilson_interval
from robocell.safety import DEFAULT_BOUNDS
from robocell.simcell import (
    CellWorldState,
    DEFAULT_GEOMETRY,
    IDENTITY_CONFUSION,
    PortUnavailable,
    SyntheticPolicySpec,
    ZERO_FAULTS,
    ground_truth_success,
    observation_png,
    sample_initial_state,
    spawn_builtin_classifier_server,
    spawn_builtin_policy_server,
    step,
    symmetric_confusion,
)
from robocell.simcell.servers import _ClassifierApp, _PolicyApp
from robocell.tasks import DEFAULT_TASKS


def drive_policy(task, handle, episode_index, max_steps=None):
    """Run the wire protocol loop against the server over one episode."""
    rng = np.random.default_rng([1234, episode_index])
    world = sample_initial_state(task, rng)
    world = dataclasses.replace(world, elapsed_steps=0)
    endpoint = handle.endpoint()
    steps = 0
    budget = max_steps or task.max_steps
    while steps < budget:
        obs = ObservationPayload(observation_png(world, episode_index), task.instruction)
        chunk, _ = query_policy(endpoint, obs)
        for action in chunk.actions:
            if steps >= budget:
                break
            world, _ = step(world, action, ZERO_FAULTS, None)
            steps += 1
    return world


class TestBuiltinPolicy:
    @pytest.mark.parametrize("task_id", list(DEFAULT_TASKS))
    def test_p1_reaches_ground_truth_within_budget(self, task_id):
        task = DEFAULT_TASKS[task_id]
        spec = SyntheticPolicySpec(target_success_prob=1.0, steps_to_complete=40, chunk_size=8)
        with spawn_builtin_policy_server(spec, task, seed=7) as handle:
            for episode in range(3):
                world = drive_policy(task, handle, episode)
                assert ground_truth_success(world, task) is True, task_id

    @pytest.mark.parametrize("task_id", ["open_drawer", "put_in_sink", "fold_cloth"])
    def test_p0_never_succeeds(self, task_id):
        task = DEFAULT_TASKS[task_id]
        spec = SyntheticPolicySpec(target_success_prob=0.0, chunk_size=8)
        with spawn_builtin_policy_server(spec, task, seed=7) as handle:
            world = drive_policy(task, handle, 0)
            assert ground_truth_success(world, task) is False

    def test_success_holds_until_final_step(self):
        # Success is judged at the final state only, so the policy must park
        # there and stay.
        task = DEFAULT_TASKS["open_drawer"]
        spec = SyntheticPolicySpec(target_success_prob=1.0, steps_to_complete=30)
        with spawn_builtin_policy_server(spec, task, seed=3) as handle:
            world = drive_policy(task, handle, 0, max_steps=70)
        assert ground_truth_success(world, task) is True

    def test_per_episode_decision_is_deterministic(self):
        task = DEFAULT_TASKS["open_drawer"]
        app = _PolicyApp(SyntheticPolicySpec(target_success_prob=0.6), task, DEFAULT_GEOMETRY, DEFAULT_BOUNDS, seed=42)
        first = [app.episode_succeeds(i) for i in range(100)]
        assert first == [app.episode_succeeds(i) for i in range(100)]

    def test_decision_frequency_within_wilson_ci(self):
        # Oracle: binomial confidence interval around the configured rate.
        task = DEFAULT_TASKS["open_drawer"]
        app = _PolicyApp(SyntheticPolicySpec(target_success_prob=0.6), task, DEFAULT_GEOMETRY, DEFAULT_BOUNDS, seed=42)
        n = 500
        k = sum(app.episode_succeeds(i) for i in range(n))
        lo, hi = wilson_interval(k, n)
        assert lo <= 0.6 <= hi

    def test_noise_scale_perturbs_actions_deterministically(self):
        task = DEFAULT_TASKS["open_drawer"]
        spec = SyntheticPolicySpec(target_success_prob=1.0, noise_scale=0.002)
        with spawn_builtin_policy_server(spec, task, seed=5) as handle:
            world = sample_initial_state(task, np.random.default_rng(0))
            obs = ObservationPayload(observation_png(world, 0), task.instruction)
            a1, _ = query_policy(handle.endpoint(), obs)
            a2, _ = query_policy(handle.endpoint(), obs)
        assert a1.actions == a2.actions  # same state, same noise key

    def test_steps_budget_validation(self):
        task = DEFAULT_TASKS["open_drawer"]
        with pytest.raises(ValueError):
            spawn_builtin_policy_server(
                SyntheticPolicySpec(steps_to_complete=200), task, seed=0
            )

    def test_port_unavailable(self):
        task = DEFAULT_TASKS["open_drawer"]
        with spawn_builtin_policy_server(SyntheticPolicySpec(), task, seed=0) as handle:
            port = int(handle.url.rsplit(":", 1)[1])
            with pytest.raises(PortUnavailable):
                spawn_builtin_policy_server(SyntheticPolicySpec(), task, seed=0, port=port)


def random_world(task, rng):
    g = DEFAULT_GEOMETRY
    w = CellWorldState(
        scene=task.scene,
        gripper_pos=(rng.uniform(0.05, 0.45), rng.uniform(-0.25, 0.25), rng.uniform(0.02, 0.35)),
    )
    if task.scene == Scene.DRAWER:
        return dataclasses.replace(w, drawer_openness_m=rng.uniform(0, g.drawer_travel_max_m))
    if task.scene == Scene.SINK:
        xy = (rng.uniform(0.05, 0.45), rng.uniform(-0.25, 0.25))
        return dataclasses.replace(w, object_xy_m=xy, container=g.container_of(xy))
    return dataclasses.replace(w, fold_fraction=rng.uniform(0, 1))


class TestBuiltinClassifier:
    def test_identity_confusion_matches_oracle(self):
        rng = np.random.default_rng(11)
        for task_id in ("open_drawer", "close_drawer", "put_in_sink", "fold_cloth"):
            task = DEFAULT_TASKS[task_id]
            with spawn_builtin_classifier_server(IDENTITY_CONFUSION, task, seed=1) as handle:
                for _ in range(40):
                    world = random_world(task, rng)
                    verdict = query_classifier(
                        handle.endpoint(), observation_png(world, 0),
                        task.success_prompt, task.answer_table,
                    )
                    expected = (
                        VerdictLabel.SUCCESS
                        if ground_truth_success(world, task)
                        else VerdictLabel.FAILURE
                    )
                    assert verdict.label == expected

    def test_symmetric_confusion_accuracy_near_095(self):
        # Oracle: expected accuracy is the diagonal mass of the confusion row.
        task = DEFAULT_TASKS["open_drawer"]
        app = _ClassifierApp(symmetric_confusion(0.05), task, DEFAULT_GEOMETRY, DEFAULT_BOUNDS, seed=9)
        rng = np.random.default_rng(13)
        worlds = [random_world(task, rng) for _ in range(50)]
        images = [
            base64.b64encode(observation_png(w, 0)).decode("ascii") for w in worlds
        ]
        correct = 0
        total = 2000
        for i in range(total):
            w = worlds[i % 50]
            status, payload = app.handle(
                "/classify", {"image": images[i % 50], "prompt": task.success_prompt}
            )
            assert status == 200
            truth = "yes" if ground_truth_success(w, task) else "no"
            correct += payload["answer"] == truth
        accuracy = correct / total
        # Binomial sd at p=.95, n=2000 is ~0.005; allow 4 sigma.
        assert abs(accuracy - 0.95) < 0.02

    def test_escaped_object_reports_invalid(self):
        task = DEFAULT_TASKS["put_in_sink"]
        world = dataclasses.replace(
            random_world(task, np.random.default_rng(0)), escaped=True, container="none"
        )
        with spawn_builtin_classifier_server(IDENTITY_CONFUSION, task, seed=1) as handle:
            verdict = query_classifier(
                handle.endpoint(), observation_png(world, 0), task.success_prompt, task.answer_table
            )
        assert verdict.label == VerdictLabel.INVALID
        assert verdict.raw_text == "invalid"

    def test_reset_prompt_checks_distribution(self):
        task = DEFAULT_TASKS["open_drawer"]
        in_dist = sample_initial_state(task, np.random.default_rng(1))
        out_dist = dataclasses.replace(in_dist, drawer_openness_m=0.09)
        with spawn_builtin_classifier_server(IDENTITY_CONFUSION, task, seed=1) as handle:
            from robocell.gateway import RESET_ANSWER_TABLE

            ok = query_classifier(
                handle.endpoint(), observation_png(in_dist, 0), task.reset_prompt, RESET_ANSWER_TABLE
            )
            bad = query_classifier(
                handle.endpoint(), observation_png(out_dist, 0), task.reset_prompt, RESET_ANSWER_TABLE
            )
        assert ok.label == VerdictLabel.SUCCESS
        assert bad.label == VerdictLabel.FAILURE

    def test_close_drawer_answer_text_follows_scene_question(self):
        # For the close task, success means the drawer is not open: answer "no".
        task = DEFAULT_TASKS["close_drawer"]
        closed = CellWorldState(scene=Scene.DRAWER, gripper_pos=(0.2, 0, 0.1), drawer_openness_m=0.0)
        with spawn_builtin_classifier_server(IDENTITY_CONFUSION, task, seed=1) as handle:
            verdict = query_classifier(
                handle.endpoint(), observation_png(closed, 0), task.success_prompt, task.answer_table
            )
        assert verdict.raw_text == "no"
        assert verdict.label == VerdictLabel.SUCCESS

    def test_row_stochastic_validation(self):
        task = DEFAULT_TASKS["open_drawer"]
        bad = ((0.5, 0.2, 0.2), (0, 1, 0), (0, 0, 1))
        with pytest.raises(ValueError):
            _ClassifierApp(bad, task, DEFAULT_GEOMETRY, DEFAULT_BOUNDS, seed=0)

    def test_bad_observation_rejected(self):
        task = DEFAULT_TASKS["open_drawer"]
        app = _ClassifierApp(IDENTITY_CONFUSION, task, DEFAULT_GEOMETRY, DEFAULT_BOUNDS, seed=0)
        status, _ = app.handle("/classify", {"image": "bm90IGEgcG5n", "prompt": task.success_prompt})
        assert status == 400
        status, _ = app.handle("/classify", {"prompt": task.success_prompt})
        assert status == 400
