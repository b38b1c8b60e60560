import json
import math

import pytest

from robocell.core.types import Scene, VerdictLabel
from robocell.gateway import (
    ActionChunk,
    DimensionError,
    MalformedResponse,
    ObservationPayload,
    PolicyEndpoint,
    PolicyTimeout,
    UnparseableAnswer,
    health_check,
    parse_action_payload,
    parse_classifier_answer,
    query_classifier,
    query_policy,
    validate_png_rgb256,
)
from robocell.simcell import (
    CellWorldState,
    IDENTITY_CONFUSION,
    SyntheticPolicySpec,
    observation_png,
    spawn_builtin_classifier_server,
    spawn_builtin_policy_server,
)
from robocell.tasks import DEFAULT_TASKS

from conftest import StubServer


def build_malformed_corpus():
    """50 bodies violating the /act contract, with the expected error class.

    DimensionError strictly for wrong per-action arity; MalformedResponse for
    every other defect.
    """
    corpus = []
    # Wrong arity: 14 cases.
    for n in (0, 1, 2, 3, 4, 5, 6, 8, 9, 10, 11, 12, 20, 100):
        corpus.append(({"actions": [[0.0] * n]}, DimensionError))
    # Wrong arity buried after a valid action: 4 cases.
    for n in (6, 8, 3, 0):
        corpus.append(({"actions": [[0.0] * 7, [0.0] * n]}, DimensionError))
    # Non-numeric / non-finite components: 12 cases.
    for bad in ("x", None, [], {}, "7", b"0" if False else "0", True, False,
                math.nan, math.inf, -math.inf, "1e5"):
        action = [0.0] * 7
        action[3] = bad
        corpus.append(({"actions": [action]}, MalformedResponse))
    # Structural defects: 20 cases.
    corpus.extend(
        [
            ({}, MalformedResponse),
            ({"actions": []}, MalformedResponse),
            ({"actions": None}, MalformedResponse),
            ({"actions": 7}, MalformedResponse),
            ({"actions": "abc"}, MalformedResponse),
            ({"actions": {}}, MalformedResponse),
            ({"actions": [None]}, MalformedResponse),
            ({"actions": [7]}, MalformedResponse),
            ({"actions": ["1234567"]}, MalformedResponse),
            ({"actions": [{}]}, MalformedResponse),
            ({"actions": [[0.0] * 7, "x"]}, MalformedResponse),
            ({"action": [[0.0] * 7]}, MalformedResponse),
            ({"acts": [[0.0] * 7]}, MalformedResponse),
            (None, MalformedResponse),
            ([], MalformedResponse),
            ([[0.0] * 7], MalformedResponse),
            ("actions", MalformedResponse),
            (42, MalformedResponse),
            ({"actions": [[True] + [0.0] * 6]}, MalformedResponse),
            ({"actions": [[0.0] * 6 + [math.nan]]}, MalformedResponse),
        ]
    )
    return corpus


class TestActionParsing:
    def test_malformed_corpus_fully_rejected(self):
        corpus = build_malformed_corpus()
        assert len(corpus) == 50
        for body, expected in corpus:
            with pytest.raises(expected):
                parse_action_payload(body)

    def test_valid_chunk_accepted(self):
        chunk = parse_action_payload({"actions": [[0.1] * 7, [0, 1, 2, 3, 4, 5, 6]]})
        assert len(chunk) == 2
        assert all(len(a) == 7 for a in chunk.actions)

    def test_ints_coerced_to_floats(self):
        chunk = parse_action_payload({"actions": [[1, 2, 3, 4, 5, 6, 7]]})
        assert chunk.actions[0] == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0)

    def test_json_round_trip_is_bit_exact(self):
        tricky = [0.1, 1 / 3, 1e-17, -2.5e300, math.pi, 0.30000000000000004, -0.0]
        body = {"actions": [tricky]}
        decoded = parse_action_payload(json.loads(json.dumps(body)))
        assert decoded.actions[0] == tuple(tricky)


class TestClassifierParsing:
    def test_binary_answers(self):
        table = DEFAULT_TASKS["open_drawer"].answer_table
        assert parse_classifier_answer("yes", table).label == VerdictLabel.SUCCESS
        assert parse_classifier_answer("no", table).label == VerdictLabel.FAILURE
        assert parse_classifier_answer("invalid", table).label == VerdictLabel.INVALID

    def test_case_and_whitespace_insensitive(self):
        table = DEFAULT_TASKS["open_drawer"].answer_table
        assert parse_classifier_answer("  YES \n", table).label == VerdictLabel.SUCCESS

    def test_unparseable(self):
        table = DEFAULT_TASKS["open_drawer"].answer_table
        with pytest.raises(UnparseableAnswer):
            parse_classifier_answer("maybe", table)

    def test_three_way_sink_table_maps_per_task(self):
        to_sink = DEFAULT_TASKS["put_in_sink"].answer_table
        to_basket = DEFAULT_TASKS["put_in_basket"].answer_table
        assert parse_classifier_answer("basket", to_sink).label == VerdictLabel.FAILURE
        assert parse_classifier_answer("basket", to_basket).label == VerdictLabel.SUCCESS

    def test_deterministic_given_fixed_text(self):
        table = DEFAULT_TASKS["put_in_sink"].answer_table
        first = parse_classifier_answer("sink", table)
        assert all(parse_classifier_answer("sink", table) == first for _ in range(20))


def _obs(task_id="open_drawer"):
    task = DEFAULT_TASKS[task_id]
    world = CellWorldState(scene=task.scene, gripper_pos=(0.2, 0.0, 0.1))
    return ObservationPayload(image_png=observation_png(world, 0), instruction=task.instruction)


class TestObservationPayload:
    def test_wire_shape(self):
        wire = _obs().to_wire()
        assert set(wire) == {"image", "instruction"}

    def test_proprio_included_when_given(self):
        task = DEFAULT_TASKS["open_drawer"]
        world = CellWorldState(scene=task.scene, gripper_pos=(0.2, 0.0, 0.1))
        obs = ObservationPayload(observation_png(world, 0), task.instruction, proprio=(0.0,) * 7)
        assert obs.to_wire()["proprio"] == [0.0] * 7
        with pytest.raises(ValueError):
            ObservationPayload(observation_png(world, 0), task.instruction, proprio=(0.0,) * 6)

    def test_rejects_non_256_image(self):
        import io

        import numpy as np
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.zeros((64, 64, 3), dtype=np.uint8)).save(buf, format="PNG")
        with pytest.raises(ValueError):
            validate_png_rgb256(buf.getvalue())

    def test_rejects_non_png(self):
        with pytest.raises(ValueError):
            validate_png_rgb256(b"not a png at all, sorry")


class TestHttpBehavior:
    def test_query_policy_against_stub(self):
        actions = [[0.25, -0.5, 0.0, 0.0, 0.0, 0.0, 1.0]]
        with StubServer(act_body={"actions": actions}) as stub:
            chunk, latency = query_policy(PolicyEndpoint(stub.url), _obs())
        assert chunk.actions == (tuple(actions[0]),)
        assert 0.0 <= latency <= 10_000

    def test_http_round_trip_bit_exact(self):
        tricky = [0.1, 1 / 3, 1e-300, math.pi, -0.30000000000000004, 271828.1828459045, -0.0]
        with StubServer(act_body={"actions": [tricky]}) as stub:
            chunk, _ = query_policy(PolicyEndpoint(stub.url), _obs())
        assert chunk.actions[0] == tuple(tricky)

    def test_dimension_error_from_server(self):
        with StubServer(act_body={"actions": [[0.0] * 6]}) as stub:
            with pytest.raises(DimensionError):
                query_policy(PolicyEndpoint(stub.url), _obs())

    def test_non_json_body(self):
        with StubServer(raw_bytes=b"<html>oops</html>") as stub:
            with pytest.raises(MalformedResponse):
                query_policy(PolicyEndpoint(stub.url), _obs())

    def test_http_500_is_malformed_not_retried(self):
        with StubServer(act_body={"actions": [[0.0] * 7]}, status=500) as stub:
            with pytest.raises(MalformedResponse):
                query_policy(PolicyEndpoint(stub.url, max_retries=3), _obs())
            assert stub.request_count == 1

    def test_unreachable_exhausts_retries(self):
        endpoint = PolicyEndpoint("http://127.0.0.1:9", request_timeout_ms=200, max_retries=2)
        with pytest.raises(PolicyTimeout):
            query_policy(endpoint, _obs())

    def test_slow_server_times_out_after_all_attempts(self):
        task = DEFAULT_TASKS["open_drawer"]
        with spawn_builtin_policy_server(
            SyntheticPolicySpec(), task, seed=1, delay_s=0.5
        ) as handle:
            endpoint = handle.endpoint(request_timeout_ms=100, max_retries=2)
            with pytest.raises(PolicyTimeout):
                query_policy(endpoint, _obs())

    def test_health_check_paths(self):
        task = DEFAULT_TASKS["open_drawer"]
        with spawn_builtin_policy_server(SyntheticPolicySpec(), task, seed=1) as handle:
            assert health_check(handle.endpoint()) is True
        assert health_check(PolicyEndpoint("http://127.0.0.1:9", request_timeout_ms=200)) is False
        with spawn_builtin_policy_server(
            SyntheticPolicySpec(), task, seed=1, delay_s=0.6
        ) as handle:
            assert health_check(handle.endpoint(request_timeout_ms=150)) is False

    def test_query_classifier_end_to_end(self):
        task = DEFAULT_TASKS["open_drawer"]
        world = CellWorldState(scene=Scene.DRAWER, gripper_pos=(0.2, 0.0, 0.1), drawer_openness_m=0.05)
        with spawn_builtin_classifier_server(IDENTITY_CONFUSION, task, seed=2) as handle:
            verdict = query_classifier(
                handle.endpoint(), observation_png(world, 0), task.success_prompt, task.answer_table
            )
        assert verdict.label == VerdictLabel.SUCCESS
        assert verdict.raw_text == "yes"

    def test_unknown_prompt_is_rejected(self):
        task = DEFAULT_TASKS["open_drawer"]
        world = CellWorldState(scene=Scene.DRAWER, gripper_pos=(0.2, 0.0, 0.1))
        with spawn_builtin_classifier_server(IDENTITY_CONFUSION, task, seed=2) as handle:
            with pytest.raises(MalformedResponse):
                query_classifier(
                    handle.endpoint(), observation_png(world, 0), "what color is the sky?",
                    task.answer_table,
                )
