"""HTTP clients for the two external service contracts: the user-hosted
policy server (POST /act) and the classifier services (POST /classify).

All bodies are UTF-8 JSON. Images travel as base64 PNG, exactly 256x256 RGB.
Clients are stateless module functions; every call is independent and safe to
issue concurrently from multiple cells.
"""

from __future__ import annotations

import base64
import math
import time
from dataclasses import dataclass

import requests

from .core.types import VerdictLabel

ACTION_DIM = 7

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class GatewayError(Exception):
    pass


class PolicyTimeout(GatewayError):
    """Endpoint unreachable or too slow after exhausting the retry budget."""


class MalformedResponse(GatewayError):
    """Response body does not conform to the wire contract."""


class DimensionError(MalformedResponse):
    """An action arrived with the wrong number of components."""


class UnparseableAnswer(GatewayError):
    """Classifier text not present in the task's answer table."""


@dataclass(frozen=True)
class PolicyEndpoint:
    base_url: str
    request_timeout_ms: int = 10_000
    max_retries: int = 2

    def __post_init__(self):
        if self.request_timeout_ms <= 0:
            raise ValueError("request_timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def timeout_s(self) -> float:
        return self.request_timeout_ms / 1000.0

    def url(self, route: str) -> str:
        return self.base_url.rstrip("/") + route


def validate_png_rgb256(data: bytes) -> None:
    """Cheap header check: PNG signature, 256x256, 8-bit truecolor."""
    if len(data) < 26 or data[:8] != _PNG_SIGNATURE:
        raise ValueError("image is not a PNG")
    width = int.from_bytes(data[16:20], "big")
    height = int.from_bytes(data[20:24], "big")
    bit_depth, color_type = data[24], data[25]
    if (width, height, bit_depth, color_type) != (256, 256, 8, 2):
        raise ValueError(
            f"image must be 256x256 8-bit RGB, got {width}x{height} depth={bit_depth} color={color_type}"
        )


@dataclass(frozen=True)
class ObservationPayload:
    image_png: bytes
    instruction: str
    proprio: tuple[float, ...] | None = None

    def __post_init__(self):
        validate_png_rgb256(self.image_png)
        if self.proprio is not None and len(self.proprio) != ACTION_DIM:
            raise ValueError(f"proprio must have {ACTION_DIM} components")

    def to_wire(self) -> dict:
        body = {
            "image": base64.b64encode(self.image_png).decode("ascii"),
            "instruction": self.instruction,
        }
        if self.proprio is not None:
            body["proprio"] = list(self.proprio)
        return body


@dataclass(frozen=True)
class ActionChunk:
    actions: tuple[tuple[float, ...], ...]

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class ClassifierVerdict:
    label: VerdictLabel
    raw_text: str


def parse_action_payload(body) -> ActionChunk:
    """Validate a decoded /act response body into an ActionChunk.

    Pure function so protocol fuzzing can hit it directly.
    """
    if not isinstance(body, dict) or "actions" not in body:
        raise MalformedResponse("response must be an object with an 'actions' array")
    actions = body["actions"]
    if not isinstance(actions, list) or len(actions) == 0:
        raise MalformedResponse("'actions' must be a non-empty array")
    parsed = []
    for i, action in enumerate(actions):
        if not isinstance(action, list):
            raise MalformedResponse(f"action {i} is not an array")
        if len(action) != ACTION_DIM:
            raise DimensionError(f"action {i} has {len(action)} components, expected {ACTION_DIM}")
        values = []
        for j, v in enumerate(action):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise MalformedResponse(f"action {i} component {j} is not a finite number: {v!r}")
            values.append(float(v))
        parsed.append(tuple(values))
    return ActionChunk(actions=tuple(parsed))


def parse_classifier_answer(raw_text, answer_table: dict[str, VerdictLabel]) -> ClassifierVerdict:
    """Case-insensitive exact match after trimming; no fuzzy matching."""
    if not isinstance(raw_text, str):
        raise UnparseableAnswer(f"answer must be text, got {type(raw_text).__name__}")
    key = raw_text.strip().lower()
    table = {k.strip().lower(): v for k, v in answer_table.items()}
    if key not in table:
        raise UnparseableAnswer(f"answer {raw_text!r} not in table {sorted(table)}")
    return ClassifierVerdict(label=table[key], raw_text=raw_text)


def _post_json(endpoint: PolicyEndpoint, route: str, body: dict) -> dict:
    """POST with retries on transport errors only; malformed bodies are not
    retried (a broken server stays broken)."""
    attempts = 1 + endpoint.max_retries
    last_exc = None
    for _ in range(attempts):
        try:
            resp = requests.post(endpoint.url(route), json=body, timeout=endpoint.timeout_s)
        except requests.RequestException as exc:
            last_exc = exc
            continue
        if resp.status_code != 200:
            raise MalformedResponse(f"{route} returned HTTP {resp.status_code}")
        try:
            return resp.json()
        except ValueError:
            raise MalformedResponse(f"{route} body is not JSON") from None
    raise PolicyTimeout(f"{endpoint.base_url}{route} unreachable after {attempts} attempts: {last_exc}")


def query_policy(endpoint: PolicyEndpoint, obs: ObservationPayload) -> tuple[ActionChunk, float]:
    """Fetch one action chunk. Returns (chunk, round-trip latency in ms)."""
    start = time.perf_counter()
    payload = _post_json(endpoint, "/act", obs.to_wire())
    chunk = parse_action_payload(payload)
    latency_ms = (time.perf_counter() - start) * 1000.0
    return chunk, latency_ms


def query_classifier(
    endpoint: PolicyEndpoint,
    image_png: bytes,
    prompt: str,
    answer_table: dict[str, VerdictLabel],
) -> ClassifierVerdict:
    if not prompt.strip():
        raise ValueError("prompt must be non-empty")
    validate_png_rgb256(image_png)
    body = {"image": base64.b64encode(image_png).decode("ascii"), "prompt": prompt}
    payload = _post_json(endpoint, "/classify", body)
    if not isinstance(payload, dict) or "answer" not in payload:
        raise MalformedResponse("/classify response must be an object with 'answer'")
    return parse_classifier_answer(payload["answer"], answer_table)


def health_check(endpoint: PolicyEndpoint) -> bool:
    """True iff the endpoint answers GET /health with 200 within the timeout."""
    try:
        resp = requests.get(endpoint.url("/health"), timeout=endpoint.timeout_s)
        return resp.status_code == 200
    except requests.RequestException:
        return False


RESET_ANSWER_TABLE = {
    "yes": VerdictLabel.SUCCESS,
    "no": VerdictLabel.FAILURE,
    "invalid": VerdictLabel.INVALID,
}
