"""Builtin HTTP servers implementing the policy and classifier wire contracts.

Both decode the exact state header from the observation raster, so they are
stateless across requests: the policy re-plans from the decoded state on
every query, and the per-episode success decision is a pure function of
(seed, episode index).
"""

from __future__ import annotations

import base64
import json
import math
import threading
import time
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from ..core.types import Scene, TaskSpec, VerdictLabel
from ..gateway import PolicyEndpoint
from ..safety import DEFAULT_BOUNDS, WorkspaceBounds
from .faults import VERDICT_ORDER, ZERO_FAULTS
from .render import decode_png, decode_header
from .world import (
    DEFAULT_GEOMETRY,
    CellWorldState,
    SceneGeometry,
    ground_truth_success,
    in_distribution,
    step,
)


class PortUnavailable(Exception):
    pass


@dataclass(frozen=True)
class SyntheticPolicySpec:
    """Parameters of the scripted stand-in for a remote policy under test."""

    target_success_prob: float = 0.6
    steps_to_complete: int = 40
    noise_scale: float = 0.0
    chunk_size: int = 4

    def __post_init__(self):
        if not 0.0 <= self.target_success_prob <= 1.0:
            raise ValueError("target_success_prob must be within [0, 1]")
        if self.steps_to_complete < 1:
            raise ValueError("steps_to_complete must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")


def _cap(vec, limit):
    norm = math.sqrt(sum(v * v for v in vec))
    if norm <= limit or norm == 0.0:
        return vec
    s = limit / norm
    return tuple(v * s for v in vec)


class _Planner:
    """Greedy waypoint planner over the decoded world state."""

    def __init__(self, task: TaskSpec, geometry: SceneGeometry, bounds: WorkspaceBounds, spec: SyntheticPolicySpec):
        self.task = task
        self.geometry = geometry
        self.bounds = bounds
        self.spec = spec
        # Default speeds finish any task in ~22 steps; scale up for tighter
        # step budgets (remaining-distance capping prevents overshoot).
        scale = max(1.0, 24.0 / spec.steps_to_complete)
        self.approach_speed = min(0.05 * scale, 0.12)
        self.drag_speed = min(0.02 * scale, 0.06)
        g = geometry
        self.park = (bounds.max_xyz[0] - 0.03, bounds.max_xyz[1] - 0.03, g.home_pose[2])

    def next_action(self, world: CellWorldState, succeed: bool) -> tuple[float, ...]:
        if not succeed:
            return self._wander(world)
        scene = world.scene
        if scene == Scene.DRAWER:
            return self._drawer(world)
        if scene == Scene.SINK:
            return self._sink(world)
        return self._cloth(world)

    def _move(self, pos, target, speed, grip) -> tuple[float, ...]:
        d = (target[0] - pos[0], target[1] - pos[1], target[2] - pos[2])
        d = _cap(d, speed)
        return (d[0], d[1], d[2], 0.0, 0.0, 0.0, grip)

    def _hold(self) -> tuple[float, ...]:
        return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def _wander(self, world) -> tuple[float, ...]:
        pos = world.gripper_pos
        if _dist3(pos, self.park) > 0.01:
            return self._move(pos, self.park, self.approach_speed, 0.0)
        # Small jiggle so a failing policy keeps "trying".
        dz = 0.004 if world.elapsed_steps % 2 == 0 else -0.004
        return (0.0, 0.0, dz, 0.0, 0.0, 0.0, 0.0)

    def _approach_then(self, world, grab_point, drag_fn):
        pos = world.gripper_pos
        near = _dist3(pos, grab_point) <= self.geometry.grasp_radius_m * 0.5
        if not near:
            return self._move(pos, grab_point, self.approach_speed, 0.0)
        if world.gripper < 0.5:
            return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0)  # close before pulling
        return drag_fn(pos)

    def _drawer(self, world) -> tuple[float, ...]:
        t = self.task.success_threshold_params
        g = self.geometry
        if t.rule == "drawer_open":
            target = min(t.drawer_open_min_m + 0.01, g.drawer_travel_max_m)
            done = world.drawer_openness_m >= target
            direction = 1.0
            remaining = target - world.drawer_openness_m
        else:
            target = t.drawer_closed_max_m / 2.0
            done = world.drawer_openness_m <= target
            direction = -1.0
            remaining = world.drawer_openness_m - target
        if done:
            return self._hold()
        handle = g.drawer_handle_pos(world.drawer_openness_m)

        def drag(pos):
            dy = direction * min(self.drag_speed, max(remaining, 0.0))
            return (0.0, dy, 0.0, 0.0, 0.0, 0.0, 1.0)

        return self._approach_then(world, handle, drag)

    def _sink(self, world) -> tuple[float, ...]:
        g = self.geometry
        t = self.task.success_threshold_params
        center = g.sink_center if t.target_container == "sink" else g.basket_center
        ox, oy = world.object_xy_m
        settled = (
            abs(ox - center[0]) <= g.container_half_m - 0.015
            and abs(oy - center[1]) <= g.container_half_m - 0.015
        )
        pos = world.gripper_pos
        if settled:
            if world.gripper >= 0.5:
                return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)  # release
            if pos[2] < g.home_pose[2] - 0.01:
                return self._move(pos, (pos[0], pos[1], g.home_pose[2]), self.approach_speed, 0.0)
            return self._hold()
        grab = (ox, oy, g.object_grab_z_m)

        def drag(pos):
            d = _cap((center[0] - ox, center[1] - oy), self.drag_speed)
            return (d[0], d[1], 0.0, 0.0, 0.0, 0.0, 1.0)

        return self._approach_then(world, grab, drag)

    def _cloth(self, world) -> tuple[float, ...]:
        g = self.geometry
        target_fold = min(self.task.success_threshold_params.fold_fraction_min + 0.07, 1.0)
        if world.fold_fraction >= target_fold:
            if world.gripper >= 0.5:
                return (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
            return self._hold()
        corner = g.cloth_corner_pos(world.fold_fraction)
        grab = (corner[0], corner[1], g.object_grab_z_m)

        def drag(pos):
            sx, sy = g.cloth_corner_start
            ex, ey = g.cloth_corner_end
            length = g.cloth_diag_len()
            ux, uy = (ex - sx) / length, (ey - sy) / length
            remaining = (target_fold - world.fold_fraction) * length
            s = min(self.drag_speed, remaining)
            return (ux * s, uy * s, 0.0, 0.0, 0.0, 0.0, 1.0)

        return self._approach_then(world, grab, drag)


def _dist3(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


class _PolicyApp:
    def __init__(self, spec, task, geometry, bounds, seed):
        self.spec = spec
        self.task = task
        self.geometry = geometry
        self.bounds = bounds
        self.seed = seed
        self.planner = _Planner(task, geometry, bounds, spec)

    def episode_succeeds(self, episode_index: int) -> bool:
        u = np.random.default_rng([self.seed, int(episode_index)]).random()
        return bool(u < self.spec.target_success_prob)

    def handle(self, path: str, body: dict):
        if path != "/act":
            return 404, {"error": "unknown route"}
        try:
            image = base64.b64decode(body["image"])
            decoded = decode_header(decode_png(image))
        except (KeyError, TypeError, ValueError, OSError) as exc:
            return 400, {"error": f"bad observation: {exc}"}
        succeed = self.episode_succeeds(decoded.episode_index)
        world = decoded.world
        actions = []
        for _ in range(self.spec.chunk_size):
            a = self.planner.next_action(world, succeed)
            if self.spec.noise_scale > 0:
                rng = np.random.default_rng(
                    [self.seed, decoded.episode_index, world.elapsed_steps, 7]
                )
                noise = rng.normal(0.0, self.spec.noise_scale, size=7)
                a = tuple(float(v + n) for v, n in zip(a, noise))
            actions.append([float(v) for v in a])
            # Faultless forward sim keeps the rest of the chunk coherent.
            world, _ = step(world, a, ZERO_FAULTS, None, self.geometry, self.bounds)
        return 200, {"actions": actions}


class _ClassifierApp:
    def __init__(self, confusion, task, geometry, bounds, seed):
        conf = np.asarray(confusion, dtype=float)
        if conf.shape != (3, 3) or np.any(conf < 0) or np.any(np.abs(conf.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("confusion must be 3x3 row-stochastic")
        self.confusion = conf
        self.task = task
        self.geometry = geometry
        self.bounds = bounds
        self._rng = np.random.default_rng([seed, 91])
        self._rng_lock = threading.Lock()

    def _true_verdict(self, world: CellWorldState, kind: str) -> VerdictLabel:
        if kind == "success":
            if world.escaped:
                return VerdictLabel.INVALID
            return (
                VerdictLabel.SUCCESS
                if ground_truth_success(world, self.task)
                else VerdictLabel.FAILURE
            )
        return (
            VerdictLabel.SUCCESS
            if in_distribution(world, self.task)
            else VerdictLabel.FAILURE
        )

    def _emit(self, true_label: VerdictLabel) -> VerdictLabel:
        row = self.confusion[VERDICT_ORDER.index(true_label.value)]
        with self._rng_lock:
            idx = int(self._rng.choice(3, p=row))
        return VerdictLabel(VERDICT_ORDER[idx])

    def handle(self, path: str, body: dict):
        if path != "/classify":
            return 404, {"error": "unknown route"}
        try:
            image = base64.b64decode(body["image"])
            prompt = body["prompt"].strip().lower()
            decoded = decode_header(decode_png(image))
        except (KeyError, AttributeError, TypeError, ValueError, OSError) as exc:
            return 400, {"error": f"bad request: {exc}"}
        if prompt == self.task.success_prompt.strip().lower():
            kind = "success"
        elif prompt == self.task.reset_prompt.strip().lower():
            kind = "reset"
        else:
            return 400, {"error": f"unknown prompt for task {self.task.task_id}"}
        emitted = self._emit(self._true_verdict(decoded.world, kind))
        if kind == "success":
            answer = self.task.answer_for(emitted)
        else:
            answer = {"success": "yes", "failure": "no", "invalid": "invalid"}[emitted.value]
        return 200, {"answer": answer}


class _Handler(BaseHTTPRequestHandler):
    server_version = "robocell-sim"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        pass

    def _send(self, status: int, payload: dict):
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        if self.path == "/health":
            if self.server.delay_s:
                time.sleep(self.server.delay_s)
            self._send(200, {"status": "ok"})
        else:
            self._send(404, {"error": "unknown route"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send(400, {"error": "body must be UTF-8 JSON"})
            return
        if self.server.delay_s:
            time.sleep(self.server.delay_s)
        status, payload = self.server.app.handle(self.path, body)
        self._send(status, payload)


class _AppServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr, app, delay_s=0.0):
        self.app = app
        self.delay_s = delay_s
        try:
            super().__init__(addr, _Handler)
        except OSError as exc:
            raise PortUnavailable(f"cannot bind {addr}: {exc}") from None


class ServerHandle:
    """A running builtin server plus the endpoint to reach it."""

    def __init__(self, server: _AppServer):
        self._server = server
        self._thread = threading.Thread(target=server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    def endpoint(self, request_timeout_ms: int = 10_000, max_retries: int = 2) -> PolicyEndpoint:
        return PolicyEndpoint(self.url, request_timeout_ms, max_retries)

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def spawn_builtin_policy_server(
    spec: SyntheticPolicySpec,
    task: TaskSpec,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
    seed: int = 0,
    host: str = "127.0.0.1",
    port: int = 0,
    delay_s: float = 0.0,
) -> ServerHandle:
    if spec.steps_to_complete > task.max_steps:
        raise ValueError(
            f"steps_to_complete {spec.steps_to_complete} exceeds task max_steps {task.max_steps}"
        )
    app = _PolicyApp(spec, task, geometry, bounds, seed)
    return ServerHandle(_AppServer((host, port), app, delay_s))


def spawn_builtin_classifier_server(
    confusion,
    task: TaskSpec,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
    seed: int = 0,
    host: str = "127.0.0.1",
    port: int = 0,
    delay_s: float = 0.0,
) -> ServerHandle:
    app = _ClassifierApp(confusion, task, geometry, bounds, seed)
    return ServerHandle(_AppServer((host, port), app, delay_s))
