"""Deterministic scene dynamics for the three simulated cells.

The world is a small set of scalars. The dynamics follow one kinematic
coupling rule: the gripper carries the handle / object / cloth corner when it
is closed within the grasp radius, and every position update is clamped to
the workspace boundary. There is no physics engine; each scene's task scalar
(drawer openness, object position, fold fraction) is the whole story.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..core.types import InitialStateRanges, Scene, TaskSpec
from ..safety import DEFAULT_BOUNDS, WorkspaceBounds, check_efforts, clamp_to_workspace
from .faults import FaultProfile

GRIPPER_CLOSED = 0.5  # gripper scalar at or above this holds objects


class MotorsDown(Exception):
    pass


class SceneMismatch(Exception):
    pass


class DistributionDegenerate(Exception):
    pass


@dataclass(frozen=True)
class SceneGeometry:
    grasp_radius_m: float = 0.03
    grasp_max_z_m: float = 0.10
    home_pose: tuple[float, float, float] = (0.25, 0.0, 0.25)
    # Drawer front slides along +y as it opens; the handle rides on it.
    drawer_handle_x: float = 0.30
    drawer_handle_z: float = 0.05
    drawer_closed_handle_y: float = -0.10
    drawer_travel_max_m: float = 0.12
    # Sink scene: two square regions; the object is tracked by its centroid.
    sink_center: tuple[float, float] = (0.20, 0.12)
    basket_center: tuple[float, float] = (0.20, -0.12)
    container_half_m: float = 0.05
    object_grab_z_m: float = 0.04
    # Cloth: the held corner travels the fold diagonal from start to end.
    cloth_corner_start: tuple[float, float] = (0.30, 0.18)
    cloth_corner_end: tuple[float, float] = (0.14, 0.02)
    # Joint-effort model: effort grows with the commanded motion and spikes
    # when the arm presses against the workspace boundary.
    effort_base: float = 0.05
    effort_gain: float = 10.0
    clamp_effort_factor: float = 4.0
    reset_step_count: int = 10
    scripted_reset_step_count: int = 6

    def drawer_handle_pos(self, openness_m: float) -> tuple[float, float, float]:
        return (self.drawer_handle_x, self.drawer_closed_handle_y + openness_m, self.drawer_handle_z)

    def cloth_corner_pos(self, fold_fraction: float) -> tuple[float, float]:
        sx, sy = self.cloth_corner_start
        ex, ey = self.cloth_corner_end
        return (sx + fold_fraction * (ex - sx), sy + fold_fraction * (ey - sy))

    def cloth_diag_len(self) -> float:
        sx, sy = self.cloth_corner_start
        ex, ey = self.cloth_corner_end
        return math.hypot(ex - sx, ey - sy)

    def container_of(self, xy: tuple[float, float]) -> str:
        for name, center in (("sink", self.sink_center), ("basket", self.basket_center)):
            if (
                abs(xy[0] - center[0]) <= self.container_half_m
                and abs(xy[1] - center[1]) <= self.container_half_m
            ):
                return name
        return "none"


DEFAULT_GEOMETRY = SceneGeometry()


@dataclass
class CellWorldState:
    scene: Scene
    gripper_pos: tuple[float, float, float]
    gripper_rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)
    gripper: float = 0.0  # 0 open .. 1 closed
    drawer_openness_m: float = 0.0
    object_xy_m: tuple[float, float] = (0.0, 0.0)
    container: str = "none"
    fold_fraction: float = 0.0
    joint_efforts: tuple[float, ...] = (0.0,) * 6
    motors_ok: bool = True
    elapsed_steps: int = 0
    escaped: bool = False
    # Episode-scoped: step number at which the object leaves the workspace.
    escape_at_step: int | None = None

    def summary(self) -> dict:
        d: dict = {"scene": self.scene.value, "gripper": list(self.gripper_pos)}
        if self.scene == Scene.DRAWER:
            d["drawer_openness_m"] = self.drawer_openness_m
        elif self.scene == Scene.SINK:
            d["object_x_m"] = self.object_xy_m[0]
            d["object_y_m"] = self.object_xy_m[1]
            d["container"] = self.container
        else:
            d["fold_fraction"] = self.fold_fraction
        if self.escaped:
            d["escaped"] = True
        return d


def _dist3(a, b) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def _dist2(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def step(
    world: CellWorldState,
    action,
    fault: FaultProfile,
    rng: np.random.Generator | None,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
) -> tuple[CellWorldState, list[str]]:
    """Advance the world by one blocking-control delta action.

    Returns the new world plus event tags drawn from
    {boundary_clamped, effort_overload, motor_fault, object_escaped}.
    """
    if not world.motors_ok:
        raise MotorsDown("cannot step with motors down")
    if len(action) != 7 or not all(math.isfinite(float(a)) for a in action):
        raise ValueError(f"action must be 7 finite reals, got {action!r}")

    events: list[str] = []
    dx, dy, dz, droll, dpitch, dyaw, grip_cmd = (float(a) for a in action)
    grip_cmd = min(max(grip_cmd, 0.0), 1.0)

    pre_pos = world.gripper_pos
    raw = (pre_pos[0] + dx, pre_pos[1] + dy, pre_pos[2] + dz)
    new_pos, clamped = clamp_to_workspace(raw, bounds)
    if clamped:
        events.append("boundary_clamped")
    actual = (new_pos[0] - pre_pos[0], new_pos[1] - pre_pos[1], new_pos[2] - pre_pos[2])
    new_rpy = (
        world.gripper_rpy[0] + droll,
        world.gripper_rpy[1] + dpitch,
        world.gripper_rpy[2] + dyaw,
    )

    # The gripper holds something only if it was closed before the motion and
    # stays closed through it.
    holding = world.gripper >= GRIPPER_CLOSED and grip_cmd >= GRIPPER_CLOSED

    openness = world.drawer_openness_m
    object_xy = world.object_xy_m
    container = world.container
    fold = world.fold_fraction

    if world.scene == Scene.DRAWER:
        handle = geometry.drawer_handle_pos(openness)
        if holding and _dist3(pre_pos, handle) <= geometry.grasp_radius_m:
            openness = min(max(openness + actual[1], 0.0), geometry.drawer_travel_max_m)
    elif world.scene == Scene.SINK:
        if (
            holding
            and not world.escaped
            and pre_pos[2] <= geometry.grasp_max_z_m
            and _dist2(pre_pos, object_xy) <= geometry.grasp_radius_m
        ):
            ox, _ = clamp_to_workspace(
                (object_xy[0] + actual[0], object_xy[1] + actual[1], geometry.object_grab_z_m), bounds
            )
            object_xy = (ox[0], ox[1])
        container = geometry.container_of(object_xy) if not world.escaped else "none"
    else:  # cloth
        corner = geometry.cloth_corner_pos(fold)
        if (
            holding
            and pre_pos[2] <= geometry.grasp_max_z_m
            and _dist2(pre_pos, corner) <= geometry.grasp_radius_m
        ):
            sx, sy = geometry.cloth_corner_start
            ex, ey = geometry.cloth_corner_end
            dvx, dvy = ex - sx, ey - sy
            moved = (corner[0] + actual[0], corner[1] + actual[1])
            proj = ((moved[0] - sx) * dvx + (moved[1] - sy) * dvy) / (dvx * dvx + dvy * dvy)
            fold = min(max(proj, 0.0), 1.0)

    # Per-joint effort: three position joints, three wrist joints. Pressing a
    # clamped axis multiplies its effort by the clamp factor.
    commanded = (dx, dy, dz)
    axis_clamped = tuple(r != p for r, p in zip(raw, new_pos))
    pos_efforts = [
        geometry.effort_base
        + geometry.effort_gain
        * abs(c)
        * (geometry.clamp_effort_factor if was_clamped else 1.0)
        for c, was_clamped in zip(commanded, axis_clamped)
    ]
    rot_efforts = [geometry.effort_base + geometry.effort_gain * abs(d) for d in (droll, dpitch, dyaw)]
    efforts = tuple(pos_efforts + rot_efforts)
    overloaded = bool(check_efforts(efforts, bounds))
    if overloaded:
        events.append("effort_overload")

    motors_ok = True
    fail_p = fault.motor_failure_prob_per_step
    if overloaded:
        fail_p = min(1.0, fail_p * fault.effort_fault_factor)
    if fail_p > 0.0 and rng is not None and rng.random() < fail_p:
        motors_ok = False
        events.append("motor_fault")

    elapsed = world.elapsed_steps + 1
    escaped = world.escaped
    if world.escape_at_step is not None and elapsed >= world.escape_at_step and not escaped:
        escaped = True
        container = "none"
        events.append("object_escaped")

    new_world = replace(
        world,
        gripper_pos=new_pos,
        gripper_rpy=new_rpy,
        gripper=grip_cmd,
        drawer_openness_m=openness,
        object_xy_m=object_xy,
        container=container,
        fold_fraction=fold,
        joint_efforts=efforts,
        motors_ok=motors_ok,
        elapsed_steps=elapsed,
        escaped=escaped,
    )
    return new_world, events


def ground_truth_success(world: CellWorldState, task: TaskSpec) -> bool:
    """Oracle task predicate over the world state (pure, no history)."""
    if world.scene != task.scene:
        raise SceneMismatch(f"world is {world.scene.value}, task needs {task.scene.value}")
    t = task.success_threshold_params
    if t.rule == "drawer_open":
        return world.drawer_openness_m >= t.drawer_open_min_m
    if t.rule == "drawer_closed":
        return world.drawer_openness_m <= t.drawer_closed_max_m
    if t.rule == "object_in_container":
        return (not world.escaped) and world.container == t.target_container
    if t.rule == "cloth_folded":
        return world.fold_fraction >= t.fold_fraction_min
    raise ValueError(f"unknown success rule {t.rule!r}")


def in_distribution(world: CellWorldState, task: TaskSpec) -> bool:
    """Reset-success oracle: scene scalar back inside the initial ranges."""
    if world.scene != task.scene:
        raise SceneMismatch(f"world is {world.scene.value}, task needs {task.scene.value}")
    if world.escaped:
        return False
    r = task.initial_state_distribution
    if world.scene == Scene.DRAWER:
        lo, hi = r.drawer_openness_m
        ok = lo <= world.drawer_openness_m <= hi
    elif world.scene == Scene.SINK:
        (xlo, xhi), (ylo, yhi) = r.object_x_m, r.object_y_m
        ok = xlo <= world.object_xy_m[0] <= xhi and ylo <= world.object_xy_m[1] <= yhi
    else:
        lo, hi = r.fold_fraction
        ok = lo <= world.fold_fraction <= hi
    return ok and not ground_truth_success(world, task)


def sample_initial_state(
    task: TaskSpec,
    rng: np.random.Generator,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
) -> CellWorldState:
    """Uniform draw from the task's initial ranges, rejecting states that
    already satisfy the task (so a trial can never start solved)."""
    r = task.initial_state_distribution
    jitter = r.gripper_jitter_m
    for _ in range(100):
        hx, hy, hz = geometry.home_pose
        gp = (
            hx + rng.uniform(-jitter, jitter),
            hy + rng.uniform(-jitter, jitter),
            hz,
        )
        gp, _ = clamp_to_workspace(gp, bounds)
        world = CellWorldState(scene=task.scene, gripper_pos=gp)
        if task.scene == Scene.DRAWER:
            lo, hi = r.drawer_openness_m
            world = replace(world, drawer_openness_m=rng.uniform(lo, hi))
        elif task.scene == Scene.SINK:
            ox = rng.uniform(*r.object_x_m)
            oy = rng.uniform(*r.object_y_m)
            world = replace(world, object_xy_m=(ox, oy), container=geometry.container_of((ox, oy)))
        else:
            lo, hi = r.fold_fraction
            world = replace(world, fold_fraction=rng.uniform(lo, hi))
        if not ground_truth_success(world, task):
            return world
    raise DistributionDegenerate(
        f"100 consecutive draws from {task.task_id} initial ranges were already successful"
    )


def _out_of_range(value_range: tuple[float, float], lo_bound: float, hi_bound: float, margin: float) -> float:
    """A value outside [lo, hi] but inside the physical bounds; used to build
    states a failed reset leaves behind."""
    lo, hi = value_range
    candidate = min(hi + margin, hi_bound)
    if not lo <= candidate <= hi:
        return candidate
    candidate = max(lo - margin, lo_bound)
    if not lo <= candidate <= hi:
        return candidate
    return hi_bound  # range spans everything; nothing is out of distribution


def perturbed_non_initial_state(
    world: CellWorldState,
    task: TaskSpec,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
) -> CellWorldState:
    """What the scene looks like after a failed reset attempt."""
    r = task.initial_state_distribution
    if task.scene == Scene.DRAWER:
        v = _out_of_range(r.drawer_openness_m, 0.0, geometry.drawer_travel_max_m, 0.03)
        return replace(world, drawer_openness_m=v)
    if task.scene == Scene.SINK:
        (xr, yr) = bounds.xy_ranges()
        ox = _out_of_range(r.object_x_m, xr[0], xr[1], 0.06)
        oy = _out_of_range(r.object_y_m, yr[0], yr[1], 0.06)
        return replace(world, object_xy_m=(ox, oy), container=geometry.container_of((ox, oy)))
    v = _out_of_range(r.fold_fraction, 0.0, 1.0, 0.2)
    return replace(world, fold_fraction=v)
