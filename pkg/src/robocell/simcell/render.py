"""Schematic 256x256 observation raster.

The image carries two layers of information:

* drawn shapes (drawer front, containers, object, cloth, gripper marker) so
  the wire contract looks like a camera frame, and
* an exact binary header in the first pixel rows encoding the scene scalars
  as float64, which the builtin policy and classifier servers decode to act
  on the true state. PNG is lossless, so the round trip is bit-exact.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..core.types import Scene
from ..safety import DEFAULT_BOUNDS, WorkspaceBounds
from .world import DEFAULT_GEOMETRY, CellWorldState, SceneGeometry

IMAGE_SIZE = 256

_MAGIC = b"RCL1"
# magic, scene, container, flags, pad, episode_index, elapsed_steps,
# gx, gy, gz, grip, drawer_openness, object_x, object_y, fold_fraction
_HEADER_FMT = "<4sBBBxII8d"
_HEADER_LEN = struct.calcsize(_HEADER_FMT)

_SCENE_IDS = {Scene.DRAWER: 0, Scene.SINK: 1, Scene.CLOTH: 2}
_SCENES_BY_ID = {v: k for k, v in _SCENE_IDS.items()}
_CONTAINER_IDS = {"none": 0, "sink": 1, "basket": 2}
_CONTAINERS_BY_ID = {v: k for k, v in _CONTAINER_IDS.items()}

_FLAG_ESCAPED = 1
_FLAG_MOTORS_OK = 2


class HeaderError(ValueError):
    pass


def encode_header(arr: np.ndarray, world: CellWorldState, episode_index: int) -> None:
    flags = (_FLAG_ESCAPED if world.escaped else 0) | (_FLAG_MOTORS_OK if world.motors_ok else 0)
    blob = struct.pack(
        _HEADER_FMT,
        _MAGIC,
        _SCENE_IDS[world.scene],
        _CONTAINER_IDS[world.container],
        flags,
        episode_index,
        world.elapsed_steps,
        world.gripper_pos[0],
        world.gripper_pos[1],
        world.gripper_pos[2],
        world.gripper,
        world.drawer_openness_m,
        world.object_xy_m[0],
        world.object_xy_m[1],
        world.fold_fraction,
    )
    flat = arr[0].reshape(-1)
    flat[: len(blob)] = np.frombuffer(blob, dtype=np.uint8)


@dataclass(frozen=True)
class DecodedState:
    world: CellWorldState
    episode_index: int


def decode_header(arr: np.ndarray) -> DecodedState:
    blob = arr[0].reshape(-1)[:_HEADER_LEN].tobytes()
    try:
        (
            magic,
            scene_id,
            container_id,
            flags,
            episode_index,
            elapsed,
            gx,
            gy,
            gz,
            grip,
            openness,
            ox,
            oy,
            fold,
        ) = struct.unpack(_HEADER_FMT, blob)
    except struct.error as exc:
        raise HeaderError(f"truncated header: {exc}") from None
    if magic != _MAGIC:
        raise HeaderError("missing state header magic")
    world = CellWorldState(
        scene=_SCENES_BY_ID[scene_id],
        gripper_pos=(gx, gy, gz),
        gripper=grip,
        drawer_openness_m=openness,
        object_xy_m=(ox, oy),
        container=_CONTAINERS_BY_ID[container_id],
        fold_fraction=fold,
        motors_ok=bool(flags & _FLAG_MOTORS_OK),
        elapsed_steps=elapsed,
        escaped=bool(flags & _FLAG_ESCAPED),
    )
    return DecodedState(world=world, episode_index=episode_index)


def _px(
    xy: tuple[float, float], bounds: WorkspaceBounds
) -> tuple[int, int]:
    """World xy (meters) to (row, col) in the top-down raster."""
    (xlo, xhi), (ylo, yhi) = bounds.xy_ranges()
    col = int(round((xy[1] - ylo) / (yhi - ylo) * (IMAGE_SIZE - 1)))
    row = int(round((1.0 - (xy[0] - xlo) / (xhi - xlo)) * (IMAGE_SIZE - 1)))
    return min(max(row, 0), IMAGE_SIZE - 1), min(max(col, 0), IMAGE_SIZE - 1)


def _fill(arr, r0, c0, r1, c1, color):
    arr[max(r0, 0) : max(r1, 0), max(c0, 0) : max(c1, 0)] = color


def _blob(arr, rc, half, color):
    r, c = rc
    _fill(arr, r - half, c - half, r + half + 1, c + half + 1, color)


def render_observation(
    world: CellWorldState,
    episode_index: int,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
) -> np.ndarray:
    arr = np.full((IMAGE_SIZE, IMAGE_SIZE, 3), 225, dtype=np.uint8)
    arr[2:4, :] = (40, 40, 40)  # divider under the header strip

    if world.scene == Scene.DRAWER:
        # Cabinet body with a front panel that slides out along +y.
        body_r, body_c = _px((geometry.drawer_handle_x, geometry.drawer_closed_handle_y), bounds)
        _fill(arr, body_r - 30, body_c - 60, body_r + 30, body_c + 4, (120, 85, 50))
        front = geometry.drawer_handle_pos(world.drawer_openness_m)
        fr, fc = _px((front[0], front[1]), bounds)
        _fill(arr, fr - 28, body_c, fr + 28, fc + 6, (165, 120, 70))
        _blob(arr, (fr, fc + 3), 3, (30, 30, 30))  # handle
    elif world.scene == Scene.SINK:
        half_px = int(geometry.container_half_m / 0.4 * IMAGE_SIZE)
        _blob(arr, _px(geometry.sink_center, bounds), half_px, (90, 130, 220))
        _blob(arr, _px(geometry.basket_center, bounds), half_px, (230, 200, 70))
        if not world.escaped:
            _blob(arr, _px(world.object_xy_m, bounds), 6, (130, 50, 160))
    else:
        # Unfolded half stays light blue; the folded overlay grows with the
        # fold fraction toward the far corner.
        start_rc = _px(geometry.cloth_corner_start, bounds)
        end_rc = _px(geometry.cloth_corner_end, bounds)
        r0, r1 = sorted((start_rc[0], end_rc[0]))
        c0, c1 = sorted((start_rc[1], end_rc[1]))
        _fill(arr, r0 - 6, c0 - 6, r1 + 7, c1 + 7, (140, 170, 235))
        f = world.fold_fraction
        if f > 0:
            depth_r = int((r1 - r0 + 12) * f)
            depth_c = int((c1 - c0 + 12) * f)
            _fill(arr, r0 - 6, c0 - 6, r0 - 6 + depth_r, c0 - 6 + depth_c, (60, 90, 190))
        _blob(arr, _px(geometry.cloth_corner_pos(f), bounds), 3, (20, 30, 80))

    # Gripper marker: cross whose arm length shrinks with height.
    gr, gc = _px((world.gripper_pos[0], world.gripper_pos[1]), bounds)
    arm = max(3, 9 - int(world.gripper_pos[2] * 20))
    color = (30, 160, 60) if world.motors_ok else (200, 40, 40)
    _fill(arr, gr - arm, gc - 1, gr + arm + 1, gc + 2, color)
    _fill(arr, gr - 1, gc - arm, gr + 2, gc + arm + 1, color)

    encode_header(arr, world, episode_index)
    return arr


def encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG", compress_level=1)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"))
    if arr.shape != (IMAGE_SIZE, IMAGE_SIZE, 3):
        raise HeaderError(f"expected {IMAGE_SIZE}x{IMAGE_SIZE}x3, got {arr.shape}")
    return arr


def observation_png(
    world: CellWorldState,
    episode_index: int,
    geometry: SceneGeometry = DEFAULT_GEOMETRY,
    bounds: WorkspaceBounds = DEFAULT_BOUNDS,
) -> bytes:
    return encode_png(render_observation(world, episode_index, geometry, bounds))
