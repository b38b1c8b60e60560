from .cell import ResetRollout, SimCell
from .faults import FaultProfile, IDENTITY_CONFUSION, ZERO_FAULTS, symmetric_confusion
from .render import decode_header, decode_png, encode_png, observation_png, render_observation
from .servers import (
    PortUnavailable,
    ServerHandle,
    SyntheticPolicySpec,
    spawn_builtin_classifier_server,
    spawn_builtin_policy_server,
)
from .world import (
    CellWorldState,
    DEFAULT_GEOMETRY,
    DistributionDegenerate,
    MotorsDown,
    SceneGeometry,
    SceneMismatch,
    ground_truth_success,
    in_distribution,
    sample_initial_state,
    step,
)

__all__ = [
    "CellWorldState",
    "DEFAULT_GEOMETRY",
    "DistributionDegenerate",
    "FaultProfile",
    "IDENTITY_CONFUSION",
    "MotorsDown",
    "PortUnavailable",
    "ResetRollout",
    "SceneGeometry",
    "SceneMismatch",
    "ServerHandle",
    "SimCell",
    "SyntheticPolicySpec",
    "ZERO_FAULTS",
    "decode_header",
    "decode_png",
    "encode_png",
    "ground_truth_success",
    "in_distribution",
    "observation_png",
    "render_observation",
    "sample_initial_state",
    "spawn_builtin_classifier_server",
    "spawn_builtin_policy_server",
    "step",
    "symmetric_confusion",
]
