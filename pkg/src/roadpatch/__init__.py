"""roadpatch: a desk-scale workbench for dirty-road-patch attacks on
camera-based lane keeping.

The package closes the loop synthetic road scene -> pinhole camera ->
lane detector -> pure-pursuit controller -> bicycle plant, and optimizes
the gray levels of a painted road patch so the loop steers itself out of
the lane.  Every differentiable stage ships with its exact adjoint, so
the patch gradient is analytic end to end within a frame.
"""

from .attack import (
    AttackConfig,
    ObjectiveBreakdown,
    OptimizeResult,
    PipelineConfig,
    RolloutRecord,
    aggregate_gradients_bev,
    frame_gradient,
    rollout_objective,
    optimize_patch,
    project_patch,
    rollout_with_patch,
)
from .camera import (
    CameraConfig,
    Frame,
    ground_to_image,
    image_to_ground,
    patch_footprint,
    splat_camera_to_bev,
    warp_bev_to_camera,
)
from .config import ScenarioConfig, config_from_dict, load_config
from .controller import ControllerConfig, steer_from_path
from .detector import (
    DesiredPath,
    DetectorConfig,
    LaneDetection,
    desired_path,
    detect_lanes,
    detector_gradient,
)
from .errors import (
    AdjointMismatchError,
    ConfigError,
    ConstraintViolationError,
    DetectionFailedError,
    IncompleteModelInputError,
    InvalidArgumentError,
    NoVisibilityError,
    RoadPatchError,
)
from .motion import VehicleParams, VehicleState, rollout, step
from .scene import (
    BevImage,
    PatchPlacement,
    PatchState,
    RoadSpec,
    composite_patch,
    identity_patch,
    lane_line_mask,
    render_road_bev,
    uniform_patch,
)
from .sim import SimResult, attack_success_time, run_closed_loop

__version__ = "0.1.0"

__all__ = [
    "AdjointMismatchError",
    "AttackConfig",
    "BevImage",
    "CameraConfig",
    "ConfigError",
    "ConstraintViolationError",
    "ControllerConfig",
    "DesiredPath",
    "DetectionFailedError",
    "DetectorConfig",
    "Frame",
    "IncompleteModelInputError",
    "InvalidArgumentError",
    "LaneDetection",
    "NoVisibilityError",
    "ObjectiveBreakdown",
    "OptimizeResult",
    "PatchPlacement",
    "PatchState",
    "PipelineConfig",
    "RoadPatchError",
    "RoadSpec",
    "RolloutRecord",
    "ScenarioConfig",
    "SimResult",
    "VehicleParams",
    "VehicleState",
    "aggregate_gradients_bev",
    "attack_success_time",
    "composite_patch",
    "config_from_dict",
    "desired_path",
    "detect_lanes",
    "detector_gradient",
    "frame_gradient",
    "ground_to_image",
    "identity_patch",
    "image_to_ground",
    "lane_line_mask",
    "load_config",
    "rollout_objective",
    "optimize_patch",
    "patch_footprint",
    "project_patch",
    "render_road_bev",
    "rollout",
    "rollout_with_patch",
    "run_closed_loop",
    "splat_camera_to_bev",
    "step",
    "steer_from_path",
    "uniform_patch",
    "warp_bev_to_camera",
]
