"""Scenario files: JSON in, fully validated run setup out.

A scenario bundles everything one experiment needs — road, scene raster,
camera, vehicle, detector, controller, patch placement, and optimizer
settings.  Every field has a default, unknown fields are rejected, and
each complaint names the offending entry by its dotted path.  The
canonical hash of the merged (defaults-applied) document identifies a
setup across runs; a ``DRP_SEED`` environment variable overrides the
file's seed before hashing.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .attack import AttackConfig, PipelineConfig
from .camera import CameraConfig
from .controller import ControllerConfig
from .detector import DetectorConfig, sampling_positions
from .errors import ConfigError, ConstraintViolationError, InvalidArgumentError
from .motion import VehicleParams, VehicleState
from .scene import (
    BevImage,
    PatchPlacement,
    PatchState,
    RoadSpec,
    check_placement,
    identity_patch,
    lane_line_mask,
    render_road_bev,
    uniform_patch,
)

SEED_ENV_VAR = "DRP_SEED"

_FIXED_LEN = {"camera.principal_point": 2, "camera.image_size": 2,
              "camera.model_input_rect": 4}
_INT_LISTS = {"camera.image_size", "camera.model_input_rect"}


def defaults() -> dict:
    """The complete scenario document every file is merged onto."""
    road = RoadSpec()
    cam = CameraConfig()
    det = DetectorConfig()
    ctl = ControllerConfig()
    veh = VehicleParams()
    atk = AttackConfig()
    return {
        "name": "scenario",
        "seed": 0,
        "speed_kmh": 72.0,
        "duration_s": 10.0,
        "goal_m": 0.745,
        "road": {
            "lane_width": road.lane_width,
            "lane_line_width": road.lane_line_width,
            "line_intensity": road.line_intensity,
            "asphalt_intensity": road.asphalt_intensity,
            "texture_noise_amp": road.texture_noise_amp,
            "texture_seed": None,       # null: reuse the scenario seed
            "road_length": road.road_length,
        },
        "scene": {
            "meters_per_pixel": 0.05,
            "x_min": 0.0,
            "y_half_extent": 48.0,
        },
        "camera": {
            "focal": cam.focal,
            "principal_point": list(cam.principal_point),
            "height": cam.height,
            "pitch": cam.pitch,
            "image_size": list(cam.image_size),
            "model_input_rect": list(cam.model_input_rect),
        },
        "vehicle": {
            "wheelbase": veh.wheelbase,
            "dt": veh.dt,
            "max_steer": veh.max_steer,
            "start_x": 0.0,
            "start_y": 0.0,
            "start_heading": 0.0,
        },
        "detector": {
            "n_bands": det.n_bands,
            "band_near": det.band_near,
            "band_far": det.band_far,
            "lateral_span": det.lateral_span,
            "n_lateral": det.n_lateral,
            "tau": det.tau,
            "poly_degree": det.poly_degree,
            "response_bias": det.response_bias,
            "split": det.split,
        },
        "controller": {
            "decision_points": list(ctl.decision_points),
            "lookahead": ctl.lookahead,
            "steer_gain": ctl.steer_gain,
            "max_steer": ctl.max_steer,
        },
        "patch": {
            "start_x": 60.0,
            "center_y": 0.0,
            "width": 2.4,
            "length": 36.0,
            "margin": 0.15,
            "grid_mpp": 0.10,
            "v_min": 0.05,
            "v_max": 0.60,
            "init_value": 0.45,
        },
        "attack": {
            "horizon_frames": atk.horizon_frames,
            "lambda_reg": atk.lambda_reg,
            "direction": atk.direction,
            "step_size": atk.step_size,
            "iterations": atk.iterations,
            "weight_mode": atk.weight_mode,
            "max_halvings": atk.max_halvings,
        },
    }


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _coerce(uval, dval, dotted: str):
    if dval is None:                       # nullable int (texture_seed)
        if uval is None or _is_int(uval):
            return uval
        raise ConfigError(dotted, "expected an integer or null")
    if isinstance(dval, str):
        if not isinstance(uval, str):
            raise ConfigError(dotted, "expected a string")
        return uval
    if _is_int(dval):
        if not _is_int(uval):
            raise ConfigError(dotted, "expected an integer")
        return uval
    if isinstance(dval, float):
        if not (_is_int(uval) or isinstance(uval, float)):
            raise ConfigError(dotted, "expected a number")
        return float(uval)
    if isinstance(dval, list):
        if not isinstance(uval, list):
            raise ConfigError(dotted, "expected a list of numbers")
        want = _FIXED_LEN.get(dotted)
        if want is not None and len(uval) != want:
            raise ConfigError(dotted, f"expected exactly {want} entries")
        if want is None and not uval:
            raise ConfigError(dotted, "expected at least one entry")
        out = []
        for v in uval:
            if dotted in _INT_LISTS:
                if not _is_int(v):
                    raise ConfigError(dotted, "entries must be integers")
                out.append(v)
            else:
                if not (_is_int(v) or isinstance(v, float)):
                    raise ConfigError(dotted, "entries must be numbers")
                out.append(float(v))
        return out
    raise ConfigError(dotted, "unsupported field type")        # pragma: no cover


def merge_with_defaults(user: dict, base: dict | None = None,
                        _path: str = "") -> dict:
    """Recursively overlay ``user`` onto the defaults, rejecting unknowns."""
    if base is None:
        base = defaults()
    if not isinstance(user, dict):
        raise ConfigError(_path.rstrip(".") or "config",
                          "expected a JSON object")
    merged = {}
    for key, dval in base.items():
        dotted = f"{_path}{key}"
        if isinstance(dval, dict):
            sub = user.get(key, {})
            merged[key] = merge_with_defaults(sub, dval, dotted + ".")
        elif key in user:
            merged[key] = _coerce(user[key], dval, dotted)
        else:
            merged[key] = copy.deepcopy(dval)
    for key in user:
        if key not in base:
            raise ConfigError(f"{_path}{key}", "unknown field")
    return merged


def config_hash(merged: dict) -> str:
    """Short stable digest of a merged scenario document."""
    blob = json.dumps(merged, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


@dataclass
class ScenarioConfig:
    """A validated scenario plus builders for its runtime objects."""

    name: str
    seed: int
    speed_kmh: float
    duration_s: float
    goal_m: float
    road: RoadSpec
    meters_per_pixel: float
    x_min: float
    y_half_extent: float
    camera: CameraConfig
    vehicle: VehicleParams
    start_x: float
    start_y: float
    start_heading: float
    detector: DetectorConfig
    controller: ControllerConfig
    attack: AttackConfig
    placement: PatchPlacement
    patch_grid_mpp: float
    patch_v_min: float
    patch_v_max: float
    patch_init_value: float
    merged: dict = field(repr=False)
    hash: str = ""

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.x_min + self.road.road_length,
                -self.y_half_extent, self.y_half_extent)

    @property
    def n_frames(self) -> int:
        return int(round(self.duration_s / self.vehicle.dt))

    def build_scene(self) -> tuple[BevImage, "np.ndarray"]:
        scene = render_road_bev(self.road, self.extent, self.meters_per_pixel)
        mask = lane_line_mask(self.road, self.extent, self.meters_per_pixel)
        return scene, mask

    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(camera=self.camera, detector=self.detector,
                              controller=self.controller, vehicle=self.vehicle)

    def initial_state(self) -> VehicleState:
        return VehicleState(self.start_x, self.start_y, self.start_heading,
                            self.speed_kmh / 3.6)

    def initial_patch(self) -> PatchState:
        return uniform_patch(self.placement, self.patch_grid_mpp,
                             self.patch_init_value, v_min=self.patch_v_min,
                             v_max=self.patch_v_max)

    def identity_patch(self) -> PatchState:
        return identity_patch(self.placement, self.patch_grid_mpp, self.road,
                              v_min=self.patch_v_min, v_max=self.patch_v_max)


def _build(section: str, ctor, kwargs):
    try:
        obj = ctor(**kwargs)
        obj.validate()
        return obj
    except InvalidArgumentError as exc:
        raise ConfigError(section, str(exc)) from exc


def config_from_dict(user: dict, seed_override: int | None = None) -> ScenarioConfig:
    """Merge, apply seed overrides, and validate a scenario document.

    Seed precedence: explicit ``seed_override`` beats the ``DRP_SEED``
    environment variable, which beats the file.  The hash covers the
    effective document, overrides included.
    """
    merged = merge_with_defaults(user)

    if seed_override is not None:
        merged["seed"] = int(seed_override)
    else:
        env_seed = os.environ.get(SEED_ENV_VAR)
        if env_seed is not None:
            try:
                merged["seed"] = int(env_seed)
            except ValueError:
                raise ConfigError("seed",
                                  f"{SEED_ENV_VAR} must be an integer, got "
                                  f"{env_seed!r}") from None
    digest = config_hash(merged)

    for fname, positive in (("speed_kmh", True), ("duration_s", True),
                            ("goal_m", False)):
        if merged[fname] < 0.0 or (positive and merged[fname] == 0.0):
            kind = "positive" if positive else ">= 0"
            raise ConfigError(fname, f"must be {kind}")

    road_kwargs = dict(merged["road"])
    if road_kwargs["texture_seed"] is None:
        road_kwargs["texture_seed"] = merged["seed"]
    road = _build("road", RoadSpec, road_kwargs)

    sc = merged["scene"]
    if sc["meters_per_pixel"] <= 0.0:
        raise ConfigError("scene.meters_per_pixel", "must be positive")
    if sc["y_half_extent"] < 0.5 * (road.lane_width + road.lane_line_width):
        raise ConfigError("scene.y_half_extent",
                          "scene must be wide enough to contain both lane lines")

    cam_kwargs = dict(merged["camera"])
    for key in ("principal_point", "image_size", "model_input_rect"):
        cam_kwargs[key] = tuple(cam_kwargs[key])
    camera = _build("camera", CameraConfig, cam_kwargs)

    veh = merged["vehicle"]
    vehicle = _build("vehicle", VehicleParams,
                     {k: veh[k] for k in ("wheelbase", "dt", "max_steer")})

    detector = _build("detector", DetectorConfig, merged["detector"])
    ctl_kwargs = dict(merged["controller"])
    ctl_kwargs["decision_points"] = tuple(ctl_kwargs["decision_points"])
    controller = _build("controller", ControllerConfig, ctl_kwargs)
    attack = _build("attack", AttackConfig, merged["attack"])

    pk = merged["patch"]
    placement = _build("patch", PatchPlacement,
                       {k: pk[k] for k in ("start_x", "center_y", "width",
                                           "length", "margin")})
    if not 0.0 <= pk["v_min"] < pk["v_max"] <= 1.0:
        raise ConfigError("patch.v_min", "need 0 <= v_min < v_max <= 1")
    if not pk["v_min"] <= pk["init_value"] <= pk["v_max"]:
        raise ConfigError("patch.init_value", "must lie within the gray bounds")
    if pk["v_max"] >= road.line_intensity:
        raise ConfigError("patch.v_max",
                          "patch grays must stay below the lane-line intensity")
    if pk["grid_mpp"] <= 0.0:
        raise ConfigError("patch.grid_mpp", "must be positive")

    cfg = ScenarioConfig(
        name=merged["name"], seed=merged["seed"],
        speed_kmh=merged["speed_kmh"], duration_s=merged["duration_s"],
        goal_m=merged["goal_m"], road=road,
        meters_per_pixel=sc["meters_per_pixel"], x_min=sc["x_min"],
        y_half_extent=sc["y_half_extent"], camera=camera, vehicle=vehicle,
        start_x=veh["start_x"], start_y=veh["start_y"],
        start_heading=veh["start_heading"], detector=detector,
        controller=controller, attack=attack, placement=placement,
        patch_grid_mpp=pk["grid_mpp"], patch_v_min=pk["v_min"],
        patch_v_max=pk["v_max"], patch_init_value=pk["init_value"],
        merged=merged, hash=digest)

    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: ScenarioConfig) -> None:
    det = cfg.detector
    for d in cfg.controller.decision_points:
        if not det.band_near <= d <= det.band_far:
            raise ConfigError(
                "controller.decision_points",
                f"distance {d} lies outside the detector band range "
                f"[{det.band_near}, {det.band_far}]")
    if not det.band_near <= cfg.controller.lookahead <= det.band_far:
        raise ConfigError("controller.lookahead",
                          "must lie within the detector band range")

    try:
        check_placement(cfg.placement, cfg.road)
    except ConstraintViolationError as exc:
        raise ConfigError("patch.placement", str(exc)) from exc

    x_lo, x_hi, y_lo, y_hi = cfg.placement.rect
    ex_lo, ex_hi, ey_lo, ey_hi = cfg.extent
    if x_lo < ex_lo or x_hi > ex_hi or y_lo < ey_lo or y_hi > ey_hi:
        raise ConfigError("patch.start_x",
                          "patch placement leaves the rendered scene extent")

    try:
        sampling_positions(cfg.detector, cfg.camera)
    except InvalidArgumentError as exc:
        raise ConfigError("detector", str(exc)) from exc


def load_config(path, seed_override: int | None = None) -> ScenarioConfig:
    """Read and validate a scenario JSON file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"{path} is not valid JSON: {exc}") from exc
    return config_from_dict(doc, seed_override=seed_override)


def builtin_scenarios() -> list[str]:
    """Names of the scenario files shipped inside the package."""
    root = resources.files("roadpatch") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir()
                  if p.name.endswith(".json"))


def resolve_scenario(name_or_path: str) -> Path:
    """Accept either a filesystem path or a bundled scenario name."""
    p = Path(name_or_path)
    if p.exists():
        return p
    builtin = resources.files("roadpatch") / "scenarios" / f"{name_or_path}.json"
    if builtin.is_file():
        return Path(str(builtin))
    raise ConfigError("config",
                      f"no such scenario file or bundled scenario: "
                      f"{name_or_path!r} (bundled: {', '.join(builtin_scenarios())})")
