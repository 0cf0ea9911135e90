"""Closed-loop rollouts, the multi-frame bending objective, and the
projected-gradient patch optimizer.

The attack objective scores a whole rollout: the sum over frames and
decision points of the desired-path slope, plus a weighted penalty on
how far the patch's visible pixels stray from a neutral gray.  Steering
right means making the path bend right, so the optimizer always
minimizes ``direction_sign * path_term + lambda * reg_term`` with
``direction_sign`` +1 for a rightward attack and -1 for leftward.

Per-frame pixel gradients treat the vehicle states of the recorded
rollout as fixed (no differentiation through the controller or plant);
closing the loop again after each update is what feeds the state
dependence back in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import (
    CameraConfig,
    Frame,
    patch_footprint,
    splat_camera_to_bev,
    warp_bev_to_camera,
)
from .controller import ControllerConfig, path_derivatives, steer_from_path
from .detector import (
    DesiredPath,
    DetectorConfig,
    LaneDetection,
    desired_path,
    detect_lanes,
    detector_gradient,
)
from .errors import (
    DetectionFailedError,
    InvalidArgumentError,
    NoVisibilityError,
)
from .motion import VehicleParams, VehicleState, step
from .scene import BevImage, PatchState, composite_patch


@dataclass(frozen=True)
class PipelineConfig:
    """The fixed perception/control stack a rollout runs through."""

    camera: CameraConfig = CameraConfig()
    detector: DetectorConfig = DetectorConfig()
    controller: ControllerConfig = ControllerConfig()
    vehicle: VehicleParams = VehicleParams()

    def validate(self) -> None:
        self.camera.validate()
        self.detector.validate()
        self.controller.validate()
        self.vehicle.validate()


@dataclass(frozen=True)
class AttackConfig:
    horizon_frames: int = 46
    lambda_reg: float = 1e-4
    direction: str = "right"
    step_size: float = 0.05
    iterations: int = 100
    weight_mode: str = "coverage"
    max_halvings: int = 5

    def validate(self) -> None:
        if self.horizon_frames < 1:
            raise InvalidArgumentError("horizon_frames must be >= 1")
        if self.lambda_reg < 0.0:
            raise InvalidArgumentError("lambda_reg must be >= 0")
        if self.direction not in ("left", "right"):
            raise InvalidArgumentError("direction must be 'left' or 'right'")
        if self.step_size <= 0.0:
            raise InvalidArgumentError("step_size must be positive")
        if self.iterations < 0:
            raise InvalidArgumentError("iterations must be >= 0")
        if self.weight_mode not in ("coverage", "uniform"):
            raise InvalidArgumentError("weight_mode must be 'coverage' or 'uniform'")
        if self.max_halvings < 0:
            raise InvalidArgumentError("max_halvings must be >= 0")

    @property
    def direction_sign(self) -> float:
        return 1.0 if self.direction == "right" else -1.0


@dataclass
class PatchProjection:
    """Where the patch landed in one frame and what it looked like."""

    index: int
    count: int                      # pixels whose ground point hits the patch
    rect_count: int                 # of those, pixels inside the model input
    pixel_values: np.ndarray        # frame grays over the footprint
    pose: VehicleState
    mask: np.ndarray | None = None  # full image mask (kept for gradient runs)


@dataclass
class RolloutRecord:
    """Everything one closed-loop pass produced."""

    states: list[VehicleState]
    steers: list[float]
    detections: list[LaneDetection]
    paths: list[DesiredPath]
    projections: list[PatchProjection]
    frames: list[Frame] | None
    truncated: bool
    horizon: int

    @property
    def frames_evaluated(self) -> int:
        return len(self.steers)

    def max_lateral_deviation(self) -> float:
        return max(abs(s.y) for s in self.states)


@dataclass
class ObjectiveBreakdown:
    """The rollout objective split into its bending and stealth parts."""

    path_term: float
    reg_term: float
    lambda_reg: float
    direction: str
    per_frame_path: np.ndarray
    per_frame_reg: np.ndarray

    @property
    def total(self) -> float:
        return self.path_term + self.lambda_reg * self.reg_term

    @property
    def directed(self) -> float:
        sign = 1.0 if self.direction == "right" else -1.0
        return sign * self.path_term + self.lambda_reg * self.reg_term


@dataclass
class FrameGradient:
    """Image-space gradient of the directed objective for one frame."""

    image: np.ndarray
    pose: VehicleState
    index: int


def rollout_with_patch(scene: BevImage, line_mask: np.ndarray,
                       patch: PatchState | None, state0: VehicleState,
                       horizon: int, pipe: PipelineConfig, *,
                       keep_frames: bool = False,
                       frame_sink=None) -> RolloutRecord:
    """Drive the perception/control loop for ``horizon`` frames.

    Frame t is rendered at state t-1, detected, and steered on; the
    plant then advances.  A mid-run detection failure truncates the
    record (flagged) rather than raising; geometric failures such as an
    unsourced model input propagate.
    """
    pipe.validate()
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    bev = scene if patch is None else composite_patch(scene, patch, line_mask)
    rect_rs, rect_cs = pipe.camera.rect_slices

    states = [state0]
    steers: list[float] = []
    detections: list[LaneDetection] = []
    paths: list[DesiredPath] = []
    projections: list[PatchProjection] = []
    frames: list[Frame] | None = [] if keep_frames else None
    truncated = False

    s = state0
    for t in range(1, horizon + 1):
        frame = warp_bev_to_camera(bev, pipe.camera, s, index=t)
        if patch is not None:
            fp = patch_footprint(pipe.camera, s, patch)
            proj = PatchProjection(
                index=t, count=int(fp.sum()),
                rect_count=int(fp[rect_rs, rect_cs].sum()),
                pixel_values=frame.pixels[fp], pose=s,
                mask=fp if keep_frames else None)
        else:
            proj = PatchProjection(index=t, count=0, rect_count=0,
                                   pixel_values=np.zeros(0), pose=s,
                                   mask=None)
        try:
            det = detect_lanes(frame, pipe.detector, pipe.camera)
        except DetectionFailedError:
            truncated = True
            break
        if not keep_frames:
            det.tape = None
        path = desired_path(det, pipe.detector)
        steer = steer_from_path(path, pipe.controller, pipe.vehicle)
        if frame_sink is not None:
            frame_sink(frame)
        if keep_frames:
            frames.append(frame)
        detections.append(det)
        paths.append(path)
        projections.append(proj)
        steers.append(steer)
        s = step(s, steer, pipe.vehicle)
        states.append(s)

    return RolloutRecord(states=states, steers=steers, detections=detections,
                         paths=paths, projections=projections, frames=frames,
                         truncated=truncated, horizon=horizon)


def rollout_objective(paths, projections, lambda_reg: float, decision_points,
                  direction: str, base_value: float) -> ObjectiveBreakdown:
    """Score a rollout: summed path slopes plus the stealth penalty.

    ``path_term`` sums the desired-path derivative over every frame and
    decision distance; ``reg_term`` sums squared deviation of the
    patch's visible frame pixels from the neutral ``base_value``.
    """
    if len(paths) != len(projections):
        raise InvalidArgumentError("paths and projections must align")
    n = len(paths)
    per_path = np.zeros(n)
    per_reg = np.zeros(n)
    for k, (path, proj) in enumerate(zip(paths, projections)):
        per_path[k] = float(np.sum(path_derivatives(path, decision_points)))
        if proj.pixel_values.size:
            dev = proj.pixel_values - base_value
            per_reg[k] = float(dev @ dev)
    return ObjectiveBreakdown(path_term=float(per_path.sum()),
                              reg_term=float(per_reg.sum()),
                              lambda_reg=lambda_reg, direction=direction,
                              per_frame_path=per_path, per_frame_reg=per_reg)


def frame_gradient(record: RolloutRecord, t: int, cfg: AttackConfig,
                   pipe: PipelineConfig, decision_points,
                   base_value: float) -> FrameGradient:
    """Pixel gradient of the directed objective for frame index ``t`` (0-based).

    States are taken as recorded: only this frame's detection and its
    visible patch pixels vary.  Support is the model-input rect (path
    term) plus the patch footprint (stealth term).
    """
    cfg.validate()
    if record.frames is None:
        raise InvalidArgumentError(
            "rollout was recorded without frames; rerun with keep_frames=True")
    if not 0 <= t < record.frames_evaluated:
        raise InvalidArgumentError(f"frame index {t} outside the record")
    frame = record.frames[t]
    detection = record.detections[t]
    pts = np.asarray(decision_points, dtype=float)
    degree = pipe.detector.poly_degree
    upstream = np.zeros(degree + 1)
    for k in range(1, degree + 1):
        upstream[k] = cfg.direction_sign * float(np.sum(k * pts ** (k - 1)))
    img = detector_gradient(frame, detection, upstream,
                            pipe.detector, pipe.camera)
    proj = record.projections[t]
    if proj.mask is not None and proj.count:
        img[proj.mask] += 2.0 * cfg.lambda_reg * (frame.pixels[proj.mask]
                                                  - base_value)
    return FrameGradient(image=img, pose=frame.pose, index=t)


def aggregate_gradients_bev(grads, counts, weight_mode: str, camera: CameraConfig,
                            scene: BevImage, patch: PatchState,
                            line_mask: np.ndarray) -> np.ndarray:
    """Average per-frame gradients on the patch grid.

    Each image gradient is splatted through the exact warp/composite
    adjoint at its own pose, then combined with per-frame weights:
    footprint pixel count in ``coverage`` mode, all-ones in ``uniform``
    mode.  Frames that never saw the patch contribute nothing; if no
    frame saw it, there is nothing to optimize.
    """
    if weight_mode not in ("coverage", "uniform"):
        raise InvalidArgumentError("weight_mode must be 'coverage' or 'uniform'")
    if len(grads) != len(counts):
        raise InvalidArgumentError("grads and counts must align")
    acc = np.zeros_like(patch.values)
    total = 0.0
    for g, c in zip(grads, counts):
        w = float(c) if weight_mode == "coverage" else (1.0 if c else 0.0)
        if w == 0.0:
            continue
        acc += w * splat_camera_to_bev(g.image, camera, g.pose,
                                       scene, patch, line_mask)
        total += w
    if total == 0.0:
        raise NoVisibilityError("no frame in the horizon ever saw the patch")
    return acc / total


def project_patch(values: np.ndarray, gradient: np.ndarray, step_size: float,
                  bounds: tuple[float, float]):
    """One max-norm-scaled descent step clamped to the gray bounds.

    Returns ``(new_values, moved)``; a zero gradient is reported as a
    no-op rather than an error.
    """
    if step_size <= 0.0:
        raise InvalidArgumentError("step_size must be positive")
    lo, hi = bounds
    if not lo < hi:
        raise InvalidArgumentError("bounds must satisfy lo < hi")
    if gradient.shape != values.shape:
        raise InvalidArgumentError("gradient shape must match patch values")
    gmax = float(np.max(np.abs(gradient)))
    if gmax == 0.0:
        return values.copy(), False
    new = np.clip(values - step_size * gradient / gmax, lo, hi)
    return new, True


def patch_gradient(record: RolloutRecord, cfg: AttackConfig,
                   pipe: PipelineConfig, scene: BevImage, patch: PatchState,
                   line_mask: np.ndarray) -> np.ndarray:
    """Full gradient pass: per-frame image gradients splatted and averaged."""
    pts = pipe.controller.decision_points
    grads = [frame_gradient(record, t, cfg, pipe, pts, patch.base_value)
             for t in range(record.frames_evaluated)]
    counts = [p.count for p in record.projections]
    return aggregate_gradients_bev(grads, counts, cfg.weight_mode,
                                   pipe.camera, scene, patch, line_mask)


@dataclass
class HistoryEntry:
    iteration: int
    breakdown: ObjectiveBreakdown
    step_size: float
    max_deviation: float
    accepted: bool


@dataclass
class OptimizeResult:
    patch: PatchState
    history: list[HistoryEntry] = field(default_factory=list)
    best_iteration: int = 0
    iterations_run: int = 0
    converged: bool = False

    @property
    def best_breakdown(self) -> ObjectiveBreakdown:
        return self.history[self.best_iteration].breakdown


def _evaluate(scene, line_mask, patch, state0, pipe, cfg):
    record = rollout_with_patch(scene, line_mask, patch, state0,
                                cfg.horizon_frames, pipe, keep_frames=True)
    bd = rollout_objective(record.paths, record.projections, cfg.lambda_reg,
                       pipe.controller.decision_points, cfg.direction,
                       patch.base_value)
    return record, bd


def optimize_patch(scene: BevImage, line_mask: np.ndarray, patch0: PatchState,
                   state0: VehicleState, pipe: PipelineConfig,
                   cfg: AttackConfig, *, logger=None) -> OptimizeResult:
    """Projected-gradient descent on the directed rollout objective.

    Each iteration takes one gradient pass at the current iterate, then
    tries a step, halving it up to ``max_halvings`` times until the
    directed objective improves.  At every trial size the sign of the
    gradient is tried first (full-cell moves develop large-scale patch
    structure quickly) and the max-normalized raw gradient second — the
    fallback rescues iterates where the all-cells sign move overshoots
    in every direction at once.  On success the step is regrown (never
    past its initial value); the best iterate seen is what's returned.
    The history gains one entry per iteration plus one for the initial
    patch, so ``iterations=0`` still yields a single scored entry.
    """
    cfg.validate()
    pipe.validate()
    patch0.validate()
    bounds = (patch0.v_min, patch0.v_max)

    current = patch0
    record, bd = _evaluate(scene, line_mask, current, state0, pipe, cfg)
    step_size = cfg.step_size
    history = [HistoryEntry(0, bd, step_size, record.max_lateral_deviation(),
                            True)]
    best_vals = current.values.copy()
    best_directed = bd.directed
    best_iteration = 0
    converged = False

    iterations_run = 0
    for it in range(1, cfg.iterations + 1):
        grad = patch_gradient(record, cfg, pipe, scene, current, line_mask)
        # Steepest descent in the max-norm geometry: raw gradients put
        # almost all their mass on a handful of cells, which stalls the
        # search long before the patch develops large-scale structure,
        # so the sign direction leads and the scaled gradient backs it up.
        gmax = float(np.abs(grad).max())
        directions = [np.sign(grad)]
        if gmax > 0.0:
            directions.append(grad / gmax)
        accepted = False
        any_moved = False
        for _ in range(cfg.max_halvings + 1):
            for direction in directions:
                cand_vals, moved = project_patch(current.values, direction,
                                                 step_size, bounds)
                if not moved:
                    continue
                any_moved = True
                cand = current.with_values(cand_vals)
                cand_record, cand_bd = _evaluate(scene, line_mask, cand,
                                                 state0, pipe, cfg)
                if cand_bd.directed < bd.directed:
                    current, record, bd = cand, cand_record, cand_bd
                    step_size = min(step_size * 1.25, cfg.step_size)
                    accepted = True
                    break
            if accepted:
                break
            step_size *= 0.5
        if not any_moved:
            converged = True
        iterations_run = it
        history.append(HistoryEntry(it, bd, step_size,
                                    record.max_lateral_deviation(), accepted))
        if bd.directed < best_directed:
            best_directed = bd.directed
            best_vals = current.values.copy()
            best_iteration = it
        if logger is not None:
            logger.info("iter %d directed=%.6f path=%.6f reg=%.4f step=%.2e%s",
                        it, bd.directed, bd.path_term, bd.reg_term, step_size,
                        "" if accepted else " (stalled)")
        if converged or step_size < cfg.step_size * 1e-6:
            converged = True
            break

    return OptimizeResult(patch=patch0.with_values(best_vals), history=history,
                          best_iteration=best_iteration,
                          iterations_run=iterations_run, converged=converged)
