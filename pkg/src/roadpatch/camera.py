"""Pinhole ground-plane imaging: BEV-to-camera warp and its exact adjoint.

The camera sits at the vehicle reference point, ``height`` meters above
the road, pitched down by ``pitch`` radians, optical axis otherwise
aligned with the vehicle heading.  Image coordinates are (u right,
v down) with pixel centers at integer positions.

Camera-frame axes are x right, y down, z forward, so a vehicle-frame
ground point (x_f forward, y_f left) maps to::

    x_c = -y_f
    y_c = -x_f sin(pitch) + height cos(pitch)
    z_c =  x_f cos(pitch) + height sin(pitch)

and projects at ``u = u0 + f x_c / z_c``, ``v = v0 + f y_c / z_c``.
Everything here is plain float64 numpy; the warp is a bilinear gather
from the BEV raster and the splat is its literal transpose, sharing one
tap computation so the adjoint identity holds to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import interp
from .errors import (
    AdjointMismatchError,
    DegenerateGeometryError,
    IncompleteModelInputError,
    InvalidArgumentError,
    NoGroundIntersectionError,
)
from .motion import VehicleState
from .scene import (
    BevImage,
    PatchState,
    _rect_index_ranges,
    composite_adjoint_local,
)

_DEPTH_EPS = 1e-9

# Warp pose envelope: lateral offset (m) and heading error (rad) the warp
# accepts before declaring the query outside its supported regime.
DEFAULT_MAX_LATERAL = 3.0
DEFAULT_MAX_HEADING = 0.2


@dataclass(frozen=True)
class CameraConfig:
    focal: float = 500.0
    principal_point: tuple[float, float] = (320.0, 240.0)
    height: float = 1.2
    pitch: float = 0.052
    image_size: tuple[int, int] = (640, 480)          # (width, height)
    model_input_rect: tuple[int, int, int, int] = (64, 224, 512, 256)

    def validate(self) -> None:
        if self.focal <= 0.0:
            raise InvalidArgumentError("focal must be positive")
        if self.height <= 0.0:
            raise InvalidArgumentError("camera height must be positive")
        if not 0.0 <= self.pitch < 0.5 * math.pi:
            raise InvalidArgumentError("pitch must lie in [0, pi/2)")
        w, h = self.image_size
        if w < 1 or h < 1:
            raise InvalidArgumentError("image_size must be positive")
        rx, ry, rw, rh = self.model_input_rect
        if rw < 1 or rh < 1 or rx < 0 or ry < 0 or rx + rw > w or ry + rh > h:
            raise InvalidArgumentError(
                "model_input_rect must fit inside the image")

    @property
    def rect_slices(self) -> tuple[slice, slice]:
        rx, ry, rw, rh = self.model_input_rect
        return slice(ry, ry + rh), slice(rx, rx + rw)


@dataclass
class Frame:
    """Camera image warped from the BEV scene at a given pose."""

    pixels: np.ndarray   # (H, W) gray
    valid: np.ndarray    # (H, W) bool, True where sourced from the BEV
    pose: VehicleState
    index: int = 0


def _pose_tuple(pose: VehicleState) -> tuple[float, float, float]:
    return (pose.x, pose.y, pose.heading)


def homography_matrix(cfg: CameraConfig, pose: VehicleState) -> np.ndarray:
    """3x3 map from road homogeneous (x, y, 1) to pixel homogeneous coords.

    The third homogeneous output component equals camera depth, so points
    behind the camera come out with a non-positive scale.
    """
    cfg.validate()
    f = cfg.focal
    u0, v0 = cfg.principal_point
    h = cfg.height
    ct, st = math.cos(cfg.pitch), math.sin(cfg.pitch)
    cam = np.array([
        [u0 * ct, -f, u0 * h * st],
        [v0 * ct - f * st, 0.0, f * h * ct + v0 * h * st],
        [ct, 0.0, h * st],
    ])
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    world_to_vehicle = np.array([
        [c, s, -(c * pose.x + s * pose.y)],
        [-s, c, s * pose.x - c * pose.y],
        [0.0, 0.0, 1.0],
    ])
    H = cam @ world_to_vehicle
    if abs(np.linalg.det(H)) < 1e-12:
        raise DegenerateGeometryError("ground-to-image homography is singular")
    return H


def _world_to_vehicle(pose: VehicleState, gx, gy):
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    dx = np.asarray(gx) - pose.x
    dy = np.asarray(gy) - pose.y
    return c * dx + s * dy, -s * dx + c * dy


def _vehicle_to_world(pose: VehicleState, xf, yf):
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    return pose.x + c * xf - s * yf, pose.y + s * xf + c * yf


def ground_to_image(cfg: CameraConfig, pose: VehicleState, points):
    """Project road-frame ground points (..., 2) to pixel (u, v) arrays."""
    cfg.validate()
    pts = np.asarray(points, dtype=float)
    xf, yf = _world_to_vehicle(pose, pts[..., 0], pts[..., 1])
    ct, st = math.cos(cfg.pitch), math.sin(cfg.pitch)
    z_c = xf * ct + cfg.height * st
    if np.any(z_c <= _DEPTH_EPS):
        raise NoGroundIntersectionError(
            "ground point at or behind the camera plane")
    x_c = -yf
    y_c = -xf * st + cfg.height * ct
    u = cfg.principal_point[0] + cfg.focal * x_c / z_c
    v = cfg.principal_point[1] + cfg.focal * y_c / z_c
    return u, v


def image_to_ground(cfg: CameraConfig, pose: VehicleState, pixels):
    """Intersect pixel rays (..., 2) of (u, v) with the ground plane."""
    cfg.validate()
    px = np.asarray(pixels, dtype=float)
    x_dir = (px[..., 0] - cfg.principal_point[0]) / cfg.focal
    y_dir = (px[..., 1] - cfg.principal_point[1]) / cfg.focal
    ct, st = math.cos(cfg.pitch), math.sin(cfg.pitch)
    denom = ct * y_dir + st
    if np.any(denom <= _DEPTH_EPS):
        raise NoGroundIntersectionError(
            "pixel ray does not reach the ground ahead of the camera")
    t = cfg.height / denom
    xf = t * (ct - st * y_dir)
    yf = t * (-x_dir)
    gx, gy = _vehicle_to_world(pose, xf, yf)
    return np.stack([gx, gy], axis=-1)


@lru_cache(maxsize=8)
def _vehicle_ground_grid(cfg: CameraConfig):
    """Per-pixel ground hits in the vehicle frame (pose-independent).

    Returns (xf, yf, front) image-shaped arrays; ``front`` is False where
    the ray leaves the camera at or above the horizon.
    """
    w, h = cfg.image_size
    u = np.arange(w, dtype=float)[None, :]
    v = np.arange(h, dtype=float)[:, None]
    x_dir = np.broadcast_to((u - cfg.principal_point[0]) / cfg.focal, (h, w))
    y_dir = np.broadcast_to((v - cfg.principal_point[1]) / cfg.focal, (h, w))
    ct, st = math.cos(cfg.pitch), math.sin(cfg.pitch)
    denom = ct * y_dir + st
    front = denom > _DEPTH_EPS
    t = cfg.height / np.where(front, denom, np.inf)
    xf = t * (ct - st * y_dir)
    yf = -t * x_dir
    return xf, yf, front


def pixel_ground_points(cfg: CameraConfig, pose: VehicleState):
    """Road-frame ground hit of every pixel plus a front-of-camera mask."""
    xf, yf, front = _vehicle_ground_grid(cfg)
    gx, gy = _vehicle_to_world(pose, xf, yf)
    return gx, gy, front


def check_pose_bounds(pose: VehicleState,
                      max_lateral: float = DEFAULT_MAX_LATERAL,
                      max_heading: float = DEFAULT_MAX_HEADING) -> None:
    if abs(pose.y) > max_lateral or abs(pose.heading) > max_heading:
        raise InvalidArgumentError(
            f"pose (y={pose.y:.3f} m, heading={pose.heading:.4f} rad) outside "
            f"the supported envelope (|y|<={max_lateral}, |heading|<={max_heading})")


def warp_bev_to_camera(bev: BevImage, cfg: CameraConfig, pose: VehicleState,
                       *, index: int = 0,
                       max_lateral: float = DEFAULT_MAX_LATERAL,
                       max_heading: float = DEFAULT_MAX_HEADING) -> Frame:
    """Render the camera view of the BEV scene at ``pose``.

    Every pixel ray is intersected with the ground plane and the scene is
    sampled bilinearly there.  Pixels above the horizon or looking outside
    the scene extent are zeroed with ``valid`` False; if any such pixel
    lies inside the model-input rect the frame is rejected, because the
    detector contract requires a fully sourced crop.
    """
    cfg.validate()
    check_pose_bounds(pose, max_lateral, max_heading)
    gx, gy, front = pixel_ground_points(cfg, pose)
    fi, fj = bev.fractional_index(gx, gy)
    valid = front & interp.inside(fi, fj, bev.pixels.shape)
    pixels = interp.gather(bev.pixels,
                           np.clip(fi, 0.0, bev.pixels.shape[0] - 1),
                           np.clip(fj, 0.0, bev.pixels.shape[1] - 1))
    pixels[~valid] = 0.0
    rs, cs = cfg.rect_slices
    if not np.all(valid[rs, cs]):
        bad = int(np.count_nonzero(~valid[rs, cs]))
        raise IncompleteModelInputError(
            f"{bad} model-input pixels have no BEV source at pose "
            f"(x={pose.x:.1f}, y={pose.y:.2f}, heading={pose.heading:.3f})")
    return Frame(pixels=pixels, valid=valid, pose=pose, index=index)


def patch_footprint(cfg: CameraConfig, pose: VehicleState,
                    patch: PatchState) -> np.ndarray:
    """Image mask of pixels whose ground point lies inside the patch rect."""
    gx, gy, front = pixel_ground_points(cfg, pose)
    x_lo, x_hi, y_lo, y_hi = patch.placement.rect
    return (front & (gx >= x_lo) & (gx <= x_hi)
            & (gy >= y_lo) & (gy <= y_hi))


def splat_camera_to_bev(grad_image: np.ndarray, cfg: CameraConfig,
                        pose: VehicleState, scene: BevImage, patch: PatchState,
                        line_mask: np.ndarray, *,
                        frame: Frame | None = None) -> np.ndarray:
    """Pull an image-space gradient back onto the patch grid.

    Exact adjoint of ``warp(composite(patch))`` as a linear map in the
    patch values: the warp taps are transposed into scene space (only the
    patch's scene rectangle needs to be materialized) and the composite
    resampling is transposed onto the patch raster.
    """
    cfg.validate()
    if grad_image.shape != tuple(reversed(cfg.image_size)):
        raise InvalidArgumentError("grad_image shape must match the camera image")
    if frame is not None and _pose_tuple(frame.pose) != _pose_tuple(pose):
        raise AdjointMismatchError(
            "gradient image was produced at a different pose than the splat target")
    i_lo, i_hi, j_lo, j_hi = _rect_index_ranges(scene, patch.placement)
    gx, gy, front = pixel_ground_points(cfg, pose)
    fi, fj = scene.fractional_index(gx, gy)
    valid = front & interp.inside(fi, fj, scene.pixels.shape)
    # Any pixel with a bilinear tap inside the patch rectangle contributes.
    near = (valid & (fi > i_lo - 1.0) & (fi < i_hi + 1.0)
            & (fj > j_lo - 1.0) & (fj < j_hi + 1.0))
    row0, col0 = i_lo - 2, j_lo - 2
    local_shape = (i_hi - i_lo + 5, j_hi - j_lo + 5)
    local = interp.scatter(local_shape, fi[near] - row0, fj[near] - col0,
                           grad_image[near])
    return composite_adjoint_local(local, row0, col0, scene, patch, line_mask)


def model_input(frame: Frame, cfg: CameraConfig) -> np.ndarray:
    """The detector's crop of a frame."""
    rs, cs = cfg.rect_slices
    return frame.pixels[rs, cs]
