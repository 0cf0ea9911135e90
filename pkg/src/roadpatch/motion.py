"""Kinematic bicycle model integrated with forward Euler.

State is the road-frame pose of the vehicle reference point plus its
(constant) speed.  Heading 0 points down the lane; positive steering
turns left.  The model deliberately has no tire or actuator dynamics:
it is the plant the lane-keeping loop and the attack optimizer share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float

    def __post_init__(self):
        if self.speed < 0.0:
            raise InvalidArgumentError("speed must be >= 0")
        object.__setattr__(self, "heading", _wrap_angle(self.heading))


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.7
    dt: float = 0.05
    max_steer: float = 0.45

    def validate(self) -> None:
        if self.wheelbase <= 0.0:
            raise InvalidArgumentError("wheelbase must be positive")
        if self.dt <= 0.0:
            raise InvalidArgumentError("dt must be positive")
        if not 0.0 < self.max_steer < 0.5 * math.pi:
            raise InvalidArgumentError("max_steer must be in (0, pi/2)")


def clamp_steer(steer: float, params: VehicleParams) -> tuple[float, bool]:
    """Clamp a steering command to the actuator limit; flag if it clipped."""
    if steer > params.max_steer:
        return params.max_steer, True
    if steer < -params.max_steer:
        return -params.max_steer, True
    return steer, False


def step(state: VehicleState, steer: float, params: VehicleParams) -> VehicleState:
    """One Euler step of the bicycle model at fixed speed.

    x' = x + v cos(h) dt,  y' = y + v sin(h) dt,
    h' = h + (v / wheelbase) tan(steer) dt.
    Steering beyond the limit is clamped (see :func:`clamp_steer` to
    observe the flag).
    """
    params.validate()
    if not math.isfinite(steer):
        raise InvalidArgumentError("steer must be finite")
    delta, _ = clamp_steer(steer, params)
    v, h, dt = state.speed, state.heading, params.dt
    return VehicleState(
        x=state.x + v * math.cos(h) * dt,
        y=state.y + v * math.sin(h) * dt,
        heading=h + (v / params.wheelbase) * math.tan(delta) * dt,
        speed=v,
    )


def rollout(state0: VehicleState, steers, params: VehicleParams):
    """Integrate a steering sequence; returns T+1 states and clamp flags."""
    states = [state0]
    clamped = []
    s = state0
    for d in steers:
        _, flag = clamp_steer(float(d), params)
        clamped.append(flag)
        s = step(s, float(d), params)
        states.append(s)
    return states, clamped


def lateral_deviation(state: VehicleState) -> float:
    """Unsigned offset from the lane center line."""
    return abs(state.y)


def trajectory_array(states, dt: float) -> np.ndarray:
    """Stack states into an (N, 5) array of [t, x, y, heading, speed]."""
    out = np.empty((len(states), 5))
    for k, s in enumerate(states):
        out[k] = (k * dt, s.x, s.y, s.heading, s.speed)
    return out


def with_speed(state: VehicleState, speed: float) -> VehicleState:
    """Copy of ``state`` at a different constant speed."""
    return replace(state, speed=speed)
