"""Time-invariant velocity and acceleration references over planar positions.

Ante-impact: a field that bends every approach onto the straight ray ending at the
desired impact point with the desired impact velocity, blended to the constant
impact velocity close to the object.  Post-impact: a linear attractor towards the
final object position, blended with the predicted post-impact velocity near the
position where the impact was detected.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

FD_STEP = 1e-6
DEGENERATE_TOL = 1e-12


class FieldBoundsError(ValueError):
    """Raised for blending radii with r_min >= r_max."""


class DegenerateDirectionWarning(RuntimeWarning):
    """The shaped direction vanished; the impact velocity was returned instead."""


class TwistRef(NamedTuple):
    v: np.ndarray
    omega: float


class AccelRef(NamedTuple):
    a: np.ndarray
    alpha_ang: float


def _vec2(x) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size != 2:
        raise ValueError(f"expected a planar vector, got {arr.size} entries")
    return arr


def wrap(x: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    return -((-x + math.pi) % (2.0 * math.pi)) + math.pi


def smoothstep(r: float, r_min: float, r_max: float) -> float:
    """C1 ramp from 0 at r_min to 1 at r_max: 3 r_w^2 - 2 r_w^3."""
    if not r_min < r_max:
        raise FieldBoundsError(f"need r_min < r_max, got {r_min} and {r_max}")
    if r <= r_min:
        return 0.0
    if r >= r_max:
        return 1.0
    rw = (r - r_min) / (r_max - r_min)
    return rw * rw * (3.0 - 2.0 * rw)


@dataclass(frozen=True)
class AnteFieldParams:
    """Approach field for one robot."""

    p_imp: np.ndarray
    v_imp: np.ndarray
    alpha: float
    r_min_a: float
    r_max_a: float
    p_o_est: np.ndarray
    theta_d: float
    kappa_r_a: float = 30.0
    xi_d: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p_imp", _vec2(self.p_imp))
        object.__setattr__(self, "v_imp", _vec2(self.v_imp))
        object.__setattr__(self, "p_o_est", _vec2(self.p_o_est))
        if np.linalg.norm(self.v_imp) <= 0.0:
            raise ValueError("v_imp must be non-zero")
        if not self.r_min_a < self.r_max_a:
            raise FieldBoundsError("r_min_a must be below r_max_a")

    def check_object(self, corners: np.ndarray) -> None:
        """r_min_a must enclose the whole object around the estimated centre."""
        reach = float(np.max(np.linalg.norm(np.asarray(corners) - self.p_o_est, axis=1)))
        if not self.r_min_a > reach:
            raise ValueError(f"r_min_a={self.r_min_a} does not enclose the object (reach {reach:.4f})")


@dataclass(frozen=True)
class PostFieldParams:
    """Object-centred field used once contact is established."""

    p_of: np.ndarray
    kappa_p: float
    r_min_p: float
    r_max_p: float
    v_o_est_plus: np.ndarray
    p_o_plus: np.ndarray
    kappa_r_p: float = 30.0
    theta_d: float = 0.0

    def __post_init__(self):
        for name in ("p_of", "v_o_est_plus", "p_o_plus"):
            object.__setattr__(self, name, _vec2(getattr(self, name)))
        if not self.r_min_p < self.r_max_p:
            raise FieldBoundsError("r_min_p must be below r_max_p")
        if self.r_max_p > float(np.linalg.norm(self.p_o_plus - self.p_of)):
            raise ValueError("r_max_p exceeds the distance from the detection position to the goal")


# --- ante field -----------------------------------------------------------------


def intermediate_target(p, params: AnteFieldParams) -> np.ndarray:
    """Point on the approach ray as far behind p_imp as p is from p_imp."""
    p = _vec2(p)
    dist = float(np.linalg.norm(params.p_imp - p))
    return params.p_imp - params.v_imp * (dist / float(np.linalg.norm(params.v_imp)))


def _raw_xy(px: float, py: float, P: AnteFieldParams) -> tuple[float, float, bool]:
    ix, iy = P.p_imp
    vx, vy = P.v_imp
    speed = math.hypot(vx, vy)
    scale = math.hypot(ix - px, iy - py) / speed
    tx, ty = ix - vx * scale, iy - vy * scale
    dx, dy = vx + P.alpha * (tx - px), vy + P.alpha * (ty - py)
    norm = math.hypot(dx, dy)
    if norm < DEGENERATE_TOL:
        return vx, vy, True
    return dx / norm * speed, dy / norm * speed, False


def _ante_xy(px: float, py: float, P: AnteFieldParams) -> tuple[float, float]:
    ox, oy = P.p_o_est
    beta = smoothstep(math.hypot(px - ox, py - oy), P.r_min_a, P.r_max_a)
    vx, vy = P.v_imp
    if beta == 0.0:
        return vx, vy
    rx, ry, degenerate = _raw_xy(px, py, P)
    if degenerate:
        warnings.warn("ante field direction vanished, using v_imp", DegenerateDirectionWarning, stacklevel=3)
    return beta * rx + (1.0 - beta) * vx, beta * ry + (1.0 - beta) * vy


def ante_velocity_raw(p, params: AnteFieldParams) -> np.ndarray:
    """Shaped approach velocity with magnitude exactly ||v_imp||."""
    p = _vec2(p)
    rx, ry, degenerate = _raw_xy(p[0], p[1], params)
    if degenerate:
        warnings.warn("ante field direction vanished, using v_imp", DegenerateDirectionWarning, stacklevel=2)
    return np.array([rx, ry])


def ante_velocity(p, params: AnteFieldParams) -> np.ndarray:
    p = _vec2(p)
    return np.array(_ante_xy(p[0], p[1], params))


def _flow_acceleration(field: Callable[[float, float], tuple[float, float]], px: float, py: float,
                       h: float = FD_STEP) -> tuple[float, float, float, float]:
    """(dv/dp) v by central differences; returns (vx, vy, ax, ay)."""
    vx, vy = field(px, py)
    xp, xm = field(px + h, py), field(px - h, py)
    yp, ym = field(px, py + h), field(px, py - h)
    inv = 0.5 / h
    ax = ((xp[0] - xm[0]) * vx + (yp[0] - ym[0]) * vy) * inv
    ay = ((xp[1] - xm[1]) * vx + (yp[1] - ym[1]) * vy) * inv
    return vx, vy, ax, ay


def ante_acceleration(p, params: AnteFieldParams) -> np.ndarray:
    """Acceleration of a particle that follows the ante field exactly."""
    p = _vec2(p)
    _, _, ax, ay = _flow_acceleration(lambda x, y: _ante_xy(x, y, params), p[0], p[1])
    return np.array([ax, ay])


def ante_refs(p, theta: float, params: AnteFieldParams) -> tuple[TwistRef, AccelRef]:
    """Full twist and acceleration reference for the approach phase."""
    p = _vec2(p)
    vx, vy, ax, ay = _flow_acceleration(lambda x, y: _ante_xy(x, y, params), p[0], p[1])
    omega, alpha_ang = angular_refs(theta, params.theta_d, params.kappa_r_a)
    return TwistRef(np.array([vx, vy]), omega), AccelRef(np.array([ax, ay]), alpha_ang)


def angular_refs(theta: float, theta_d: float, kappa: float) -> tuple[float, float]:
    """First-order orientation reference and the acceleration along it."""
    err = wrap(theta - theta_d)
    return -kappa * err, kappa * kappa * err


# --- post field -----------------------------------------------------------------


def post_attractor(p_o, params: PostFieldParams) -> np.ndarray:
    return params.kappa_p * (params.p_of - _vec2(p_o))


def _post_xy(px: float, py: float, P: PostFieldParams) -> tuple[float, float]:
    bx, by = P.p_o_plus
    beta = smoothstep(math.hypot(bx - px, by - py), P.r_min_p, P.r_max_p)
    fx, fy = P.p_of
    ex, ey = P.v_o_est_plus
    if beta == 0.0:
        return ex, ey
    k = P.kappa_p
    return beta * k * (fx - px) + (1.0 - beta) * ex, beta * k * (fy - py) + (1.0 - beta) * ey


def post_velocity(p_o, params: PostFieldParams) -> np.ndarray:
    p = _vec2(p_o)
    return np.array(_post_xy(p[0], p[1], params))


def post_acceleration(p_o, params: PostFieldParams) -> np.ndarray:
    p = _vec2(p_o)
    _, _, ax, ay = _flow_acceleration(lambda x, y: _post_xy(x, y, params), p[0], p[1])
    return np.array([ax, ay])


def post_refs(p_o, theta: float, params: PostFieldParams) -> tuple[TwistRef, AccelRef]:
    p = _vec2(p_o)
    vx, vy, ax, ay = _flow_acceleration(lambda x, y: _post_xy(x, y, params), p[0], p[1])
    omega, alpha_ang = angular_refs(theta, params.theta_d, params.kappa_r_p)
    return TwistRef(np.array([vx, vy]), omega), AccelRef(np.array([ax, ay]), alpha_ang)


def field_jacobian(field: Callable[[np.ndarray], np.ndarray], p, h: float = FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of a planar vector field."""
    p = _vec2(p)
    cols = []
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        cols.append((field(p + e) - field(p - e)) / (2.0 * h))
    return np.stack(cols, axis=1)
