"""Geometric description of a manipulation task shared by the controller and the impact map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import AnteFieldParams

HIT_AND_PUSH = "hit_and_push"
DUAL_ARM_GRAB = "dual_arm_grab"


@dataclass(frozen=True)
class FaceSpec:
    """Nominal object face a robot is meant to hit.

    ``normal`` points out of the object towards the robot; ``tangent`` is the
    in-face direction used for the projected impact coordinate;
    ``depth`` is the object's half extent along the normal.
    """

    center: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    depth: float

    def project(self, p: np.ndarray) -> float:
        """Coordinate of a point along the face."""
        return float(self.tangent @ (np.asarray(p) - self.center))


@dataclass(frozen=True)
class TaskSpec:
    """Everything a controller may know about the task (nominal, not the true object)."""

    kind: str
    ante: tuple
    faces: tuple
    p_o_nominal: np.ndarray
    p_of: np.ndarray
    kappa_p: float = 2.0
    r_min_p: float = 0.1
    r_max_p: float = 0.3
    kappa_r_p: float = 30.0
    ee_radius: float = 0.02
    # controller-side object estimates for the feedforward wrench
    obj_mass_est: float = 1.0
    ground_mu_est: float = 0.3
    contact_mu_est: float = 0.6
    gravity: float = 9.81

    def __post_init__(self):
        if self.kind not in (HIT_AND_PUSH, DUAL_ARM_GRAB):
            raise ValueError(f"unknown task kind {self.kind!r}")
        if len(self.ante) != len(self.faces):
            raise ValueError("need one face per robot")
        expected = 1 if self.kind == HIT_AND_PUSH else 2
        if len(self.ante) != expected:
            raise ValueError(f"{self.kind} needs {expected} robot(s)")
        for a in self.ante:
            if not isinstance(a, AnteFieldParams):
                raise TypeError("ante entries must be AnteFieldParams")

    @property
    def n_robots(self) -> int:
        return len(self.ante)

    @property
    def mirror(self) -> np.ndarray:
        """Reflection across the plane midway between the two target faces."""
        n = np.asarray(self.faces[0].normal, dtype=float)
        return np.eye(2) - 2.0 * np.outer(n, n)

    def infer_object_position(self, ee_positions) -> np.ndarray:
        """Object centre implied by end effectors resting on their faces."""
        if self.n_robots == 2:
            return 0.5 * (np.asarray(ee_positions[0]) + np.asarray(ee_positions[1]))
        face = self.faces[0]
        return np.asarray(ee_positions[0]) - (face.depth + self.ee_radius) * face.normal
