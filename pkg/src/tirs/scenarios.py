"""Scenario files: the two desk-scale use cases, the object catalogue and start poses.

A :class:`ScenarioConfig` is plain JSON-serialisable data; :func:`build_scenario`
resolves it into models, a task description and an initial state.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .controller import VARIANTS, ControllerConfig
from .dynamics import ObjectModel, RobotModel, SystemModel, WorldState, initial_world, inverse_kinematics
from .fields import AnteFieldParams
from .task import DUAL_ARM_GRAB, HIT_AND_PUSH, FaceSpec, TaskSpec

OBJECT_MASSES = {"parcel": 0.60, "catfood": 1.30, "juice": 2.20}
INIT_IDS = ("A", "B", "C")
DISPLACEMENTS = {HIT_AND_PUSH: (-0.030, 0.0, 0.030), DUAL_ARM_GRAB: (0.0, 0.015, 0.030)}
MIN_DURATION = 2.0
MAX_DISPLACEMENT = 0.05

# default planar arm: 4 revolute links, slender-rod inertia, COM at mid-link
LINK_LENGTHS = (0.40, 0.35, 0.25, 0.10)
LINK_MASSES = (2.5, 1.8, 1.0, 0.5)
MOTOR_INERTIA = (0.30, 0.20, 0.10, 0.05)
EE_RADIUS = 0.02

HALF_EXTENTS = {HIT_AND_PUSH: (0.08, 0.06), DUAL_ARM_GRAB: (0.10, 0.08)}
GROUND_MU = 0.3
CONTACT_MU = 0.6

# shared field and gain values
ALPHA = 5.0
KAPPA_R = 30.0


def default_robot(base_pose=(0.0, 0.0, 0.0)) -> RobotModel:
    lengths = np.array(LINK_LENGTHS)
    masses = np.array(LINK_MASSES)
    return RobotModel(
        link_lengths=lengths,
        link_masses=masses,
        link_inertias=masses * lengths**2 / 12.0,
        com_offsets=lengths / 2.0,
        motor_inertia=np.array(MOTOR_INERTIA),
        base_pose=np.array(base_pose, dtype=float),
        q_min=np.full(4, -2.9), q_max=np.full(4, 2.9),
        dq_min=np.full(4, -4.0), dq_max=np.full(4, 4.0),
        tau_min=-np.array([60.0, 40.0, 20.0, 10.0]), tau_max=np.array([60.0, 40.0, 20.0, 10.0]),
        ee_radius=EE_RADIUS,
    )


def make_object(name: str, kind: str) -> ObjectModel:
    if name not in OBJECT_MASSES:
        raise ValueError(f"unknown object {name!r}; choose from {sorted(OBJECT_MASSES)}")
    m = OBJECT_MASSES[name]
    hx, hy = HALF_EXTENTS[kind]
    return ObjectModel(m, m * ((2 * hx) ** 2 + (2 * hy) ** 2) / 12.0, (hx, hy), GROUND_MU, CONTACT_MU)


@dataclass(frozen=True)
class _Layout:
    bases: tuple
    p_o: tuple
    faces: tuple            # (normal, tangent) per robot
    v_imp: tuple
    theta_d: tuple
    xi_d: tuple
    r_min_a: float
    r_max_a: float
    displacement_dir: tuple
    # distance from the nominal object position to the desired final position
    post_travel: float
    # end-effector start positions per init id, relative to the impact point
    starts: dict
    elbow_guess: tuple


LAYOUTS = {
    HIT_AND_PUSH: _Layout(
        bases=((0.0, 0.0, 0.0),),
        p_o=(0.75, -0.05),
        faces=(((0.0, 1.0), (1.0, 0.0)),),
        v_imp=((0.0, -0.35),),
        theta_d=(-math.pi / 2,),
        xi_d=(0.4,),
        r_min_a=0.14,
        r_max_a=0.28,
        displacement_dir=(0.0, 1.0),
        post_travel=0.35,
        starts={"A": ((-0.12, 0.38),), "B": ((0.06, 0.42),), "C": ((-0.22, 0.28),)},
        elbow_guess=((0.4, 0.6, -1.2, -1.4),),
    ),
    DUAL_ARM_GRAB: _Layout(
        bases=((-0.60, 0.10, 0.0), (0.60, 0.10, math.pi)),
        p_o=(0.0, 0.65),
        faces=(((-1.0, 0.0), (0.0, 1.0)), ((1.0, 0.0), (0.0, 1.0))),
        v_imp=((0.6, -0.15), (-0.6, -0.15)),
        theta_d=(0.0, math.pi),
        xi_d=(1.5, -1.5),
        r_min_a=0.16,
        r_max_a=0.32,
        displacement_dir=(1.0, 0.0),
        post_travel=0.35,
        # mirror-asymmetric starts, placed so both arms reach their faces together
        starts={
            "A": ((-0.4778, 0.1504), (0.4899, 0.1070)),
            "B": ((-0.4511, 0.0922), (0.4398, 0.1357)),
            "C": ((-0.5045, 0.1261), (0.4938, 0.1595)),
        },
        elbow_guess=((1.5, -0.4, -1.8, 0.7), (-1.5, 0.4, 1.8, -0.7)),
    ),
}


@dataclass
class ScenarioConfig:
    """One rollout, fully specified.  Units are carried in the field names."""

    kind: str = HIT_AND_PUSH
    object_name: str = "parcel"
    init_id: str = "A"
    displacement_m: float = 0.0
    variant: str = "proposed"
    seed: int = 0
    duration_s: float = 2.0
    impact_map_path: str | None = None
    robot_mass_scale: float = 1.0
    init_noise_rad: float = 0.01
    controller: dict = field(default_factory=dict)
    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYOUTS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.object_name not in OBJECT_MASSES:
            raise ValueError(f"unknown object {self.object_name!r}")
        if self.init_id not in INIT_IDS:
            raise ValueError(f"unknown initial configuration {self.init_id!r}")
        if abs(self.displacement_m) > MAX_DISPLACEMENT:
            raise ValueError("displacement must be within +-0.05 m")
        if self.duration_s < MIN_DURATION:
            raise ValueError("duration must be at least 2 s")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not 0.0 <= self.init_noise_rad <= 0.01:
            raise ValueError("initial joint noise must lie in [0, 0.01] rad")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValueError("scenario file must hold a JSON object")
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def map_key(self) -> tuple:
        """Everything the impact map depends on."""
        return (self.kind, self.object_name, self.robot_mass_scale, json.dumps(self.fields, sort_keys=True))


@dataclass
class Scenario:
    config: ScenarioConfig
    system: SystemModel
    # the controller's own arm models (differ from the plant under mass_scale)
    controller_robots: tuple
    task: TaskSpec
    controller: ControllerConfig
    world0: WorldState
    true_p_o: np.ndarray


def _rng(config: ScenarioConfig) -> np.random.Generator:
    # per-cell stream so that results do not depend on batch order
    key = f"{config.kind}|{config.object_name}|{config.init_id}|{config.displacement_m:.6f}|{config.seed}"
    return np.random.default_rng(int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little"))


def build_task(kind: str, obj: ObjectModel, field_overrides: dict | None = None) -> TaskSpec:
    lay = LAYOUTS[kind]
    fo = dict(field_overrides or {})
    p_o = np.array(lay.p_o)
    ante, faces = [], []
    hx, hy = obj.half_extents
    for (normal, tangent), v_imp, th, xi in zip(lay.faces, lay.v_imp, lay.theta_d, lay.xi_d):
        n = np.array(normal)
        depth = float(abs(n @ np.array([hx, hy])))
        center = p_o + depth * n
        faces.append(FaceSpec(center, n, np.array(tangent), depth))
        ante.append(AnteFieldParams(
            p_imp=center + EE_RADIUS * n,
            v_imp=np.array(fo.get("v_imp_scale_m_s", 1.0)) * np.array(v_imp),
            alpha=fo.get("alpha_1_s", ALPHA),
            r_min_a=fo.get("r_min_a_m", lay.r_min_a),
            r_max_a=fo.get("r_max_a_m", lay.r_max_a),
            p_o_est=p_o,
            theta_d=th,
            kappa_r_a=fo.get("kappa_r_a_1_s", KAPPA_R),
            xi_d=xi,
        ))
    corners = p_o + np.array([[sx * hx, sy * hy] for sx in (-1, 1) for sy in (-1, 1)])
    for a in ante:
        a.check_object(corners)
    return TaskSpec(
        kind=kind,
        ante=tuple(ante),
        faces=tuple(faces),
        p_o_nominal=p_o,
        p_of=p_o + np.array([0.0, -fo.get("post_travel_m", lay.post_travel)]),
        kappa_p=fo.get("kappa_p_1_s", 2.0),
        r_min_p=fo.get("r_min_p_m", 0.1),
        r_max_p=fo.get("r_max_p_m", 0.3),
        kappa_r_p=fo.get("kappa_r_p_1_s", KAPPA_R),
        ee_radius=EE_RADIUS,
        obj_mass_est=obj.mass,
        ground_mu_est=obj.surface_friction_mu,
        contact_mu_est=obj.contact_friction_mu,
    )


def build_system(kind: str, object_name: str, mass_scale: float = 1.0) -> SystemModel:
    robots = [default_robot(b) for b in LAYOUTS[kind].bases]
    if mass_scale != 1.0:
        robots = [r.scaled(mass_scale) for r in robots]
    return SystemModel(robots, make_object(object_name, kind))


def start_configuration(kind: str, init_id: str, task: TaskSpec, robots) -> list[np.ndarray]:
    lay = LAYOUTS[kind]
    qs = []
    for i, (model, a) in enumerate(zip(robots, task.ante)):
        target = a.p_imp + np.array(lay.starts[init_id][i])
        q, ok = inverse_kinematics(model, target, a.theta_d, a.xi_d, lay.elbow_guess[i])
        if not ok:
            raise ValueError(f"start pose {init_id} for robot {i} is not reachable")
        qs.append(q)
    return qs


def build_scenario(config: ScenarioConfig) -> Scenario:
    system = build_system(config.kind, config.object_name, config.robot_mass_scale)
    nominal = build_system(config.kind, config.object_name).robots
    task = build_task(config.kind, system.obj, config.fields)
    controller = ControllerConfig.from_dict({**config.controller, "variant": config.variant})
    rng = _rng(config)
    q0 = start_configuration(config.kind, config.init_id, task, nominal)
    q0 = [q + rng.uniform(-1.0, 1.0, q.size) * config.init_noise_rad for q in q0]
    latency = controller.detect_latency + int(rng.integers(-1, 2))
    controller = ControllerConfig.from_dict({**controller.to_dict(), "detect_latency": max(latency, 0)})
    lay = LAYOUTS[config.kind]
    true_p_o = task.p_o_nominal + config.displacement_m * np.array(lay.displacement_dir)
    world0 = initial_world(system, q0, [true_p_o[0], true_p_o[1], 0.0])
    return Scenario(config, system, nominal, task, controller, world0, true_p_o)
