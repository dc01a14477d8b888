"""Planar revolute-chain arms and a rigid box on the ground, with impulse contact.

The arms move in the horizontal plane, so in-plane gravity is zero by default and
the object's weight only shows up as ground friction.  The same code is the plant
for closed-loop rollouts and the one-step impact simulator behind the impact map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

PENETRATION_TOLERANCE = 1e-4
ACTIVATION_GAP = 1e-3
PGS_MAX_ITER = 200
PGS_TOL = 1e-10
GROUND_GRAVITY = 9.81
IMPACT_EVENT_DT = 0.005
# fraction of penetration removed per step
_POSITION_CORRECTION = 0.2

_NORMAL, _TANGENT, _GROUND_X, _GROUND_Y, _TORSION = 0, 1, 2, 3, 4


class ContactSolverError(RuntimeError):
    """Raised when the contact iteration does not converge within its cap."""


def wrap_angle(x):
    """Wrap an angle (or array of angles) to (-pi, pi]."""
    if np.ndim(x) == 0:
        return _wrap_scalar(float(x))
    return -np.mod(-np.asarray(x, dtype=float) + np.pi, 2.0 * np.pi) + np.pi


def _wrap_scalar(x: float) -> float:
    return -((-x + math.pi) % (2.0 * math.pi)) + math.pi


def perp(v: np.ndarray) -> np.ndarray:
    """Rotate planar vector(s) by +90 degrees: omega x r == omega * perp(r)."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def _as_vec(x, n: int, name: str) -> np.ndarray:
    arr = np.array(x, dtype=float).reshape(-1)
    if arr.size == 1 and n > 1:
        arr = np.full(n, arr[0])
    if arr.size != n:
        raise ValueError(f"{name} must have {n} entries, got {arr.size}")
    return arr


@dataclass(eq=False)
class RobotModel:
    """Kinematic and inertial description of one planar n-link revolute arm."""

    link_lengths: np.ndarray
    link_masses: np.ndarray
    link_inertias: np.ndarray
    com_offsets: np.ndarray
    motor_inertia: np.ndarray
    base_pose: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_min: np.ndarray = None
    q_max: np.ndarray = None
    dq_min: np.ndarray = None
    dq_max: np.ndarray = None
    tau_min: np.ndarray = None
    tau_max: np.ndarray = None
    ee_radius: float = 0.02

    def __post_init__(self):
        self.link_lengths = np.array(self.link_lengths, dtype=float).reshape(-1)
        n = self.link_lengths.size
        if n < 1:
            raise ValueError("a robot needs at least one link")
        self.link_masses = _as_vec(self.link_masses, n, "link_masses")
        self.link_inertias = _as_vec(self.link_inertias, n, "link_inertias")
        self.com_offsets = _as_vec(self.com_offsets, n, "com_offsets")
        self.motor_inertia = _as_vec(self.motor_inertia, n, "motor_inertia")
        self.base_pose = _as_vec(self.base_pose, 3, "base_pose")
        defaults = {
            "q_min": -np.pi, "q_max": np.pi,
            "dq_min": -10.0, "dq_max": 10.0,
            "tau_min": -100.0, "tau_max": 100.0,
        }
        for name, default in defaults.items():
            value = getattr(self, name)
            setattr(self, name, _as_vec(default if value is None else value, n, name))

        for name in ("link_lengths", "link_masses", "link_inertias"):
            if np.any(getattr(self, name) <= 0.0):
                raise ValueError(f"{name} must be strictly positive")
        if np.any(self.motor_inertia < 0.0):
            raise ValueError("motor_inertia must be non-negative")
        for lo, hi in (("q_min", "q_max"), ("dq_min", "dq_max"), ("tau_min", "tau_max")):
            if np.any(getattr(self, lo) >= getattr(self, hi)):
                raise ValueError(f"{lo} must be below {hi} elementwise")
        if self.ee_radius < 0.0:
            raise ValueError("ee_radius must be non-negative")

    @property
    def n_links(self) -> int:
        return self.link_lengths.size

    def scaled(self, mass_scale: float) -> "RobotModel":
        """Copy with link masses and inertias multiplied (model-mismatch studies)."""
        return RobotModel(
            self.link_lengths, self.link_masses * mass_scale, self.link_inertias * mass_scale,
            self.com_offsets, self.motor_inertia, self.base_pose,
            self.q_min, self.q_max, self.dq_min, self.dq_max, self.tau_min, self.tau_max,
            self.ee_radius,
        )

    def to_dict(self) -> dict:
        keys = ("link_lengths", "link_masses", "link_inertias", "com_offsets", "motor_inertia",
                "base_pose", "q_min", "q_max", "dq_min", "dq_max", "tau_min", "tau_max")
        out = {k: getattr(self, k).tolist() for k in keys}
        out["ee_radius"] = self.ee_radius
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RobotModel":
        return cls(**d)


@dataclass(eq=False)
class ObjectModel:
    """Rigid rectangle sliding on the ground."""

    mass: float
    inertia: float
    half_extents: np.ndarray
    surface_friction_mu: float = 0.3
    contact_friction_mu: float = 0.6
    restitution: float = 0.0

    def __post_init__(self):
        self.half_extents = _as_vec(self.half_extents, 2, "half_extents")
        if self.restitution != 0.0:
            raise ValueError("restitution is fixed at 0 (sustained contact after impact)")
        if self.mass <= 0.0 or self.inertia <= 0.0:
            raise ValueError("object mass and inertia must be positive")
        if self.surface_friction_mu < 0.0 or self.contact_friction_mu < 0.0:
            raise ValueError("friction coefficients must be non-negative")
        if np.any(self.half_extents <= 0.0):
            raise ValueError("half_extents must be positive")

    @property
    def torsion_radius(self) -> float:
        """Mean distance of the (uniformly loaded) footprint from its centre."""
        a, b = self.half_extents
        d = math.hypot(a, b)
        return (d + b * b / (2 * a) * math.log((a + d) / b) + a * a / (2 * b) * math.log((b + d) / a)) / 3.0

    def to_dict(self) -> dict:
        return {
            "mass": self.mass, "inertia": self.inertia,
            "half_extents": self.half_extents.tolist(),
            "surface_friction_mu": self.surface_friction_mu,
            "contact_friction_mu": self.contact_friction_mu,
            "restitution": self.restitution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectModel":
        return cls(**d)


@dataclass(eq=False)
class SystemModel:
    """Everything the plant needs besides the state: arms, object, gravity."""

    robots: tuple
    obj: ObjectModel
    arm_gravity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    ground_gravity: float = GROUND_GRAVITY

    def __post_init__(self):
        self.robots = tuple(self.robots)
        self.arm_gravity = _as_vec(self.arm_gravity, 2, "arm_gravity")


@dataclass
class ContactPoint:
    position: np.ndarray
    normal: np.ndarray
    gap: float
    normal_rel_velocity: float
    robot: int = 0


@dataclass
class WorldState:
    q: tuple
    dq: tuple
    obj_pose: np.ndarray
    obj_twist: np.ndarray
    time: float = 0.0
    active_contacts: tuple = ()

    def copy(self) -> "WorldState":
        return WorldState(
            tuple(np.array(x, dtype=float) for x in self.q),
            tuple(np.array(x, dtype=float) for x in self.dq),
            np.array(self.obj_pose, dtype=float),
            np.array(self.obj_twist, dtype=float),
            float(self.time),
            tuple(self.active_contacts),
        )


# ---------------------------------------------------------------------------
# arm kinematics and dynamics


class ArmTerms(NamedTuple):
    M: np.ndarray          # link mass matrix, without motor inertia
    h: np.ndarray          # Coriolis, centrifugal and gravity torques
    J: np.ndarray          # 3 x n end-effector Jacobian (vx, vy, omega)
    Jdot_qdot: np.ndarray  # 3-vector
    p: np.ndarray          # end-effector position
    theta: float           # end-effector angle, wrapped


def _chain(model: RobotModel, q: np.ndarray):
    bx, by, bth = model.base_pose
    phi = bth + np.cumsum(q)
    e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    joints = np.empty((model.n_links + 1, 2))
    joints[0] = (bx, by)
    joints[1:] = joints[0] + np.cumsum(model.link_lengths[:, None] * e, axis=0)
    return phi, joints


@njit(cache=True)
def _arm_kernel(lengths, masses, inertias, com, base, q, dq, gx, gy):
    n = lengths.shape[0]
    cphi = np.empty(n)
    sphi = np.empty(n)
    dphi = np.empty(n)
    jx = np.empty(n + 1)
    jy = np.empty(n + 1)
    ax = np.empty(n + 1)
    ay = np.empty(n + 1)
    phi = base[2]
    w = 0.0
    jx[0] = base[0]
    jy[0] = base[1]
    ax[0] = 0.0
    ay[0] = 0.0
    for k in range(n):
        phi += q[k]
        w += dq[k]
        cphi[k] = np.cos(phi)
        sphi[k] = np.sin(phi)
        dphi[k] = w
        jx[k + 1] = jx[k] + lengths[k] * cphi[k]
        jy[k + 1] = jy[k] + lengths[k] * sphi[k]
        ax[k + 1] = ax[k] - lengths[k] * w * w * cphi[k]
        ay[k + 1] = ay[k] - lengths[k] * w * w * sphi[k]
    M = np.zeros((n, n))
    h = np.zeros(n)
    jvx = np.empty(n)
    jvy = np.empty(n)
    for k in range(n):
        cx = jx[k] + com[k] * cphi[k]
        cy = jy[k] + com[k] * sphi[k]
        accx = ax[k] - com[k] * dphi[k] * dphi[k] * cphi[k] - gx
        accy = ay[k] - com[k] * dphi[k] * dphi[k] * sphi[k] - gy
        for i in range(k + 1):
            jvx[i] = -(cy - jy[i])
            jvy[i] = cx - jx[i]
        for i in range(k + 1):
            h[i] += masses[k] * (jvx[i] * accx + jvy[i] * accy)
            for j in range(k + 1):
                M[i, j] += masses[k] * (jvx[i] * jvx[j] + jvy[i] * jvy[j]) + inertias[k]
    J = np.empty((3, n))
    for i in range(n):
        J[0, i] = -(jy[n] - jy[i])
        J[1, i] = jx[n] - jx[i]
        J[2, i] = 1.0
    jdq = np.array([ax[n], ay[n], 0.0])
    tip = np.array([jx[n], jy[n]])
    return M, h, J, jdq, tip, phi


def arm_terms(model: RobotModel, q, dq, gravity=None) -> ArmTerms:
    """All configuration-dependent arm quantities in one pass."""
    gx, gy = (0.0, 0.0) if gravity is None else (float(gravity[0]), float(gravity[1]))
    M, h, J, jdq, tip, phi = _arm_kernel(
        model.link_lengths, model.link_masses, model.link_inertias, model.com_offsets,
        model.base_pose, np.asarray(q, dtype=float), np.asarray(dq, dtype=float), gx, gy,
    )
    return ArmTerms(M, h, J, jdq, tip, _wrap_scalar(phi))


def mass_matrix(model: RobotModel, q) -> np.ndarray:
    """Link-side joint-space mass matrix M(q) (motor inertia not included)."""
    return arm_terms(model, q, np.zeros(model.n_links)).M


def bias_forces(model: RobotModel, q, dq, gravity=(0.0, 0.0)) -> np.ndarray:
    """Coriolis, centrifugal and gravity torques h(q, dq) for in-plane gravity."""
    return arm_terms(model, q, dq, gravity).h


def geometric_jacobian(model: RobotModel, q) -> np.ndarray:
    return arm_terms(model, q, np.zeros(model.n_links)).J


def jacobian_dot_qdot(model: RobotModel, q, dq) -> np.ndarray:
    return arm_terms(model, q, dq).Jdot_qdot


def forward_kinematics(model: RobotModel, q) -> tuple[np.ndarray, float]:
    """End-effector position and angle in (-pi, pi]."""
    phi, joints = _chain(model, np.asarray(q, dtype=float))
    return joints[-1].copy(), _wrap_scalar(float(phi[-1]))


def joint_space_inertia(model: RobotModel, q) -> np.ndarray:
    """M(q) + B_theta, the inertia seen by the torque-controlled joints."""
    return mass_matrix(model, q) + np.diag(model.motor_inertia)


def task_space_inertia_inv(model: RobotModel, q) -> np.ndarray:
    """Lambda^-1 = J (M + B)^-1 J^T."""
    t = arm_terms(model, q, np.zeros(model.n_links))
    Mb = t.M + np.diag(model.motor_inertia)
    return t.J @ np.linalg.solve(Mb, t.J.T)


def kinetic_energy(world: WorldState, system: SystemModel) -> float:
    """Total kinetic energy, counting the apparent motor inertia of each arm."""
    total = 0.0
    for model, q, dq in zip(system.robots, world.q, world.dq):
        Mb = mass_matrix(model, q) + np.diag(model.motor_inertia)
        total += 0.5 * float(dq @ Mb @ dq)
    v = world.obj_twist
    total += 0.5 * system.obj.mass * float(v[0] ** 2 + v[1] ** 2) + 0.5 * system.obj.inertia * float(v[2] ** 2)
    return total


# ---------------------------------------------------------------------------
# contact geometry


def box_contact(center: np.ndarray, radius: float, box_pose: np.ndarray, half_extents: np.ndarray):
    """Closest-feature contact between a disc and a rectangle.

    Returns (point on box surface, unit normal from box towards disc, gap).
    """
    c, s = math.cos(box_pose[2]), math.sin(box_pose[2])
    dx, dy = center[0] - box_pose[0], center[1] - box_pose[1]
    lx, ly = c * dx + s * dy, -s * dx + c * dy
    hx, hy = half_extents
    cx, cy = min(max(lx, -hx), hx), min(max(ly, -hy), hy)
    ox, oy = lx - cx, ly - cy
    dist = math.hypot(ox, oy)
    if dist > 1e-12:
        nx, ny = ox / dist, oy / dist
        gap = dist - radius
    else:
        # centre inside the box: push out through the nearest face
        depth_x, depth_y = hx - abs(lx), hy - abs(ly)
        if depth_x < depth_y:
            nx, ny = math.copysign(1.0, lx), 0.0
            cx = math.copysign(hx, lx)
            gap = -depth_x - radius
        else:
            nx, ny = 0.0, math.copysign(1.0, ly)
            cy = math.copysign(hy, ly)
            gap = -depth_y - radius
    point = np.array([box_pose[0] + c * cx - s * cy, box_pose[1] + s * cx + c * cy])
    normal = np.array([c * nx - s * ny, s * nx + c * ny])
    return point, normal, gap


def _ee_contacts(world: WorldState, system: SystemModel, terms: Sequence[ArmTerms]):
    out = []
    for i, (model, t) in enumerate(zip(system.robots, terms)):
        point, normal, gap = box_contact(t.p, model.ee_radius, world.obj_pose, system.obj.half_extents)
        out.append((i, point, normal, gap))
    return out


def find_contacts(world: WorldState, system: SystemModel, max_gap: float = ACTIVATION_GAP) -> list[ContactPoint]:
    """End-effector/object contacts whose gap is below ``max_gap``."""
    terms = [arm_terms(m, q, dq) for m, q, dq in zip(system.robots, world.q, world.dq)]
    result = []
    for i, point, normal, gap in _ee_contacts(world, system, terms):
        if gap > max_gap:
            continue
        v_ee = _point_velocity(terms[i].J @ world.dq[i], terms[i].p, point)
        v_obj = _point_velocity(world.obj_twist, world.obj_pose[:2], point)
        result.append(ContactPoint(point, normal, float(gap), float(normal @ (v_ee - v_obj)), i))
    return result


def _point_velocity(twist: np.ndarray, origin: np.ndarray, point: np.ndarray) -> np.ndarray:
    r = point - origin
    return np.array([twist[0] - twist[2] * r[1], twist[1] + twist[2] * r[0]])


# ---------------------------------------------------------------------------
# projected Gauss-Seidel over contact impulses


@njit(cache=True)
def _pgs_kernel(A, b, kind, pair, coef, lam, max_iter, tol):
    m = b.shape[0]
    for it in range(max_iter):
        delta = 0.0
        for r in range(m):
            k = kind[r]
            if k == 3:
                continue
            if k == 2:
                r2 = pair[r]
                res1 = b[r]
                res2 = b[r2]
                for j in range(m):
                    res1 += A[r, j] * lam[j]
                    res2 += A[r2, j] * lam[j]
                a11 = A[r, r]
                a12 = A[r, r2]
                a22 = A[r2, r2]
                det = a11 * a22 - a12 * a12
                d1 = -(a22 * res1 - a12 * res2) / det
                d2 = -(a11 * res2 - a12 * res1) / det
                n1 = lam[r] + d1
                n2 = lam[r2] + d2
                mag = (n1 * n1 + n2 * n2) ** 0.5
                if mag > coef[r]:
                    n1 *= coef[r] / mag
                    n2 *= coef[r] / mag
                delta = max(delta, abs(n1 - lam[r]), abs(n2 - lam[r2]))
                lam[r] = n1
                lam[r2] = n2
                continue
            res = b[r]
            for j in range(m):
                res += A[r, j] * lam[j]
            new = lam[r] - res / A[r, r]
            if k == 0:
                if new < 0.0:
                    new = 0.0
            elif k == 1:
                bound = coef[r] * lam[pair[r]]
                if new > bound:
                    new = bound
                elif new < -bound:
                    new = -bound
            else:
                if new > coef[r]:
                    new = coef[r]
                elif new < -coef[r]:
                    new = -coef[r]
            delta = max(delta, abs(new - lam[r]))
            lam[r] = new
        if delta < tol:
            return it + 1
    return -1


class _Rows:
    """Constraint rows in generalized-velocity space."""

    def __init__(self, ndof: int):
        self.ndof = ndof
        self.G: list[np.ndarray] = []
        self.rhs: list[float] = []
        self.kind: list[int] = []
        self.pair: list[int] = []
        self.coef: list[float] = []

    def add(self, g, rhs, kind, pair=-1, coef=0.0) -> int:
        self.G.append(g)
        self.rhs.append(rhs)
        self.kind.append(kind)
        self.pair.append(pair)
        self.coef.append(coef)
        return len(self.G) - 1

    def __len__(self):
        return len(self.G)


def _layout(system: SystemModel):
    offsets = np.cumsum([0] + [m.n_links for m in system.robots])
    return offsets, int(offsets[-1]) + 3


def _inverse_mass_blocks(system: SystemModel, terms: Sequence[ArmTerms]):
    blocks = []
    for model, t in zip(system.robots, terms):
        blocks.append(np.linalg.inv(t.M + np.diag(model.motor_inertia)))
    obj = system.obj
    blocks.append(np.diag([1.0 / obj.mass, 1.0 / obj.mass, 1.0 / obj.inertia]))
    return blocks


def _add_ee_rows(rows: _Rows, system, world, terms, offsets, contacts, rhs_fn):
    obj_idx = offsets[-1]
    for i, point, normal, gap in contacts:
        t = terms[i]
        P = np.vstack([np.eye(2), perp(point - t.p)]).T @ t.J  # 2 x n
        r_o = point - world.obj_pose[:2]
        Q = np.array([[1.0, 0.0, -r_o[1]], [0.0, 1.0, r_o[0]]])
        tangent = perp(normal)
        for direction, kind in ((normal, _NORMAL), (tangent, _TANGENT)):
            g = np.zeros(rows.ndof)
            g[offsets[i]:offsets[i + 1]] = direction @ P
            g[obj_idx:obj_idx + 3] = -(direction @ Q)
            if kind == _NORMAL:
                n_row = rows.add(g, rhs_fn(gap), _NORMAL)
            else:
                rows.add(g, 0.0, _TANGENT, n_row, system.obj.contact_friction_mu)


def _solve_rows(rows: _Rows, blocks, u_free: np.ndarray, offsets):
    G = np.array(rows.G)
    Winv_Gt = np.empty((rows.ndof, len(rows)))
    start = 0
    for blk in blocks:
        k = blk.shape[0]
        Winv_Gt[start:start + k] = blk @ G[:, start:start + k].T
        start += k
    A = G @ Winv_Gt
    b = G @ u_free - np.array(rows.rhs)
    lam = np.zeros(len(rows))
    iters = _pgs_kernel(
        A, b, np.array(rows.kind, dtype=np.int64), np.array(rows.pair, dtype=np.int64),
        np.array(rows.coef), lam, PGS_MAX_ITER, PGS_TOL,
    )
    if iters < 0:
        raise ContactSolverError(
            f"contact impulses did not converge in {PGS_MAX_ITER} iterations "
            f"({len(rows)} rows)"
        )
    return u_free + Winv_Gt @ lam, lam


def _stack(world: WorldState) -> np.ndarray:
    return np.concatenate([*world.dq, world.obj_twist])


def _unstack(u: np.ndarray, offsets):
    dq = tuple(u[offsets[i]:offsets[i + 1]].copy() for i in range(len(offsets) - 1))
    return dq, u[offsets[-1]:offsets[-1] + 3].copy()


def step(world: WorldState, system: SystemModel, torques, dt: float, saturate: bool = True) -> WorldState:
    """Advance one semi-implicit Euler step with velocity-level contact.

    Torques are clipped to each arm's limits when ``saturate`` is set.
    Raises ContactSolverError if the impulse iteration hits its cap.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    offsets, ndof = _layout(system)
    terms = [arm_terms(m, q, dq, system.arm_gravity) for m, q, dq in zip(system.robots, world.q, world.dq)]

    u_free = np.empty(ndof)
    for i, (model, t) in enumerate(zip(system.robots, terms)):
        tau = np.asarray(torques[i], dtype=float)
        if saturate:
            tau = np.clip(tau, model.tau_min, model.tau_max)
        Mb = t.M + np.diag(model.motor_inertia)
        u_free[offsets[i]:offsets[i + 1]] = world.dq[i] + dt * np.linalg.solve(Mb, tau - t.h)
    u_free[offsets[-1]:] = world.obj_twist

    contacts = [c for c in _ee_contacts(world, system, terms) if c[3] <= ACTIVATION_GAP]
    rows = _Rows(ndof)

    def rhs(gap):
        # speculative contact: close the gap in one step, or push out a fraction of the penetration
        return -gap / dt if gap >= 0.0 else -_POSITION_CORRECTION * gap / dt

    _add_ee_rows(rows, system, world, terms, offsets, contacts, rhs)
    obj = system.obj
    if obj.surface_friction_mu > 0.0:
        cap = obj.surface_friction_mu * obj.mass * system.ground_gravity * dt
        base = offsets[-1]
        gx = np.zeros(ndof)
        gx[base] = 1.0
        gy = np.zeros(ndof)
        gy[base + 1] = 1.0
        gz = np.zeros(ndof)
        gz[base + 2] = 1.0
        ix = rows.add(gx, 0.0, _GROUND_X, coef=cap)
        iy = rows.add(gy, 0.0, _GROUND_Y, coef=cap)
        rows.pair[ix] = iy
        rows.add(gz, 0.0, _TORSION, coef=cap * obj.torsion_radius)

    u = _solve_rows(rows, _inverse_mass_blocks(system, terms), u_free, offsets)[0] if len(rows) else u_free
    dq, twist = _unstack(u, offsets)
    q = tuple(qi + dt * dqi for qi, dqi in zip(world.q, dq))
    pose = world.obj_pose + dt * twist
    pose[2] = _wrap_scalar(float(pose[2]))
    nxt = WorldState(q, dq, pose, twist, world.time + dt)
    nxt.active_contacts = tuple(find_contacts(nxt, system))
    return nxt


def resolve_impact(world: WorldState, system: SystemModel) -> WorldState:
    """Perfectly inelastic impulse over all closed end-effector contacts.

    Contacts within the activation gap are solved together with Coulomb friction;
    positions are unchanged.  If no closed contact is approaching the state is
    returned unchanged.
    """
    offsets, ndof = _layout(system)
    terms = [arm_terms(m, q, dq) for m, q, dq in zip(system.robots, world.q, world.dq)]
    contacts = [c for c in _ee_contacts(world, system, terms) if c[3] <= ACTIVATION_GAP]
    out = world.copy()
    if not contacts:
        return out
    u0 = _stack(world)
    rows = _Rows(ndof)
    _add_ee_rows(rows, system, world, terms, offsets, contacts, lambda gap: 0.0)
    normal_vel = [float(g @ u0) for g, k in zip(rows.G, rows.kind) if k == _NORMAL]
    if min(normal_vel) >= 0.0:
        out.active_contacts = tuple(find_contacts(out, system))
        return out
    u = _solve_rows(rows, _inverse_mass_blocks(system, terms), u0, offsets)[0]
    out.dq, out.obj_twist = _unstack(u, offsets)
    out.active_contacts = tuple(find_contacts(out, system))
    return out


def gravity_compensation(system: SystemModel, q: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [bias_forces(m, qi, np.zeros(m.n_links), system.arm_gravity) for m, qi in zip(system.robots, q)]


def simulate_impact_event(system: SystemModel, q_minus, dq_minus, obj_pose, dt: float = IMPACT_EVENT_DT) -> np.ndarray:
    """Object twist after an impact plus one step under gravity compensation.

    The arms must be posed so their end effectors touch the object.
    """
    world = WorldState(
        tuple(np.array(q, dtype=float) for q in q_minus),
        tuple(np.array(dq, dtype=float) for dq in dq_minus),
        np.array(obj_pose, dtype=float),
        np.zeros(3),
    )
    world = resolve_impact(world, system)
    world = step(world, system, gravity_compensation(system, world.q), dt)
    return world.obj_twist.copy()


def initial_world(system: SystemModel, q0: Sequence, obj_pose, dq0: Sequence | None = None) -> WorldState:
    q = tuple(np.array(x, dtype=float) for x in q0)
    dq = tuple(np.zeros(m.n_links) for m in system.robots) if dq0 is None else tuple(np.array(x, dtype=float) for x in dq0)
    w = WorldState(q, dq, np.array(obj_pose, dtype=float), np.zeros(3))
    w.active_contacts = tuple(find_contacts(w, system))
    return w


def inverse_kinematics(model: RobotModel, p_target, theta_target: float, q_first: float,
                       q_guess=None, tol: float = 1e-10, max_iter: int = 100) -> tuple[np.ndarray, bool]:
    """Pose the end effector with the first joint held fixed.

    Damped Gauss-Newton over joints 2..n.  With n = 4 the remaining Jacobian is
    square, so position and angle are matched exactly when reachable; with
    fewer joints the angle is matched in the least-squares sense.
    Returns (q, success); success also requires the joint limits to hold.
    """
    n = model.n_links
    q = np.zeros(n) if q_guess is None else np.array(q_guess, dtype=float)
    q[0] = q_first
    target = np.array(p_target, dtype=float)
    err = np.inf
    for _ in range(max_iter):
        t = arm_terms(model, q, np.zeros(n))
        res = np.array([t.p[0] - target[0], t.p[1] - target[1], _wrap_scalar(t.theta - theta_target)])
        if n < 4:
            res[2] *= 1e-3
        err = float(np.abs(res).max())
        if err < tol:
            break
        Jr = t.J[:, 1:].copy()
        if n < 4:
            Jr[2] *= 1e-3
        dq = np.linalg.solve(Jr.T @ Jr + 1e-9 * np.eye(n - 1), Jr.T @ res)
        scale = min(1.0, 0.5 / max(np.abs(dq).max(), 1e-12))
        q[1:] -= scale * dq
    q[1:] = wrap_angle(q[1:])
    reached = err < 1e-8 if n >= 4 else err < 1e-6
    within = bool(np.all(q >= model.q_min) and np.all(q <= model.q_max))
    return q, reached and within
