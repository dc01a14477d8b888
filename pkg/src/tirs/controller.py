"""Three-mode task-space QP controller for planned impacts, plus its ablation baselines.

Modes
-----
Ante     follow the approach field with velocity feedback (and mirror
         synchronisation for two arms).
Interim  entered at the first detected impact; velocity feedback is removed and
         replaced by position feedback towards a point integrated along the
         approach field, then faded into the post-impact target over ``dt_int``.
Post     track the object-level post-impact field with a feedforward wrench.

Variants
--------
proposed        Ante -> Interim -> Post, post field seeded with the impact map.
no_impact_map   Ante -> Interim -> Post, post field is the plain attractor.
no_interim      Ante -> Post once every arm has flagged, impact map used.
no_rs           Ante -> Post once every arm has flagged, plain attractor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np

from . import fields
from .dynamics import ArmTerms, RobotModel, arm_terms, wrap_angle
from .fields import PostFieldParams, angular_refs
from .qp import QPProblem, QPSolution, solve
from .task import TaskSpec

ANTE, INTERIM, POST = "ante", "interim", "post"
VARIANTS = ("proposed", "no_rs", "no_interim", "no_impact_map")
_WITH_INTERIM = ("proposed", "no_impact_map")
_WITH_MAP = ("proposed", "no_interim")


@dataclass(frozen=True)
class ControllerConfig:
    dt: float = 0.001
    d_track: tuple = (40.0, 40.0, 40.0)
    k_track: tuple = (40.0, 40.0, 40.0)
    k_q: float = 250.0
    k_sync: float = 10.0
    w_track: float = 1.0
    w_q: float = 1.0
    w_sync: float = 1.0
    dt_int: float = 0.1
    variant: str = "proposed"
    detect_threshold: float = 0.05
    detect_latency: int = 3
    # feedforward wrench shaping
    speed_floor: float = 0.05
    grab_accel_max: float = 1.0
    grab_safety: float = 1.5
    # angular feedforward inside the interim blend
    interim_angular_feedforward: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        gains = [self.dt, self.k_q, self.k_sync, self.w_track, self.dt_int, *self.d_track, *self.k_track]
        if min(gains) <= 0.0:
            raise ValueError("gains, weights and time steps must be positive")
        if min(self.w_q, self.w_sync) < 0.0:
            raise ValueError("weights must be non-negative")
        if not self.dt_int > self.dt:
            raise ValueError("dt_int must exceed dt")
        if self.detect_latency < 0:
            raise ValueError("detect_latency must be non-negative")

    @property
    def interim_steps(self) -> int:
        return int(round(self.dt_int / self.dt))

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ControllerConfig":
        d = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**d)


@dataclass
class ControllerState:
    mode: str = ANTE
    step: int = 0
    T_imp: float | None = None
    switch_step: int | None = None
    post_step: int | None = None
    impact_detected: list = field(default_factory=list)
    flag_step: list = field(default_factory=list)
    report_step: list = field(default_factory=list)
    p_int_d: list = field(default_factory=list)
    v_o_est_plus: np.ndarray | None = None
    p_o_plus: np.ndarray | None = None
    post_params: PostFieldParams | None = None
    prev_dq: list | None = None
    prev_qdd: np.ndarray | None = None
    qp_failures: int = 0


class ControlOutput(NamedTuple):
    torques: list
    target_accel: np.ndarray     # stacked (3 per robot)
    mode: str
    qp_status: str
    ref_twists: list             # per robot (vx, vy, omega) reference
    qdd: np.ndarray


class _Sensed(NamedTuple):
    terms: list
    Mb: list
    twist: list


def smooth_gamma(k: int, k0: int, n_int: int) -> float:
    """Interim blend factor from step counts so both endpoints are exact."""
    return min(max((k - k0) / n_int, 0.0), 1.0)


class ImpactDetector:
    """Joint-velocity innovation detector with a reporting delay.

    A robot is flagged on the first step where the joint velocity changes by more
    than ``threshold`` in one step while its end effector is within ``radius`` of
    the estimated object centre.  The flag latches and becomes visible
    ``latency`` steps later.
    """

    def __init__(self, n_robots: int, threshold: float, latency: int):
        self.threshold = threshold
        self.latency = latency
        self.prev = [None] * n_robots
        self.flag_step = [None] * n_robots

    def update(self, k: int, dq: Sequence[np.ndarray], near: Sequence[bool]) -> list[bool]:
        for i, v in enumerate(dq):
            if self.flag_step[i] is None and self.prev[i] is not None and near[i]:
                if float(np.linalg.norm(v - self.prev[i])) > self.threshold:
                    self.flag_step[i] = k
            self.prev[i] = np.array(v, dtype=float)
        return self.reported(k)

    def reported(self, k: int) -> list[bool]:
        return [f is not None and k >= f + self.latency for f in self.flag_step]


def detect_impacts(dq_history: Sequence[Sequence[np.ndarray]], near: Sequence[bool], threshold: float = 0.05,
                   latency: int = 0) -> list[bool]:
    """Replay a joint-velocity history (one entry per control step) through the detector."""
    if len(dq_history) < 2:
        raise ValueError("need at least two control steps of history")
    det = ImpactDetector(len(dq_history[0]), threshold, latency)
    flags = []
    for k, dq in enumerate(dq_history):
        flags = det.update(k, dq, near)
    return flags


class RSController:
    """Per-rollout controller instance; call :meth:`step` once per control period."""

    def __init__(self, robots: Sequence[RobotModel], task: TaskSpec, config: ControllerConfig,
                 predictor: Callable[[np.ndarray], np.ndarray] | None = None):
        if len(robots) != task.n_robots:
            raise ValueError("robot count does not match the task")
        if config.variant in _WITH_MAP and predictor is None:
            raise ValueError(f"variant {config.variant} needs an impact-map predictor")
        self.robots = tuple(robots)
        self.task = task
        self.config = config
        self.predictor = predictor
        n = task.n_robots
        self.state = ControllerState(
            impact_detected=[False] * n, flag_step=[None] * n, report_step=[None] * n,
            p_int_d=[None] * n,
        )
        self.detector = ImpactDetector(n, config.detect_threshold, config.detect_latency)
        self._offsets = np.cumsum([0] + [r.n_links for r in robots])
        self._D = np.array(config.d_track, dtype=float)
        self._K = np.array(config.k_track, dtype=float)
        self._mirror = task.mirror

    # --- sensing -----------------------------------------------------------

    def sense(self, q: Sequence[np.ndarray], dq: Sequence[np.ndarray]) -> _Sensed:
        terms, Mb, twist = [], [], []
        for model, qi, dqi in zip(self.robots, q, dq):
            t = arm_terms(model, qi, dqi)
            terms.append(t)
            Mb.append(t.M + np.diag(model.motor_inertia))
            twist.append(t.J @ dqi)
        return _Sensed(terms, Mb, twist)

    # --- targets -----------------------------------------------------------

    def ante_target(self, i: int, t: ArmTerms, twist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Approach-field feedforward plus velocity feedback; returns (target, reference twist)."""
        P = self.task.ante[i]
        ref, acc = fields.ante_refs(t.p, t.theta, P)
        v_ref = np.array([ref.v[0], ref.v[1], ref.omega])
        a_ff = np.array([acc.a[0], acc.a[1], acc.alpha_ang])
        return a_ff + self._D * (v_ref - twist), v_ref

    def interim_ante_part(self, i: int, t: ArmTerms) -> np.ndarray:
        """Feedforward plus pose feedback towards the integrated point; no velocity feedback."""
        P = self.task.ante[i]
        a_lin = fields.ante_acceleration(t.p, P)
        alpha = angular_refs(t.theta, P.theta_d, P.kappa_r_a)[1] if self.config.interim_angular_feedforward else 0.0
        p_int = self.state.p_int_d[i]
        fb = np.array([p_int[0] - t.p[0], p_int[1] - t.p[1], wrap_angle(P.theta_d - t.theta)])
        return np.array([a_lin[0], a_lin[1], alpha]) + self._K * fb

    def _object_refs(self, p_o: np.ndarray):
        st = self.state
        if self.config.variant in _WITH_MAP:
            ref = fields.post_velocity(p_o, st.post_params)
            acc = fields.post_acceleration(p_o, st.post_params)
        else:
            # plain attractor everywhere
            ref = self.task.kappa_p * (self.task.p_of - p_o)
            acc = -self.task.kappa_p * ref
        return ref, acc

    def feedforward_wrench(self, i: int, v_ref: np.ndarray) -> np.ndarray:
        """Force the arm must add to keep the object moving (and clamped, for two arms)."""
        task, cfg = self.task, self.config
        load = task.ground_mu_est * task.obj_mass_est * task.gravity
        direction = v_ref / max(float(np.linalg.norm(v_ref)), cfg.speed_floor)
        if task.n_robots == 1:
            f = load * direction
        else:
            clamp = cfg.grab_safety * (load + task.obj_mass_est * cfg.grab_accel_max) / (2.0 * task.contact_mu_est)
            f = -clamp * task.faces[i].normal + 0.5 * load * direction
        return np.array([f[0], f[1], 0.0])

    def post_target(self, i: int, t: ArmTerms, Mb: np.ndarray, twist: np.ndarray, p_o: np.ndarray):
        ref, acc = self._object_refs(p_o)
        P = self.task.ante[i]
        omega, alpha = angular_refs(t.theta, P.theta_d, self.task.kappa_r_p)
        v_ref = np.array([ref[0], ref[1], omega])
        a_ff = np.array([acc[0], acc[1], alpha])
        lam_inv = t.J @ np.linalg.solve(Mb, t.J.T)
        f = self.feedforward_wrench(i, ref)
        return a_ff + lam_inv @ f + self._D * (v_ref - twist), v_ref

    def joint_target(self, t_q: float, t_dq: float, xi_d: float, damping_scale: float = 1.0) -> float:
        k = self.config.k_q
        return -2.0 * damping_scale * math.sqrt(k) * t_dq + k * (xi_d - t_q)

    # --- QP ----------------------------------------------------------------

    def _build_qp(self, q, dq, sensed: _Sensed, targets, joint_targets, sync: bool) -> QPProblem:
        cfg = self.config
        n_tot = int(self._offsets[-1])
        H = np.zeros((n_tot, n_tot))
        g = np.zeros(n_tot)
        A_rows, lbs, ubs = [], [], []
        dt = cfg.dt
        for i, model in enumerate(self.robots):
            o0, o1 = self._offsets[i], self._offsets[i + 1]
            t = sensed.terms[i]
            b = targets[i] - t.Jdot_qdot
            H[o0:o1, o0:o1] += cfg.w_track * (t.J.T @ t.J)
            g[o0:o1] -= cfg.w_track * (t.J.T @ b)
            if cfg.w_q > 0.0:
                H[o0, o0] += cfg.w_q
                g[o0] -= cfg.w_q * joint_targets[i]
            n = model.n_links
            block = np.zeros((3 * n, n_tot))
            block[0:n, o0:o1] = np.eye(n)
            block[n:2 * n, o0:o1] = np.eye(n)
            block[2 * n:, o0:o1] = sensed.Mb[i]
            A_rows.append(block)
            qi, dqi = np.asarray(q[i]), np.asarray(dq[i])
            lbs += [2.0 * (model.q_min - qi - dqi * dt) / dt**2, (model.dq_min - dqi) / dt, model.tau_min - t.h]
            ubs += [2.0 * (model.q_max - qi - dqi * dt) / dt**2, (model.dq_max - dqi) / dt, model.tau_max - t.h]
        if sync:
            self._add_sync(H, g, sensed)
        return QPProblem(H, g, np.vstack(A_rows), np.concatenate(lbs), np.concatenate(ubs))

    def sync_errors_terms(self, sensed: _Sensed):
        """Mirror targets for both arms and the shared weight ||p2m - p1||."""
        Ts = self._mirror
        c = self.task.p_o_nominal
        p = [t.p for t in sensed.terms]
        v = [tw[:2] for tw in sensed.twist]
        pm = [Ts @ (p[i] - c) + c for i in range(2)]
        vm = [Ts @ v[i] for i in range(2)]
        scale = float(np.linalg.norm(pm[1] - p[0]))
        other = float(np.linalg.norm(pm[0] - p[1]))
        assert abs(scale - other) <= 1e-9 * max(1.0, scale), "mirror distances disagree"
        ks = self.config.k_sync
        targets = [ks * (pm[1 - i] - p[i]) + 2.0 * math.sqrt(ks) * (vm[1 - i] - v[i]) for i in range(2)]
        return targets, scale

    def _add_sync(self, H, g, sensed: _Sensed):
        targets, scale = self.sync_errors_terms(sensed)
        w = self.config.w_sync * scale
        if w == 0.0:
            return
        for i in range(2):
            o0, o1 = self._offsets[i], self._offsets[i + 1]
            t = sensed.terms[i]
            Jv = t.J[:2]
            b = targets[i] - t.Jdot_qdot[:2]
            H[o0:o1, o0:o1] += w * (Jv.T @ Jv)
            g[o0:o1] -= w * (Jv.T @ b)

    # --- mode handling -------------------------------------------------------

    def _enter_contact_mode(self, sensed: _Sensed, mode: str):
        st, task = self.state, self.task
        k = st.step
        st.mode = mode
        st.T_imp = k * self.config.dt
        st.switch_step = k
        if mode == POST:
            st.post_step = k
        p_ee = [t.p for t in sensed.terms]
        st.p_int_d = [p.copy() for p in p_ee]
        st.p_o_plus = task.infer_object_position(p_ee)
        if self.config.variant in _WITH_MAP:
            key = np.array([face.project(p) for face, p in zip(task.faces, p_ee)])
            st.v_o_est_plus = np.asarray(self.predictor(key), dtype=float)[:2].copy()
            st.post_params = PostFieldParams(
                task.p_of, task.kappa_p, task.r_min_p, task.r_max_p, st.v_o_est_plus, st.p_o_plus,
                task.kappa_r_p,
            )

    def mode_machine_step(self, sensed: _Sensed, dq: Sequence[np.ndarray]) -> str:
        st, cfg = self.state, self.config
        near = [float(np.linalg.norm(t.p - a.p_o_est)) <= a.r_min_a for t, a in zip(sensed.terms, self.task.ante)]
        flags = self.detector.update(st.step, dq, near)
        for i, f in enumerate(flags):
            if f and not st.impact_detected[i]:
                st.impact_detected[i] = True
                st.report_step[i] = st.step
                st.flag_step[i] = self.detector.flag_step[i]
        if st.mode == ANTE:
            if cfg.variant in _WITH_INTERIM and any(flags):
                self._enter_contact_mode(sensed, INTERIM)
            elif cfg.variant not in _WITH_INTERIM and all(flags):
                self._enter_contact_mode(sensed, POST)
        elif st.mode == INTERIM and st.step >= st.switch_step + cfg.interim_steps:
            st.mode = POST
            st.post_step = st.step
        return st.mode

    # --- one control period --------------------------------------------------

    def targets(self, q, dq, sensed: _Sensed):
        """Task targets for the current mode: (per-robot targets, joint targets, ref twists, sync flag)."""
        st, cfg, task = self.state, self.config, self.task
        targets, jt, refs = [], [], []
        mode = st.mode
        if mode == ANTE:
            for i in range(task.n_robots):
                a, r = self.ante_target(i, sensed.terms[i], sensed.twist[i])
                targets.append(a)
                refs.append(r)
                jt.append(self.joint_target(q[i][0], dq[i][0], task.ante[i].xi_d))
            return targets, jt, refs, task.n_robots == 2
        p_o = task.infer_object_position([t.p for t in sensed.terms])
        if mode == INTERIM:
            gamma = smooth_gamma(st.step, st.switch_step, cfg.interim_steps)
            for i in range(task.n_robots):
                t = sensed.terms[i]
                ante = self.interim_ante_part(i, t)
                post, r = self.post_target(i, t, sensed.Mb[i], sensed.twist[i], p_o)
                targets.append((1.0 - gamma) * ante + gamma * post)
                refs.append(r)
                jt.append(self.joint_target(q[i][0], dq[i][0], task.ante[i].xi_d, gamma))
            return targets, jt, refs, False
        for i in range(task.n_robots):
            a, r = self.post_target(i, sensed.terms[i], sensed.Mb[i], sensed.twist[i], p_o)
            targets.append(a)
            refs.append(r)
            jt.append(self.joint_target(q[i][0], dq[i][0], task.ante[i].xi_d))
        return targets, jt, refs, False

    def step(self, q: Sequence[np.ndarray], dq: Sequence[np.ndarray]) -> ControlOutput:
        st = self.state
        sensed = self.sense(q, dq)
        mode = self.mode_machine_step(sensed, dq)
        targets, jt, refs, sync = self.targets(q, dq, sensed)
        problem = self._build_qp(q, dq, sensed, targets, jt, sync)
        sol = solve(problem)
        if sol.ok:
            qdd = sol.x
        else:
            st.qp_failures += 1
            qdd = st.prev_qdd if st.prev_qdd is not None else np.zeros(problem.n)
        st.prev_qdd = qdd
        torques = []
        for i in range(self.task.n_robots):
            o0, o1 = self._offsets[i], self._offsets[i + 1]
            torques.append(sensed.Mb[i] @ qdd[o0:o1] + sensed.terms[i].h)
        if mode == INTERIM:
            for i in range(self.task.n_robots):
                P = self.task.ante[i]
                p = st.p_int_d[i]
                st.p_int_d[i] = p + fields.ante_velocity(p, P) * self.config.dt
        st.step += 1
        return ControlOutput(torques, np.concatenate(targets), mode, sol.status, refs, qdd)
