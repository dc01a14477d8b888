import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import transform_chain_fk
from tirs import dynamics as dyn
from tirs.dynamics import (
    ObjectModel, RobotModel, SystemModel, WorldState, arm_terms, bias_forces, forward_kinematics,
    geometric_jacobian, initial_world, inverse_kinematics, jacobian_dot_qdot, kinetic_energy, mass_matrix,
    resolve_impact, step,
)
from tirs.impact_map import contact_pose
from tirs.scenarios import LAYOUTS, build_system, build_task, default_robot
from tirs.task import DUAL_ARM_GRAB, HIT_AND_PUSH

angles = st.floats(-math.pi, math.pi, allow_nan=False)
rates = st.floats(-3.0, 3.0, allow_nan=False)


def joint_vec(elements, n=4):
    return arrays(float, n, elements=elements)


def arm(n=4, **kw):
    lengths = np.array([0.40, 0.35, 0.25, 0.10][:n])
    masses = np.array([2.5, 1.8, 1.0, 0.5][:n])
    return RobotModel(lengths, masses, masses * lengths**2 / 12.0, lengths / 2.0, np.full(n, 0.05), **kw)


def link_com_velocities(model, q, dq, h=1e-7):
    """COM positions differentiated numerically along q + t*dq."""

    def coms(qq):
        phi = model.base_pose[2] + np.cumsum(qq)
        e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        joints = model.base_pose[:2] + np.vstack([np.zeros(2), np.cumsum(model.link_lengths[:, None] * e, axis=0)])
        return joints[:-1] + model.com_offsets[:, None] * e

    return (coms(q + h * dq) - coms(q - h * dq)) / (2 * h)


def far_object(mass=1.0, mu=0.3):
    return ObjectModel(mass, mass * (0.16**2 + 0.12**2) / 12, (0.08, 0.06), mu, 0.6)


# --- mass matrix ------------------------------------------------------------


def test_single_link_point_mass():
    m, l, tiny = 1.7, 0.8, 1e-12
    model = RobotModel([l], [m], [tiny], [l], [0.0])
    for q in (0.0, 1.2, -2.5):
        assert mass_matrix(model, [q])[0, 0] == pytest.approx(m * l * l + tiny, rel=1e-14)


def test_two_link_coupling_term_against_energy():
    model = arm(2)
    m2, l1, c2 = model.link_masses[1], model.link_lengths[0], model.com_offsets[1]
    M0, Mpi = mass_matrix(model, [0.3, 0.0]), mass_matrix(model, [0.3, math.pi])
    assert M0[0, 0] - Mpi[0, 0] == pytest.approx(4 * m2 * l1 * c2, rel=1e-12)


@given(joint_vec(angles), joint_vec(rates))
def test_kinetic_energy_matches_per_link_sum(q, dq):
    model = arm()
    v = link_com_velocities(model, q, dq)
    omega = np.cumsum(dq)
    expected = 0.5 * np.sum(model.link_masses * (v**2).sum(axis=1)) + 0.5 * np.sum(model.link_inertias * omega**2)
    assert 0.5 * dq @ mass_matrix(model, q) @ dq == pytest.approx(expected, rel=1e-6, abs=1e-9)


@given(joint_vec(angles))
def test_mass_matrix_symmetric_positive_definite(q):
    M = mass_matrix(arm(), q)
    np.testing.assert_allclose(M, M.T, atol=1e-14)
    assert np.linalg.eigvalsh(M).min() > 0.0


# --- bias forces ------------------------------------------------------------


@given(joint_vec(angles))
def test_bias_zero_at_rest_without_gravity(q):
    np.testing.assert_array_equal(bias_forces(arm(), q, np.zeros(4)), np.zeros(4))


@given(joint_vec(angles))
def test_gravity_torque_is_potential_gradient(q):
    model = arm()
    g = np.array([0.0, -9.81])

    def U(qq):
        phi = np.cumsum(qq)
        e = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        joints = np.vstack([np.zeros(2), np.cumsum(model.link_lengths[:, None] * e, axis=0)])
        coms = joints[:-1] + model.com_offsets[:, None] * e
        return -float(np.sum(model.link_masses * (coms @ g)))

    h = 1e-6
    grad = np.array([(U(q + h * e) - U(q - h * e)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(bias_forces(model, q, np.zeros(4), g), grad, atol=1e-6)


def test_energy_balance_along_torque_driven_rollout():
    model = arm()
    system = SystemModel([model], far_object())
    world = initial_world(system, [np.array([0.2, 0.9, -0.7, 0.4])], [5.0, 5.0, 0.0], [np.array([0.5, -0.4, 0.3, 0.6])])
    dt, work = 1e-4, 0.0
    e0 = kinetic_energy(world, system)
    for k in range(1000):
        tau = np.array([0.3, -0.2, 0.1, 0.05]) * math.sin(0.01 * k)
        nxt = step(world, system, [tau], dt, saturate=False)
        work += dt * tau @ (0.5 * (world.dq[0] + nxt.dq[0]))
        world = nxt
    assert kinetic_energy(world, system) - e0 == pytest.approx(work, abs=2e-4 * max(e0, 1e-3))


# --- Jacobian and kinematics ------------------------------------------------


def test_single_link_jacobian_at_zero():
    model = RobotModel([1.0], [1.0], [0.1], [0.5], [0.0])
    np.testing.assert_allclose(geometric_jacobian(model, [0.0]), [[0.0], [1.0], [1.0]], atol=1e-15)


@given(joint_vec(angles), joint_vec(rates))
def test_jacobian_matches_finite_differences(q, dq):
    model = arm()
    h = 1e-7
    (pp, tp), (pm, tm) = forward_kinematics(model, q + h * dq), forward_kinematics(model, q - h * dq)
    rate = np.r_[(pp - pm) / (2 * h), dyn.wrap_angle(tp - tm) / (2 * h)]
    np.testing.assert_allclose(geometric_jacobian(model, q) @ dq, rate, atol=1e-6)


@given(joint_vec(angles))
def test_jacobian_shape_and_rank(q):
    J = geometric_jacobian(arm(), q)
    assert J.shape == (3, 4)
    assert np.linalg.matrix_rank(J) <= 3


@given(joint_vec(angles))
def test_jdot_qdot_zero_at_rest(q):
    np.testing.assert_array_equal(jacobian_dot_qdot(arm(), q, np.zeros(4)), np.zeros(3))


@given(angles, rates)
def test_single_link_centripetal(q, w):
    l = 0.7
    model = RobotModel([l], [1.0], [0.1], [0.35], [0.0])
    expected = [-l * w * w * math.cos(q), -l * w * w * math.sin(q), 0.0]
    np.testing.assert_allclose(jacobian_dot_qdot(model, [q], [w]), expected, atol=1e-12)


@given(joint_vec(angles), joint_vec(rates))
def test_jdot_qdot_matches_differentiated_jacobian(q, dq):
    model = arm()
    h = 1e-6
    Jdot = (geometric_jacobian(model, q + h * dq) - geometric_jacobian(model, q - h * dq)) / (2 * h)
    np.testing.assert_allclose(jacobian_dot_qdot(model, q, dq), Jdot @ dq, atol=1e-6)


def test_forward_kinematics_straight_and_right_angle():
    model = arm(base_pose=(0.1, -0.2, 0.3))
    p, th = forward_kinematics(model, np.zeros(4))
    L = model.link_lengths.sum()
    np.testing.assert_allclose(p, [0.1 + L * math.cos(0.3), -0.2 + L * math.sin(0.3)], atol=1e-14)
    assert th == pytest.approx(0.3)
    two = arm(2)
    p, _ = forward_kinematics(two, [math.pi / 2, -math.pi / 2])
    np.testing.assert_allclose(p, [two.link_lengths[1], two.link_lengths[0]], atol=1e-14)


@given(joint_vec(angles), st.tuples(st.floats(-1, 1), st.floats(-1, 1), angles))
def test_forward_kinematics_matches_transform_chain(q, base):
    model = arm(base_pose=base)
    p, th = forward_kinematics(model, q)
    p_ref, th_ref = transform_chain_fk(model.link_lengths, q, base)
    np.testing.assert_allclose(p, p_ref, atol=1e-12)
    assert abs(dyn.wrap_angle(th - th_ref)) < 1e-12


@given(joint_vec(st.floats(-1.2, 1.2)))
def test_inverse_kinematics_round_trip(q):
    model = default_robot()
    p, th = forward_kinematics(model, q)
    q_ik, ok = inverse_kinematics(model, p, th, q[0], q_guess=q + 0.05)
    if ok:
        p2, th2 = forward_kinematics(model, q_ik)
        np.testing.assert_allclose(p2, p, atol=1e-8)
        assert abs(dyn.wrap_angle(th2 - th)) < 1e-8


# --- free motion and ground friction -----------------------------------------


@given(joint_vec(angles), joint_vec(rates))
def test_free_arm_coasts_with_constant_joint_rates_for_single_link(q, dq):
    model = RobotModel([0.5], [1.0], [0.02], [0.25], [0.0], dq_min=[-10.0], dq_max=[10.0])
    system = SystemModel([model], far_object())
    world = initial_world(system, [q[:1]], [5.0, 5.0, 0.0], [dq[:1]])
    nxt = step(world, system, [np.zeros(1)], 1e-3)
    np.testing.assert_allclose(nxt.dq[0], dq[:1], atol=1e-14)
    np.testing.assert_allclose(nxt.q[0], q[:1] + 1e-3 * dq[:1], atol=1e-14)


def test_sliding_object_decelerates_at_mu_g():
    mu, g, dt = 0.3, 9.81, 1e-3
    system = SystemModel([arm()], far_object(mu=mu))
    world = initial_world(system, [np.zeros(4)], [5.0, 5.0, 0.0])
    world.obj_twist = np.array([0.5, 0.0, 0.0])
    speeds = []
    for _ in range(250):
        world = step(world, system, [np.zeros(4)], dt)
        speeds.append(world.obj_twist[0])
    expected = np.maximum(0.5 - mu * g * dt * np.arange(1, 251), 0.0)
    np.testing.assert_allclose(speeds, expected, atol=1e-9)
    assert speeds[-1] == 0.0


def test_free_body_momentum_constant_without_friction():
    system = SystemModel([arm()], far_object(mu=0.0))
    world = initial_world(system, [np.zeros(4)], [5.0, 5.0, 0.3])
    world.obj_twist = np.array([0.3, -0.2, 1.1])
    p0 = system.obj.mass * world.obj_twist[:2]
    for _ in range(100):
        world = step(world, system, [np.zeros(4)], 1e-3)
        np.testing.assert_allclose(system.obj.mass * world.obj_twist[:2], p0, atol=1e-10)


def test_resting_contact_keeps_gap_within_tolerance():
    system = build_system(HIT_AND_PUSH, "juice")
    task = build_task(HIT_AND_PUSH, system.obj)
    qs, _ = contact_pose(system, task, [0.0], LAYOUTS[HIT_AND_PUSH].elbow_guess)
    model = system.robots[0]
    world = initial_world(system, qs, [*task.p_o_nominal, 0.0])
    # press gently into the face, well below the static friction load
    t = arm_terms(model, qs[0], np.zeros(4))
    tau = t.J.T @ np.array([0.0, -1.0, 0.0])
    gaps = []
    for _ in range(1000):
        world = step(world, system, [tau], 1e-3)
        gaps.append(min(c.gap for c in world.active_contacts))
    assert min(gaps) >= -dyn.PENETRATION_TOLERANCE
    assert max(gaps) <= dyn.ACTIVATION_GAP


# --- impacts ------------------------------------------------------------------


def pusher_setup(obj_mass, v_minus):
    """Single link swinging its tip straight into a face (1-DOF pusher)."""
    l, radius = 0.5, 0.02
    model = RobotModel([l], [1.0], [0.03], [0.25], [0.02], ee_radius=radius)
    obj = ObjectModel(obj_mass, obj_mass * 0.01 / 6, (0.05, 0.05), 0.3, 0.0)
    system = SystemModel([model], obj)
    # tip at (l, 0) moves along +y; the face sits just above it
    world = WorldState((np.zeros(1),), (np.array([v_minus / l]),), np.array([l, radius + 0.05, 0.0]), np.zeros(3))
    m_r = (model.link_inertias[0] + model.link_masses[0] * 0.25**2 + 0.02) / l**2
    return system, world, m_r


@given(st.floats(0.2, 5.0), st.floats(0.05, 1.0))
def test_one_dof_pusher_matches_momentum_oracle(m_o, v):
    system, world, m_r = pusher_setup(m_o, v)
    out = resolve_impact(world, system)
    expected = m_r * v / (m_r + m_o)
    assert out.obj_twist[1] == pytest.approx(expected, abs=1e-6)
    assert out.dq[0][0] * 0.5 == pytest.approx(expected, abs=1e-6)
    assert abs(out.obj_twist[0]) < 1e-9 and abs(out.obj_twist[2]) < 1e-9


def test_separating_contact_left_unchanged():
    system, world, _ = pusher_setup(1.0, -0.3)
    out = resolve_impact(world, system)
    np.testing.assert_array_equal(out.dq[0], world.dq[0])
    np.testing.assert_array_equal(out.obj_twist, world.obj_twist)


@given(st.floats(-0.05, 0.05), st.floats(0.05, 0.8), st.sampled_from(["parcel", "catfood", "juice"]))
def test_impact_is_inelastic_and_dissipative(offset, speed_scale, obj):
    system = build_system(HIT_AND_PUSH, obj)
    task = build_task(HIT_AND_PUSH, system.obj)
    qs, dqs = contact_pose(system, task, [offset], LAYOUTS[HIT_AND_PUSH].elbow_guess)
    world = WorldState(tuple(qs), tuple(d * speed_scale / 0.35 for d in dqs), np.r_[task.p_o_nominal, 0.0], np.zeros(3))
    out = resolve_impact(world, system)
    assert kinetic_energy(out, system) <= kinetic_energy(world, system) + 1e-12
    for c in dyn.find_contacts(out, system):
        assert c.normal_rel_velocity >= -1e-9


@pytest.mark.parametrize("offset", [-0.03, 0.0, 0.04])
def test_symmetric_dual_arm_impact_has_no_normal_object_velocity(offset):
    system = build_system(DUAL_ARM_GRAB, "catfood")
    task = build_task(DUAL_ARM_GRAB, system.obj)
    qs, dqs = contact_pose(system, task, [offset, offset], LAYOUTS[DUAL_ARM_GRAB].elbow_guess)
    world = WorldState(tuple(qs), tuple(dqs), np.r_[task.p_o_nominal, 0.0], np.zeros(3))
    out = resolve_impact(world, system)
    assert abs(out.obj_twist[0]) < 1e-9
    assert out.obj_twist[1] < 0.0


def single_push_state(obj_name, contact_mu=None):
    system = build_system(HIT_AND_PUSH, obj_name)
    if contact_mu is not None:
        o = system.obj
        system = SystemModel(system.robots, ObjectModel(o.mass, o.inertia, o.half_extents, o.surface_friction_mu, contact_mu))
    task = build_task(HIT_AND_PUSH, system.obj)
    qs, dqs = contact_pose(system, task, [0.0], LAYOUTS[HIT_AND_PUSH].elbow_guess)
    world = WorldState(tuple(qs), tuple(dqs), np.r_[task.p_o_nominal, 0.0], np.zeros(3))
    return system, task, world


@pytest.mark.parametrize("obj", ["parcel", "catfood", "juice"])
def test_frictionless_push_matches_normal_projected_task_space_mass(obj):
    system, task, world = single_push_state(obj, contact_mu=0.0)
    model = system.robots[0]
    n = -task.faces[0].normal
    Li = dyn.task_space_inertia_inv(model, world.q[0])[:2, :2]
    m_r = 1.0 / (n @ Li @ n)
    v_n = n @ (arm_terms(model, world.q[0], world.dq[0]).J @ world.dq[0])[:2]
    expected = m_r * v_n / (m_r + system.obj.mass)
    out = resolve_impact(world, system)
    assert out.obj_twist[:2] @ n == pytest.approx(expected, rel=0.02)


@pytest.mark.parametrize("obj", ["parcel", "catfood", "juice"])
def test_sticking_push_matches_planar_task_space_mass(obj):
    # with friction the contact sticks, so the whole 2x2 block of Lambda^-1 takes part
    system, task, world = single_push_state(obj)
    model = system.robots[0]
    Li = dyn.task_space_inertia_inv(model, world.q[0])[:2, :2]
    v = (arm_terms(model, world.q[0], world.dq[0]).J @ world.dq[0])[:2]
    impulse = np.linalg.solve(Li + np.eye(2) / system.obj.mass, v)
    expected = np.linalg.norm(impulse) / system.obj.mass
    out = resolve_impact(world, system)
    assert np.linalg.norm(out.obj_twist[:2]) == pytest.approx(expected, rel=0.02)


def test_heavier_object_moves_slower():
    system, _, world = single_push_state("catfood")
    light = resolve_impact(world, system).obj_twist
    heavy_obj = ObjectModel(2 * system.obj.mass, 2 * system.obj.inertia, system.obj.half_extents,
                            system.obj.surface_friction_mu, system.obj.contact_friction_mu)
    heavy = resolve_impact(world, SystemModel(system.robots, heavy_obj)).obj_twist
    assert np.linalg.norm(heavy[:2]) < np.linalg.norm(light[:2])


# --- model validation ----------------------------------------------------------


def test_model_validation():
    with pytest.raises(ValueError):
        ObjectModel(1.0, 0.1, (0.1, 0.1), restitution=0.5)
    with pytest.raises(ValueError):
        ObjectModel(-1.0, 0.1, (0.1, 0.1))
    with pytest.raises(ValueError):
        RobotModel([0.3, 0.2], [1.0, 1.0, 1.0], [0.1, 0.1], [0.1, 0.1], [0.0, 0.0])
    with pytest.raises(ValueError):
        RobotModel([0.3], [1.0], [0.1], [0.1], [0.0], q_min=[1.0], q_max=[0.0])
    with pytest.raises(ValueError):
        step(initial_world(SystemModel([arm()], far_object()), [np.zeros(4)], [5, 5, 0]),
             SystemModel([arm()], far_object()), [np.zeros(4)], 0.0)
