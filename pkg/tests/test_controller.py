import numpy as np
import pytest
from hypothesis import given, strategies as st

from tirs import fields
from tirs.controller import (
    ANTE, INTERIM, POST, ControllerConfig, ImpactDetector, RSController, detect_impacts, smooth_gamma,
)
from tirs.dynamics import arm_terms, step
from tirs.harness import impact_dataset_for, run_rollout
from tirs.impact_map import contact_pose
from tirs.scenarios import LAYOUTS, ScenarioConfig, build_scenario
from tirs.task import DUAL_ARM_GRAB, HIT_AND_PUSH


def make_controller(kind=HIT_AND_PUSH, variant="proposed", **cfg):
    sc = build_scenario(ScenarioConfig(kind=kind, variant=variant, init_noise_rad=0.0, controller=cfg))
    pred = impact_dataset_for(sc.config).predictor()
    return sc, RSController(sc.controller_robots, sc.task, sc.controller, pred)


def contact_state(sc):
    qs, dqs = contact_pose(sc.system, sc.task, [0.0] * sc.task.n_robots, LAYOUTS[sc.config.kind].elbow_guess)
    return qs, dqs


# --- configuration -------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(variant="nope")
    with pytest.raises(ValueError):
        ControllerConfig(k_q=0.0)
    with pytest.raises(ValueError):
        ControllerConfig(dt_int=0.001)
    with pytest.raises(ValueError):
        ControllerConfig(detect_latency=-1)
    cfg = ControllerConfig(d_track=(1.0, 2.0, 3.0))
    assert ControllerConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.interim_steps == 100


def test_map_variants_need_a_predictor():
    sc = build_scenario(ScenarioConfig())
    with pytest.raises(ValueError):
        RSController(sc.controller_robots, sc.task, sc.controller, None)


# --- interim blend ----------------------------------------------------------------


@given(st.integers(0, 10_000), st.integers(1, 500))
def test_gamma_endpoints_exact(k0, n):
    assert smooth_gamma(k0, k0, n) == 0.0
    assert smooth_gamma(k0 + n, k0, n) == 1.0
    assert smooth_gamma(k0 - 1, k0, n) == 0.0 and smooth_gamma(k0 + n + 7, k0, n) == 1.0
    if n % 2 == 0:
        assert smooth_gamma(k0 + n // 2, k0, n) == 0.5


@pytest.mark.parametrize("kind", [HIT_AND_PUSH, DUAL_ARM_GRAB])
def test_interim_contract(kind):
    sc, ctl = make_controller(kind)
    qs, dqs = contact_state(sc)
    sensed = ctl.sense(qs, dqs)
    ctl.state.step = 50
    ctl._enter_contact_mode(sensed, INTERIM)
    n = ctl.config.interim_steps

    # at the switch: integrated point equals the measured one, so only feedforward remains
    for i, t in enumerate(sensed.terms):
        P = sc.task.ante[i]
        part = ctl.interim_ante_part(i, t)
        a = fields.ante_acceleration(t.p, P)
        ang = ctl._K[2] * fields.wrap(P.theta_d - t.theta)
        np.testing.assert_array_equal(part, [a[0], a[1], ang])
    # no velocity feedback anywhere at gamma = 0
    still = [np.zeros_like(d) for d in dqs]
    t0 = ctl.targets(qs, dqs, sensed)[0]
    t_still = ctl.targets(qs, still, ctl.sense(qs, still))[0]
    for a, b in zip(t0, t_still):
        np.testing.assert_allclose(a, b, atol=1e-9)

    ctl.state.step = 50 + n
    interim_end = ctl.targets(qs, dqs, sensed)[0]
    ctl.state.mode = POST
    post = ctl.targets(qs, dqs, sensed)[0]
    for a, b in zip(interim_end, post):
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    ctl.state.mode = INTERIM
    ctl.state.step = 50 + n // 2
    half = ctl.targets(qs, dqs, sensed)[0]
    for i, t in enumerate(sensed.terms):
        ante = ctl.interim_ante_part(i, t)
        post_i = ctl.post_target(i, t, sensed.Mb[i], sensed.twist[i], sc.task.infer_object_position([s.p for s in sensed.terms]))[0]
        np.testing.assert_allclose(half[i], 0.5 * ante + 0.5 * post_i, atol=1e-12)


def test_post_reference_at_switch_is_prediction():
    sc, ctl = make_controller()
    qs, dqs = contact_state(sc)
    sensed = ctl.sense(qs, dqs)
    ctl._enter_contact_mode(sensed, INTERIM)
    ref = fields.post_velocity(ctl.state.p_o_plus, ctl.state.post_params)
    np.testing.assert_array_equal(ref, ctl.state.v_o_est_plus)


# --- ante and synchronisation ------------------------------------------------------


def test_on_streamline_target_is_pure_feedforward():
    sc, ctl = make_controller()
    qs, _ = contact_state(sc)
    model = sc.controller_robots[0]
    t = arm_terms(model, qs[0], np.zeros(4))
    P = sc.task.ante[0]
    # move with the field and the orientation reference; inside r_min_a the field is constant
    ref, acc = fields.ante_refs(t.p, t.theta, P)
    twist = np.array([ref.v[0], ref.v[1], ref.omega])
    target, _ = ctl.ante_target(0, t, twist)
    np.testing.assert_allclose(target, [acc.a[0], acc.a[1], acc.alpha_ang], atol=1e-12)
    np.testing.assert_array_equal(acc.a, np.zeros(2))


def test_mirror_is_an_involution():
    sc, _ = make_controller(DUAL_ARM_GRAB)
    Ts = sc.task.mirror
    np.testing.assert_allclose(Ts @ Ts, np.eye(2), rtol=0, atol=1e-14)


def test_mirrored_state_has_zero_sync_error():
    sc, ctl = make_controller(DUAL_ARM_GRAB)
    qs, dqs = contact_state(sc)
    sensed = ctl.sense(qs, dqs)
    targets, scale = ctl.sync_errors_terms(sensed)
    assert scale < 1e-12
    for t in targets:
        np.testing.assert_allclose(t, np.zeros(2), atol=1e-9)


# --- post mode --------------------------------------------------------------------


def test_post_target_zero_at_goal_at_rest():
    sc, ctl = make_controller(variant="no_rs")
    model = sc.controller_robots[0]
    qs, _ = contact_state(sc)
    t = arm_terms(model, qs[0], np.zeros(4))
    # pretend the object already sits at the goal
    p_o = sc.task.p_of
    Mb = t.M + np.diag(model.motor_inertia)
    target, ref = ctl.post_target(0, t, Mb, np.zeros(3), p_o)
    np.testing.assert_allclose(ref, np.zeros(3), atol=1e-12)
    np.testing.assert_allclose(target, np.zeros(3), atol=1e-12)


def test_static_grab_target_is_clamping_force_mapped_by_lambda():
    sc, ctl = make_controller(DUAL_ARM_GRAB, variant="no_rs")
    qs, _ = contact_state(sc)
    for i, model in enumerate(sc.controller_robots):
        t = arm_terms(model, qs[i], np.zeros(4))
        Mb = t.M + np.diag(model.motor_inertia)
        target, _ = ctl.post_target(i, t, Mb, np.zeros(3), sc.task.p_of)
        f = ctl.feedforward_wrench(i, np.zeros(2))
        np.testing.assert_allclose(f[:2] @ sc.task.faces[i].tangent, 0.0, atol=1e-12)
        assert f[:2] @ sc.task.faces[i].normal < 0.0
        np.testing.assert_allclose(target, t.J @ np.linalg.solve(Mb, t.J.T) @ f, atol=1e-10)


@pytest.mark.parametrize("obj", ["juice", "catfood", "parcel"])
def test_friction_feedforward_shrinks_steady_slide_feedback(obj):
    from tirs.harness import _simulate

    class NoFeedforward(RSController):
        def feedforward_wrench(self, i, v_ref):
            return np.zeros(3)

    cfg = ScenarioConfig(object_name=obj, init_noise_rad=0.0)
    with_ff = run_rollout(cfg)
    sc = build_scenario(cfg)
    without = _simulate(sc, NoFeedforward(sc.controller_robots, sc.task, sc.controller, impact_dataset_for(cfg).predictor()))
    # steady slide: post mode, settled, and still inside the constant-velocity core of the field
    k = np.arange(len(with_ff))
    core = np.linalg.norm(with_ff.obj_pose[:, :2] - with_ff.p_o_plus, axis=1) < sc.task.r_min_p
    win = (k >= with_ff.post_step + 100) & core
    assert win.sum() > 100

    def feedback(log):
        return np.linalg.norm(log.ee_twist[win, 0, :2] - log.ref_twist[win, 0, :2], axis=1).mean()

    assert feedback(with_ff) < 0.05 * feedback(without)


# --- detection and mode sequences -------------------------------------------------


def test_free_motion_never_flags():
    det = ImpactDetector(1, 0.05, 0)
    for k in range(500):
        dq = np.array([0.3 * np.sin(0.003 * k), 0.1, -0.2, 0.0])
        assert det.update(k, [dq], [True]) == [False]


def test_detector_latency_and_proximity_gate():
    hist = [[np.zeros(2)]] * 3 + [[np.array([0.2, 0.0])]] * 4
    assert detect_impacts(hist, [True], latency=3) == [True]
    assert detect_impacts(hist, [True], latency=4) == [False]
    assert detect_impacts(hist, [False], latency=0) == [False]
    with pytest.raises(ValueError):
        detect_impacts(hist[:1], [True])


def test_flag_follows_impact_within_latency():
    cfg = ScenarioConfig(init_noise_rad=0.0)
    log = run_rollout(cfg)
    jumps = np.linalg.norm(np.diff(log.dq[:, 0], axis=0), axis=1)
    impact = int(np.argmax(jumps)) + 1
    latency = build_scenario(cfg).controller.detect_latency
    assert log.contact_step[0] <= impact
    assert log.flag_step[0] == impact
    assert log.report_step[0] - impact <= latency + 1


def test_right_robot_flags_first_under_positive_displacement():
    log = run_rollout(ScenarioConfig(kind=DUAL_ARM_GRAB, displacement_m=0.03, variant="no_rs", init_noise_rad=0.0))
    assert log.flag_step[1] < log.flag_step[0]


def test_single_arm_proposed_mode_timeline():
    log = run_rollout(ScenarioConfig(init_noise_rad=0.0))
    k0 = log.switch_step
    assert k0 == log.report_step[0]
    assert np.all(log.mode[:k0] == 0)
    assert np.all(log.mode[k0:k0 + 100] == 1)
    assert np.all(log.mode[k0 + 100:] == 2)


def test_dual_arm_no_rs_waits_for_both_flags():
    log = run_rollout(ScenarioConfig(kind=DUAL_ARM_GRAB, displacement_m=0.03, variant="no_rs", init_noise_rad=0.0))
    assert log.switch_step == max(log.report_step)
    assert np.all(log.mode[:log.switch_step] == 0)
    assert np.all(log.mode[log.switch_step:] == 2)
    assert log.mode_sequence() == ["ante", "post"]


def test_no_contact_stays_ante():
    sc, ctl = make_controller()
    world = sc.world0
    for _ in range(300):
        out = ctl.step(world.q, world.dq)
        world = step(world, sc.system, out.torques, sc.controller.dt)
        assert out.mode == ANTE
    assert ctl.state.switch_step is None


def test_torques_follow_equation_of_motion():
    sc, ctl = make_controller()
    out = ctl.step(sc.world0.q, sc.world0.dq)
    model = sc.controller_robots[0]
    t = arm_terms(model, sc.world0.q[0], sc.world0.dq[0])
    np.testing.assert_allclose(out.torques[0], (t.M + np.diag(model.motor_inertia)) @ out.qdd + t.h, atol=1e-12)
