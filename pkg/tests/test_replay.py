import numpy as np
import pytest

from demoreplay.exceptions import (
    DimensionMismatch,
    FrameMismatch,
    InputError,
    NoOverlap,
    TorqueLimitExceeded,
    WindowOutOfRange,
)
from demoreplay.kinematics import default_robot
from demoreplay.replay import (
    ReplayConfig,
    WrenchSeries,
    classify_success,
    haptic_mismatch,
    impedance_torque,
    peak_tz,
    simulate_replay,
    torque_limit_filter,
)
from demoreplay.trajectory import JointTrajectory

ARM = default_robot()


def hold(q, duration=1.0, n=11):
    t = np.linspace(0, duration, n)
    return JointTrajectory(t, np.repeat(np.asarray(q, float)[None], n, 0))


def series(t, force=None, torque=None, frame="R"):
    z = np.zeros((len(t), 3))
    return WrenchSeries(t, z if force is None else force, z if torque is None else torque, frame)


def test_config_validation():
    with pytest.raises(InputError):
        ReplayConfig(stiffness=0.0)
    with pytest.raises(InputError):
        ReplayConfig(damping_ratio=0.0)
    with pytest.raises(InputError):
        ReplayConfig(delta_q=[0.25] + [0.0] * 6)
    with pytest.raises(InputError):
        ReplayConfig(tau_policy="ignore")
    with pytest.raises(DimensionMismatch):
        ReplayConfig(stiffness=[1.0, 2.0]).gains(7)
    k, b, c, dq = ReplayConfig(stiffness=100.0, damping_ratio=0.5).gains(3)
    assert np.array_equal(k, [100.0] * 3) and np.array_equal(c, [10.0] * 3) and np.array_equal(b, c)
    assert np.array_equal(dq, np.zeros(3))


def test_impedance_examples():
    cfg = ReplayConfig(stiffness=10.0)
    q = np.zeros(7)
    e = np.zeros(7)
    e[2] = 0.1
    tau = impedance_torque(cfg, e, q, np.zeros(7))
    assert tau[2] == pytest.approx(1.0, abs=1e-15) and np.count_nonzero(tau) == 1
    assert np.all(impedance_torque(cfg, np.full(7, 0.05), q, np.zeros(7)) > 0)
    dq = np.linspace(-0.1, 0.1, 7)
    cfg = ReplayConfig(stiffness=np.arange(1.0, 8.0), delta_q=dq)
    q_cmd = np.random.default_rng(0).normal(size=7)
    assert np.array_equal(impedance_torque(cfg, q_cmd, q_cmd + dq, np.zeros(7)), np.zeros(7))
    with pytest.raises(DimensionMismatch):
        impedance_torque(cfg, np.zeros(6), q, q)


def test_small_error_linearity(rng):
    cfg = ReplayConfig(stiffness=rng.uniform(10, 100, 7))
    # an error on a 2**-20 grid doubles without rounding
    e = np.ldexp(np.round(np.ldexp(1e-3 * rng.normal(size=7), 20)), -20)
    t1 = impedance_torque(cfg, e, np.zeros(7), np.zeros(7))
    t2 = impedance_torque(cfg, 2 * e, np.zeros(7), np.zeros(7))
    assert np.array_equal(t2, 2 * t1)
    assert np.array_equal(torque_limit_filter(t1, ARM.tau_lim)[0], t1)


def test_torque_filter_examples():
    lim = ARM.tau_lim
    tau = 0.5 * lim
    out, hit = torque_limit_filter(tau, lim)
    assert np.array_equal(out, tau) and hit == []
    tau = np.zeros(7)
    tau[3] = 2 * lim[3]
    out, hit = torque_limit_filter(tau, lim)
    assert out[3] == lim[3] and hit == [3]
    tau[5] = -3 * lim[5]
    assert torque_limit_filter(tau, lim)[0][5] == -lim[5]
    with pytest.raises(TorqueLimitExceeded) as info:
        torque_limit_filter(tau, lim, "fault", t=1.25)
    assert info.value.joint == 3 and info.value.time == 1.25
    assert "joint 4" in str(info.value) and "t=1.25" in str(info.value)
    with pytest.raises(InputError):
        torque_limit_filter(tau, -lim)


def test_equilibrium_has_zero_motion_and_torque():
    dq = np.array([0.01, -0.02, 0.0, 0.03, 0.0, -0.01, 0.005])
    cfg = ReplayConfig(stiffness=500.0, delta_q=dq)
    res = simulate_replay(ARM, cfg, hold(ARM.q_home))
    assert np.array_equal(res.torque, np.zeros_like(res.torque))
    assert np.array_equal(res.joint_log.states, np.repeat((ARM.q_home + dq)[None], len(res.times), 0))
    assert res.clamp_events == []


def fit_time_constant(times, err):
    sel = (err > 1e-3 * err[0])
    slope = np.polyfit(times[sel], np.log(err[sel]), 1)[0]
    return -1.0 / slope


@pytest.mark.parametrize("stiffness,ratio", [(100.0, 1.0), (400.0, 0.7), (50.0, 2.0)])
def test_step_response_time_constant(stiffness, ratio):
    cfg = ReplayConfig(stiffness=stiffness, damping_ratio=ratio)
    tc = cfg.time_constant()[0]
    q0 = ARM.q_home.copy()
    q0[1] -= 0.1
    res = simulate_replay(ARM, cfg, hold(ARM.q_home, duration=6 * tc), q0=q0)
    err = ARM.q_home[1] - res.joint_log.states[:, 1]
    assert np.all(np.diff(err) < 0) and np.all(err > 0)
    assert fit_time_constant(res.times, err) == pytest.approx(tc, rel=0.02)
    # the 63% point of the exponential
    t63 = np.interp(-np.exp(-1.0), -err / err[0], res.times)
    assert t63 == pytest.approx(tc, rel=0.02)
    assert np.all(np.abs(res.torque) <= ARM.tau_lim)


def test_clamped_replay_converges_within_limits():
    cfg = ReplayConfig(stiffness=2000.0, tau_policy="clamp")
    q0 = ARM.q_home + 0.1
    res = simulate_replay(ARM, cfg, hold(ARM.q_home, duration=2.0), q0=q0)
    assert res.clamp_events
    assert np.all(np.abs(res.torque) <= ARM.tau_lim)
    assert np.max(np.abs(res.joint_log.states[-1] - ARM.q_home)) < 1e-6
    assert {j for _, j in res.clamp_events} == set(range(7))
    with pytest.raises(TorqueLimitExceeded) as info:
        simulate_replay(ARM, ReplayConfig(stiffness=2000.0, tau_policy="fault"),
                        hold(ARM.q_home, duration=2.0), q0=q0)
    assert info.value.time == 0.0


def moving_command(rng, n=201, dt=1e-3, scale=0.05):
    t = dt * np.arange(n)
    states = ARM.q_home + np.cumsum(rng.normal(scale=scale * np.sqrt(dt), size=(n, 7)), axis=0)
    return JointTrajectory(t, states)


def test_offset_consistency_is_exact(rng):
    dq = rng.uniform(-0.15, 0.15, 7)
    cmd = moving_command(rng)
    a = simulate_replay(ARM, ReplayConfig(stiffness=800.0, delta_q=dq), cmd)
    shifted = JointTrajectory(cmd.times, cmd.states + dq)
    b = simulate_replay(ARM, ReplayConfig(stiffness=800.0, delta_q=None), shifted)
    assert np.array_equal(a.joint_log.states, b.joint_log.states)
    assert np.array_equal(a.torque, b.torque)
    assert a.clamp_events == b.clamp_events


def test_offset_consistency_between_samples_with_dyadic_values():
    dt = 2.0 ** -10
    t = np.arange(0, 65) * 2.0 ** -6
    k = np.arange(65)[:, None]
    states = ARM.q_home.round(3) + 2.0 ** -8 * np.sin(k + np.arange(7)).round(2)
    states = np.ldexp(np.round(np.ldexp(states, 12)), -12)
    dq = np.ldexp(np.round(np.ldexp(np.linspace(-0.1, 0.1, 7), 10)), -10)
    cmd = JointTrajectory(t, states)
    a = simulate_replay(ARM, ReplayConfig(stiffness=300.0, delta_q=dq, dt=dt), cmd)
    b = simulate_replay(ARM, ReplayConfig(stiffness=300.0, dt=dt), JointTrajectory(t, states + dq))
    assert np.array_equal(a.joint_log.states, b.joint_log.states)
    assert np.array_equal(a.torque, b.torque)


@pytest.mark.parametrize("policy", ["clamp", "fault"])
def test_compiled_loop_matches_reference(rng, policy):
    cmd = moving_command(rng, n=401, scale=2.0)
    cfg = ReplayConfig(stiffness=np.linspace(200, 2000, 7), damping_ratio=0.8,
                       delta_q=rng.uniform(-0.1, 0.1, 7), tau_policy=policy)
    q0 = ARM.q_home + rng.normal(scale=0.01, size=7)
    if policy == "fault":
        faults = []
        for compiled in (True, False):
            with pytest.raises(TorqueLimitExceeded) as info:
                simulate_replay(ARM, cfg, cmd, q0=q0, compiled=compiled)
            faults.append(info.value)
        a, b = faults
        assert (a.joint, a.time) == (b.joint, b.time)
        assert a.torque == pytest.approx(b.torque, rel=1e-12)
        return
    a = simulate_replay(ARM, cfg, cmd, q0=q0, compiled=True)
    b = simulate_replay(ARM, cfg, cmd, q0=q0, compiled=False)
    assert a.clamp_events and a.clamp_events == b.clamp_events
    assert np.allclose(a.joint_log.states, b.joint_log.states, rtol=1e-12, atol=1e-13)
    assert np.allclose(a.torque, b.torque, rtol=1e-12, atol=1e-13)


def test_gripper_command_and_logging(rng):
    cmd = moving_command(rng, n=101, dt=0.01)
    grip = np.linspace(0.08, 0.02, 101)
    res = simulate_replay(ARM, ReplayConfig(), cmd, grip, log_stride=10)
    assert len(res.times) == 101
    assert np.allclose(res.gripper, grip, atol=1e-15)
    assert np.allclose(res.commanded.states, cmd.states, atol=1e-12)
    assert res.to_array().shape == (101, 1 + 3 * 7 + 1)
    with pytest.raises(DimensionMismatch):
        simulate_replay(ARM, ReplayConfig(), cmd, grip[:-1])


def test_haptic_identity_and_offset():
    t = np.linspace(0, 2, 201)
    f = np.column_stack([np.sin(t), np.cos(3 * t), t])
    tq = np.column_stack([t ** 2, -t, np.sin(5 * t)])
    demo = series(t, f, tq)
    m = haptic_mismatch(demo, series(t, f, tq))
    assert np.array_equal(m.diff, np.zeros((201, 6))) and np.all(m.rms == 0)
    m = haptic_mismatch(series(t, f + [1, 0, 0], tq), demo)
    assert np.allclose(m.diff, np.tile([1, 0, 0, 0, 0, 0], (201, 1)), atol=1e-15)
    assert m.rms[0] == pytest.approx(1.0, abs=1e-15) and m.peak[0] == pytest.approx(1.0)
    assert set(m.summary()) == {f"{k}_{a}" for k in ("rms", "peak")
                                for a in ("fx", "fy", "fz", "tx", "ty", "tz")}


def test_sinusoidal_discrepancy_rms():
    t = np.linspace(0, 4, 4001)
    amp = 0.7
    demo = series(t)
    replay = series(t, torque=np.column_stack([0 * t, 0 * t, amp * np.sin(2 * np.pi * 1.5 * t)]))
    m = haptic_mismatch(demo, replay)
    assert m.rms[5] == pytest.approx(amp / np.sqrt(2), rel=0.01)
    assert np.all(m.rms[:5] == 0)


def test_double_rate_resampling_is_consistent(rng):
    t = np.linspace(0, 1, 51)
    w = rng.normal(size=(51, 6))
    demo = series(t, w[:, :3], w[:, 3:])
    t2 = np.linspace(0, 1, 101)
    fine = demo.resample(t2)
    m = haptic_mismatch(demo, series(t2, fine[:, :3], fine[:, 3:]))
    assert np.max(np.abs(m.diff)) <= 1e-12


def test_haptic_errors_and_partial_overlap():
    t = np.linspace(0, 1, 11)
    with pytest.raises(FrameMismatch):
        haptic_mismatch(series(t), series(t, frame="tool"))
    with pytest.raises(NoOverlap):
        haptic_mismatch(series(t), series(t + 2.0))
    m = haptic_mismatch(series(t), series(t + 0.5))
    assert m.times[0] == 0.5 and m.times[-1] == 1.0


def test_classify_truth_table():
    t = np.linspace(0, 10, 1001)
    thr = 1.0

    def pulse(center, height):
        tz = height * np.exp(-0.5 * ((t - center) / 0.2) ** 2)
        return series(t, torque=np.column_stack([0 * t, 0 * t, tz]))

    assert not classify_success(series(t), thr, (0, 10))
    assert classify_success(pulse(5.0, 2 * thr), thr, (4, 6))
    assert not classify_success(pulse(8.0, 2 * thr), thr, (4, 6))
    assert classify_success(pulse(5.0, -2 * thr), thr, (4, 6))
    assert not classify_success(pulse(5.0, 0.5 * thr), thr, (4, 6))
    assert peak_tz(pulse(5.0, 3.0), (5.0, 5.0)) == pytest.approx(3.0)
    for window in [(-1, 5), (5, 11), (6, 4)]:
        with pytest.raises(WindowOutOfRange):
            classify_success(pulse(5.0, 2.0), thr, window)


def test_wrench_validation():
    with pytest.raises(DimensionMismatch):
        WrenchSeries([0, 1], np.zeros((3, 3)), np.zeros((2, 3)))
    with pytest.raises(InputError):
        WrenchSeries([0, 1], np.zeros((2, 3)), np.zeros((2, 3)), "")
    with pytest.raises(InputError):
        WrenchSeries([1, 0], np.zeros((2, 3)), np.zeros((2, 3)))
