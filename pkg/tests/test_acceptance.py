"""One test per acceptance criterion; each logs a PASS/FAIL line for the run summary."""
import time

import numpy as np

from conftest import record
from demoreplay.base_optimizer import GridSpec, average_manipulability, grid_search, trajectory_average
from demoreplay.cli import COMMANDS, main
from demoreplay.demo_stats import GaussianMixture, build_dataset, em_fit, gmr, regress_trajectory
from demoreplay.kinematics import cost_h, default_robot, fk, grad_h, jacobian, manipulability
from demoreplay.markers import filter_trajectory, register_rigid
from demoreplay.pmp import PmpGains, pmp_step, solve_trajectory, static_demo
from demoreplay.replay import ReplayConfig, WrenchSeries, classify_success, haptic_mismatch, simulate_replay
from demoreplay.se3 import Pose, rot_z, so3_log
from demoreplay.synth import (
    FINGER_LABELS,
    SynthSpec,
    default_template,
    demo_waypoints,
    gen_marker_frames,
    gen_paced_trials,
    gen_pose_trajectory,
)
from demoreplay.trajectory import JointTrajectory
from oracles import fd, fd_jacobian, gram_det_svd, random_q

ARM = default_robot()
TPL = default_template()


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def test_ac1_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    qs = [random_q(ARM, rng) for _ in range(100)]
    start = time.perf_counter()
    jacs = [jacobian(ARM, q) for q in qs]
    elapsed = time.perf_counter() - start
    worst = max(rel(j, fd_jacobian(ARM, q)) for j, q in zip(jacs, qs))
    ok = worst < 1e-5 and elapsed < 5.0
    record("AC1 Jacobian vs FD", ok, f"max rel {worst:.2e} over 100 configs, {elapsed:.3f} s")
    assert ok


def test_ac2_gradient_identity_and_singular_path():
    rng = np.random.default_rng(2)
    worst, n = 0.0, 0
    while n < 100:
        q = random_q(ARM, rng)
        if manipulability(jacobian(ARM, q)) < 1e-6:
            continue
        worst = max(worst, rel(grad_h(ARM, q), fd(lambda x: cost_h(ARM, x), q, 1e-5)))
        n += 1
    # straighten the elbow into the stretched singularity
    q_end = np.array([0.3, -0.8, 0.2, 0.0, 0.1, 0.9, 0.4])
    q_start = q_end - np.array([0, 0, 0, 1.2, 0, 0, 0])
    norms = np.array([np.linalg.norm(grad_h(ARM, q_start + s * (q_end - q_start)))
                      for s in np.linspace(0, 1, 201)])
    vanishes = norms[-1] < 1e-9 * norms.max()
    continuous = np.max(np.abs(np.diff(norms))) < 0.05 * norms.max()
    tail = np.all(np.diff(norms[-20:]) < 0)
    ok = worst < 1e-4 and vanishes and continuous and tail
    record("AC2 grad_h vs FD and singular path", ok,
           f"max rel {worst:.2e}; |grad| at singularity {norms[-1]:.1e} (peak {norms.max():.2e})")
    assert ok


def test_ac3_manipulability_average():
    demo = static_demo(fk(ARM, ARM.q_home), np.linspace(0, 2, 41))
    score = average_manipulability(ARM, Pose.identity(), demo, ARM.q_home, PmpGains(lam=0.0))
    point = manipulability(jacobian(ARM, ARM.q_home))
    const_err = abs(score - point)
    two = trajectory_average([0.5, 2.0], [0.3, 0.9])
    hand = (0.3 + 0.9) / 2
    ok = const_err <= 1e-12 and two == hand
    record("AC3 trapezoid manipulability", ok, f"constant-demo error {const_err:.1e}; two-sample {two} == {hand}")
    assert ok


def brute_force(demo, grid):
    scores = []
    for base in grid.poses():
        try:
            traj = solve_trajectory(ARM, ARM.q_home, demo, base=base)
        except Exception:
            scores.append(-np.inf)
            continue
        vals = np.array([gram_det_svd(jacobian(ARM, q)) for q in traj.states])
        t = traj.times
        area = sum(0.5 * (vals[i] + vals[i + 1]) * (t[i + 1] - t[i]) for i in range(len(t) - 1))
        scores.append(area / (t[-1] - t[0]))
    return np.array(scores)


def test_ac4_base_grid_search():
    base = Pose.planar(0.3, -0.2)
    demo = gen_pose_trajectory(SynthSpec(demo_waypoints(base=base, duration=5.0), rate=10))
    grid = GridSpec((-1.0, 1.0), (-1.0, 1.0), 10, 10)
    best1, scen1 = grid_search(ARM, demo, grid, workers=1)
    best8, scen8 = grid_search(ARM, demo, grid, workers=8)
    ref = brute_force(demo, grid)
    k = int(np.argmax(ref))
    same_argmax = (best1.x, best1.y) == grid.points()[k]
    same_workers = [s.score for s in scen1] == [s.score for s in scen8] and \
        (best1.x, best1.y) == (best8.x, best8.y)
    ok = same_argmax and same_workers and np.isfinite(ref).sum() > 1
    record("AC4 base grid argmax", ok,
           f"argmax ({best1.x:.3f}, {best1.y:.3f}) vs brute force {grid.points()[k]}; "
           f"{np.isfinite(ref).sum()}/100 reachable; workers 1 == 8: {same_workers}")
    assert ok


def test_ac5_pmp_tracking():
    demo = gen_pose_trajectory(SynthSpec(demo_waypoints(duration=25.0), rate=100))
    traj = solve_trajectory(ARM, ARM.q_home, demo)
    gains = PmpGains(lam=0.0)
    rng = np.random.default_rng(5)
    fixed = all(np.array_equal(pmp_step(ARM, q, fk(ARM, q), gains), q)
                for q in (random_q(ARM, rng) for _ in range(20)))
    ok = traj.err_lin[-1] < 1e-3 and traj.err_ang[-1] < 0.01 and fixed
    record("AC5 PMP tracking", ok,
           f"final {traj.err_lin[-1]:.2e} m / {traj.err_ang[-1]:.2e} rad; fixed point exact: {fixed}")
    assert ok


def pos_rms(a, b):
    return np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1)))


def test_ac6_marker_round_trip():
    truth = gen_pose_trajectory(SynthSpec(demo_waypoints(duration=25.0), rate=100))
    clean = filter_trajectory(gen_marker_frames(truth, TPL), TPL, alpha=1.0, finger_labels=FINGER_LABELS)
    lin = np.max(np.linalg.norm(clean.pos - truth.pos, axis=1))
    ang = max(np.linalg.norm(so3_log(a.T @ b)) for a, b in zip(clean.rots, truth.rots))
    ratios = {}
    # smoothing lags a moving target, so the moving case is sampled at 200 Hz
    cases = {
        "static": static_demo(Pose(rot_z(0.4), [0.3, -0.1, 0.4]), np.arange(2500) / 100.0),
        "moving@200Hz": gen_pose_trajectory(SynthSpec(demo_waypoints(duration=25.0), rate=200)),
    }
    for name, tr in cases.items():
        frames = gen_marker_frames(tr, TPL, sigma=1e-3, rng=np.random.default_rng(6))
        raw = np.array([register_rigid(TPL, fr)[0].pos for fr in frames])
        smooth = filter_trajectory(frames, TPL, alpha=0.3)
        ratios[name] = pos_rms(raw, tr.pos) / pos_rms(smooth.pos, tr.pos)
    ok = lin <= 1e-9 and ang <= 1e-9 and min(ratios.values()) >= 2.0
    record("AC6 marker round trip", ok,
           f"noiseless {lin:.1e} m / {ang:.1e} rad; RMS reduction "
           + ", ".join(f"{k} {v:.2f}x" for k, v in ratios.items()))
    assert ok


def test_ac7_gmm_gmr(paced_fit):
    spec, trials, mix, history = paced_fit
    monotone = np.min(np.diff(history)) >= -1e-9
    rng = np.random.default_rng(7)
    a = rng.normal(size=(8, 8))
    cov = a @ a.T + 0.1 * np.eye(8)
    mean = rng.normal(size=8)
    one = GaussianMixture([1.0], mean[None], cov[None])
    cond_err = 0.0
    for t in (-2.0, 0.5, 9.0):
        mu, c = gmr(one, t)
        ref_mu = mean[1:] + cov[1:, 0] / cov[0, 0] * (t - mean[0])
        ref_c = cov[1:, 1:] - np.outer(cov[1:, 0], cov[1:, 0]) / cov[0, 0]
        cond_err = max(cond_err, np.max(np.abs(mu - ref_mu)), np.max(np.abs(c - ref_c)))
    again = em_fit(build_dataset(gen_paced_trials(spec)), 16, seed=0)
    bitwise = all(np.array_equal(getattr(again, k), getattr(mix, k))
                  for k in ("weights", "means", "covariances"))
    out = regress_trajectory(mix, spec.times)
    stack = np.stack([tr.to_array()[:, 1:] for tr in trials])
    inside = ((out.mean >= stack.min(axis=0)) & (out.mean <= stack.max(axis=0))).all(axis=1).mean()
    ok = monotone and cond_err <= 1e-9 and bitwise and inside >= 0.95
    record("AC7 GMM/GMR", ok,
           f"{len(history)} EM iterations, min step {np.min(np.diff(history)):.1e}; "
           f"K=1 error {cond_err:.1e}; bit-reproducible {bitwise}; envelope {100 * inside:.1f}%")
    assert ok


def test_ac8_impedance_and_limits():
    rng = np.random.default_rng(8)
    n = 11
    hold = JointTrajectory(np.linspace(0, 1, n), np.repeat(ARM.q_home[None], n, 0))
    eq = simulate_replay(ARM, ReplayConfig(stiffness=500.0), hold)
    zero = np.array_equal(eq.torque, np.zeros_like(eq.torque))

    clamp = simulate_replay(ARM, ReplayConfig(stiffness=2000.0, tau_policy="clamp"),
                            JointTrajectory(np.linspace(0, 2, n), np.repeat(ARM.q_home[None], n, 0)),
                            q0=ARM.q_home + 0.1, log_stride=1)
    within = np.all(np.abs(clamp.torque) <= ARM.tau_lim) and len(clamp.clamp_events) > 0

    cfg = ReplayConfig(stiffness=100.0, damping_ratio=1.0)
    tc = cfg.time_constant(ARM.dof)[1]
    q0 = ARM.q_home.copy()
    q0[1] -= 0.1
    step = simulate_replay(ARM, cfg, JointTrajectory([0.0, 6 * tc], np.repeat(ARM.q_home[None], 2, 0)),
                           q0=q0, log_stride=1)
    err = ARM.q_home[1] - step.joint_log.states[:, 1]
    t63 = np.interp(-np.exp(-1.0), -err / err[0], step.times)
    tc_rel = abs(t63 - tc) / tc

    dq = rng.uniform(-0.15, 0.15, 7)
    t = 1e-3 * np.arange(201)
    states = ARM.q_home + np.cumsum(rng.normal(scale=0.05 * np.sqrt(1e-3), size=(201, 7)), axis=0)
    a = simulate_replay(ARM, ReplayConfig(stiffness=800.0, delta_q=dq), JointTrajectory(t, states))
    b = simulate_replay(ARM, ReplayConfig(stiffness=800.0), JointTrajectory(t, states + dq))
    offset = np.array_equal(a.joint_log.states, b.joint_log.states) and np.array_equal(a.torque, b.torque)

    ok = zero and within and tc_rel < 0.02 and offset
    record("AC8 impedance and limits", ok,
           f"equilibrium zero {zero}; clamp within limits {within} ({len(clamp.clamp_events)} events); "
           f"time constant error {100 * tc_rel:.2f}%; offset cancellation exact {offset}")
    assert ok


def wrench(t, torque=None):
    z = np.zeros((len(t), 3))
    return WrenchSeries(t, z, z if torque is None else torque, "R")


def test_ac9_haptic_mismatch():
    t = np.linspace(0, 4, 4001)
    rng = np.random.default_rng(9)
    w = WrenchSeries(t, rng.normal(size=(t.size, 3)), rng.normal(size=(t.size, 3)), "R")
    same = haptic_mismatch(w, w)
    identical = np.all(same.diff == 0) and np.all(same.rms == 0)
    amp = 0.7
    sine = wrench(t, np.column_stack([0 * t, 0 * t, amp * np.sin(2 * np.pi * 1.5 * t)]))
    m = haptic_mismatch(wrench(t), sine)
    sine_rel = abs(m.rms[5] - amp / np.sqrt(2)) / (amp / np.sqrt(2))

    tt = np.linspace(0, 10, 1001)

    def pulse(center, height):
        return wrench(tt, np.column_stack([0 * tt, 0 * tt, height * np.exp(-0.5 * ((tt - center) / 0.2) ** 2)]))

    # (wrench, window, expected) with threshold 1
    table = [
        (wrench(tt), (0, 10), False),
        (pulse(5.0, 2.0), (4, 6), True),
        (pulse(8.0, 2.0), (4, 6), False),
        (pulse(5.0, -2.0), (4, 6), True),
        (pulse(5.0, 0.5), (4, 6), False),
    ]
    truth = all(classify_success(w_, 1.0, win) == exp for w_, win, exp in table)
    ok = identical and sine_rel < 0.01 and truth
    record("AC9 haptic mismatch", ok,
           f"identical -> 0: {identical}; sinusoid RMS error {100 * sine_rel:.3f}%; truth table {truth}")
    assert ok


def test_ac10_end_to_end(tmp_path):
    runs, times = [], []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = {
            "gen": [], "filter": [], "gmr": [], "base": [], "solve": [],
            "replay": ["--delta-q", out / "delta_q.txt"], "report": ["--tz-threshold", 1.0],
        }
        start = time.perf_counter()
        codes = [main(["--out-dir", str(out), cmd, *map(str, argv[cmd])]) for cmd in COMMANDS]
        times.append(time.perf_counter() - start)
        files = {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
        runs.append((codes, files))
    (codes_a, files_a), (codes_b, files_b) = runs
    identical = files_a == files_b
    ok = codes_a == [0] * 7 and codes_b == [0] * 7 and identical and max(times) < 60.0
    record("AC10 end to end", ok,
           f"{' -> '.join(COMMANDS)}: {times[0]:.1f} s and {times[1]:.1f} s; "
           f"{len(files_a)} files bit-identical: {identical}")
    assert ok
