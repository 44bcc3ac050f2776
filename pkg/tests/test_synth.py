import numpy as np
import pytest

from conftest import paced_spec
from demoreplay.exceptions import InputError
from demoreplay.markers import register_rigid
from demoreplay.se3 import Pose, rot_x, rot_z, so3_log
from demoreplay.synth import (
    SynthSpec,
    default_template,
    demo_waypoints,
    gen_bundle,
    gen_marker_frames,
    gen_paced_trials,
    gen_pose_trajectory,
    gen_replay_wrenches,
    gen_wrench_series,
    min_jerk,
)

TPL = default_template()


def test_spec_validation():
    wp = [(0.0, Pose.identity(), 0.0), (1.0, Pose.identity(), 0.0)]
    with pytest.raises(InputError):
        SynthSpec(wp[:1])
    with pytest.raises(InputError):
        SynthSpec(wp[::-1])
    with pytest.raises(InputError):
        SynthSpec(wp, noise_sigma_pos=-1.0)
    with pytest.raises(InputError):
        SynthSpec(wp, rate=0.0)
    with pytest.raises(InputError):
        SynthSpec(wp, n_trials=0)


def test_min_jerk_profile():
    assert min_jerk(0.0) == 0.0 and min_jerk(1.0) == 1.0 and min_jerk(0.5) == 0.5
    s = np.linspace(0, 1, 11)
    assert np.all(np.diff(min_jerk(s)) > 0)


def test_identical_waypoints_give_constant_trajectory():
    p = Pose(rot_x(0.4), [0.1, 0.2, 0.3])
    traj = gen_pose_trajectory(SynthSpec([(0.0, p, 0.05), (2.0, p, 0.05)], rate=50))
    assert len(traj) == 101
    assert np.all(traj.pos == p.pos) and np.all(traj.aperture == 0.05)
    assert np.allclose(traj.rots, p.rot, atol=1e-15)


def test_waypoints_are_hit_exactly():
    wps = demo_waypoints(duration=10.0)
    traj = gen_pose_trajectory(SynthSpec(wps, rate=10))
    for t, pose, d in wps:
        i = int(np.flatnonzero(traj.times == t)[0])
        assert np.array_equal(traj.pos[i], pose.pos)
        assert np.array_equal(traj.rots[i], pose.rot)
        assert traj.aperture[i] == d


def test_midpoint_velocity_matches_quintic():
    a, b = Pose.identity(), Pose(np.eye(3), [0.2, -0.1, 0.05])
    T = 2.0
    traj = gen_pose_trajectory(SynthSpec([(0.0, a, 0.0), (T, b, 0.0)], rate=1000))
    mid = int(np.flatnonzero(traj.times == 1.0)[0])
    v = (traj.pos[mid + 1] - traj.pos[mid - 1]) / (2e-3)
    assert np.allclose(v, 15 / 8 * (b.pos - a.pos) / T, rtol=1e-5)
    assert np.allclose(traj.pos[1] - traj.pos[0], 0, atol=1e-9)


def test_rotation_follows_geodesic():
    a, b = Pose(np.eye(3), np.zeros(3)), Pose(rot_z(1.2), np.zeros(3))
    traj = gen_pose_trajectory(SynthSpec([(0.0, a, 0.0), (1.0, b, 0.0)], rate=20))
    angles = np.array([so3_log(r)[2] for r in traj.rots])
    assert np.allclose(angles, 1.2 * min_jerk(traj.times), atol=1e-12)


def test_noiseless_markers_round_trip():
    traj = gen_pose_trajectory(SynthSpec(demo_waypoints(duration=5.0), rate=20))
    for i, fr in enumerate(gen_marker_frames(traj, TPL)):
        pose, rms = register_rigid(TPL, fr)
        assert pose.allclose(traj.pose(i), 1e-12) and rms < 1e-12


def test_dropout_leaving_three_markers_still_registers():
    traj = gen_pose_trajectory(SynthSpec(demo_waypoints(duration=5.0), rate=20))
    frames = gen_marker_frames(traj, TPL, dropout=0.3, rng=np.random.default_rng(3),
                               finger_markers=False)
    three = 0
    for i, fr in enumerate(frames):
        if len(fr.points) == 3:
            three += 1
            pose, _ = register_rigid(TPL, fr)
            assert pose.allclose(traj.pose(i), 1e-9)
    assert three > 10


def test_registration_error_scales_with_marker_noise():
    sigma = 1e-3
    traj = gen_pose_trajectory(SynthSpec(demo_waypoints(duration=20.0), rate=100))
    frames = gen_marker_frames(traj, TPL, sigma=sigma, rng=np.random.default_rng(7))
    err = np.array([np.linalg.norm(register_rigid(TPL, fr)[0].pos - traj.pos[i])
                    for i, fr in enumerate(frames)])
    assert np.sqrt(np.mean(err ** 2)) < 3 * sigma / np.sqrt(len(TPL.labels))


def test_paced_trials_budget_and_identity():
    trials = gen_paced_trials(paced_spec())
    assert len(trials) == 4
    assert sum(tr.duration for tr in trials) == pytest.approx(100.0, abs=1e-12)
    assert sum(len(tr) for tr in trials) == 4 * 2501
    assert not np.array_equal(trials[0].pos, trials[1].pos)
    quiet = gen_paced_trials(SynthSpec(demo_waypoints(duration=25.0), n_trials=3, seed=9))
    for tr in quiet[1:]:
        assert np.array_equal(tr.pos, quiet[0].pos) and np.array_equal(tr.rots, quiet[0].rots)


def test_jitter_keeps_shared_endpoints():
    spec = SynthSpec(demo_waypoints(duration=25.0), n_trials=4, trial_jitter=2.0, seed=1)
    trials = gen_paced_trials(spec)
    wp0, wp_end = spec.waypoints[0][1], spec.waypoints[-1][1]
    for tr in trials:
        assert np.array_equal(tr.times, spec.times)
        assert np.array_equal(tr.pos[0], wp0.pos) and np.array_equal(tr.pos[-1], wp_end.pos)


def test_seed_determinism():
    spec = paced_spec(rate=20.0, seed=5)
    a, b = gen_bundle(spec, n_replays=3), gen_bundle(spec, n_replays=3)
    for ta, tb in zip(a.trials, b.trials):
        assert np.array_equal(ta.pos, tb.pos) and np.array_equal(ta.aperture, tb.aperture)
    for fa, fb in zip(a.frames[2], b.frames[2]):
        assert fa.t == fb.t and all(np.array_equal(fa.points[k], fb.points[k]) for k in fa.points)
    assert np.array_equal(a.demo_wrench.wrench, b.demo_wrench.wrench)
    for wa, wb in zip(a.replay_wrenches, b.replay_wrenches):
        assert np.array_equal(wa.wrench, wb.wrench)
    c = gen_bundle(paced_spec(rate=20.0, seed=6), n_replays=0)
    assert not np.array_equal(a.trials[0].pos, c.trials[0].pos) and c.replay_wrenches == []


def test_wrench_fixtures():
    t = np.linspace(0, 10, 1001)
    w = gen_wrench_series(t, tz_peak=2.0, t_twist=7.0)
    assert w.frame == "R" and np.argmax(w.torque[:, 2]) == 700
    assert w.torque[700, 2] == pytest.approx(2.0)
    replays = gen_replay_wrenches(w, 5, seed=1, spread=0.5, noise=0.0)
    assert len(replays) == 5
    peaks = np.array([r.torque[:, 2].max() for r in replays])
    assert np.all(peaks >= 0.5 * 2.0 - 1e-9) and np.all(peaks <= 1.25 * 2.0 + 1e-9)
    assert len(set(peaks.round(12))) == 5
