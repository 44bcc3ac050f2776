"""Command-line driver: one subcommand per pipeline stage.

Stages exchange plain files in ``--out-dir``, so each one can be rerun on its
own. Exit codes: 0 success, 2 input error, 3 numerical failure, 4 torque
limit fault.
"""

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .base_optimizer import GridSpec, grid_search, score_field
from .demo_stats import build_dataset, em_fit, regress_trajectory
from .exceptions import DemoReplayError, InputError
from .kinematics import default_robot, load_robot
from .markers import filter_trajectory
from .pmp import PmpGains, solve_trajectory
from .replay import AXES, ReplayConfig, classify_success, haptic_mismatch, peak_tz, simulate_replay
from .se3 import Pose
from .synth import FINGER_LABELS, SynthSpec, demo_waypoints, gen_bundle

COMMANDS = ("gen", "filter", "gmr", "base", "solve", "replay", "report")


def _out(args, *parts):
    return Path(args.out_dir, *parts)


def _robot(args):
    if args.robot:
        return load_robot(args.robot)
    local = _out(args, "robot.json")
    return load_robot(local) if local.is_file() else default_robot()


def _files(given, default_dir, pattern):
    if given:
        return [Path(p) for p in given]
    found = sorted(Path(default_dir).glob(pattern))
    if not found:
        raise InputError(f"no {pattern} files in {default_dir}")
    return found


def _gains(args):
    return PmpGains(k_l=args.k_l, k_r=args.k_r, lam=args.lam, dt=args.dt)


def _say(*lines):
    for line in lines:
        print(line)


# stages

def cmd_gen(args):
    model = _robot(args)
    base = Pose.planar(args.base_x, args.base_y)
    spec = SynthSpec(
        demo_waypoints(model, base, args.duration),
        noise_sigma_pos=args.noise_pos,
        noise_sigma_marker=args.noise_marker,
        rate=args.rate,
        n_trials=args.n_trials,
        trial_jitter=args.trial_jitter,
        seed=args.seed,
        dropout=args.dropout,
        trial_sigma_pos=args.trial_spread_pos,
        trial_sigma_rot=args.trial_spread_rot,
        trial_sigma_aperture=args.trial_spread_aperture,
    )
    bundle = gen_bundle(spec, n_replays=args.n_replays, wrench_rate=args.wrench_rate)
    io.write_json(_out(args, "robot.json"), model.to_dict())
    io.write_template(_out(args, "template.csv"), bundle.template)
    for i, (tr, frames) in enumerate(zip(bundle.trials, bundle.frames), 1):
        io.write_markers(_out(args, "markers", f"trial_{i:02d}.csv"), frames)
        io.write_demo(_out(args, "truth", f"trial_{i:02d}.csv"), tr)
    io.write_wrench(_out(args, "wrench", "demo.csv"), bundle.demo_wrench)
    for i, w in enumerate(bundle.replay_wrenches, 1):
        io.write_wrench(_out(args, "wrench", f"replay_{i:02d}.csv"), w)
    rng = np.random.default_rng([args.seed, 4])
    io.write_vector(_out(args, "delta_q.txt"), rng.normal(0.0, args.delta_q_sigma, model.dof))
    _say(
        f"gen: {spec.n_trials} trials of {args.duration:g} s at {args.rate:g} Hz, "
        f"{len(bundle.replay_wrenches)} replay wrench fixtures -> {args.out_dir}"
    )


def cmd_filter(args):
    template = io.read_template(args.template or _out(args, "template.csv"))
    files = _files(args.markers, _out(args, "markers"), "*.csv")
    fingers = tuple(args.finger_labels) if args.finger_labels else None
    summary = {}
    for path in files:
        demo = filter_trajectory(io.read_markers(path), template, args.alpha, fingers)
        io.write_demo(_out(args, "demos", path.name), demo)
        res = demo.residual if demo.residual is not None else np.full(len(demo), np.nan)
        io.write_table(
            _out(args, "filter", path.stem + "_residuals.csv"), ["t", "rms", "valid"],
            np.column_stack([demo.times, res, demo.valid.astype(float)]),
        )
        summary[path.stem] = {
            "frames": len(demo),
            "unregistered": int((~demo.valid).sum()),
            "mean_residual": float(np.nanmean(res)) if np.isfinite(res).any() else None,
        }
    io.write_json(_out(args, "filter", "summary.json"), summary)
    _say(f"filter: {len(files)} trial(s) -> {_out(args, 'demos')}")


def cmd_gmr(args):
    files = _files(args.demos, _out(args, "demos"), "*.csv")
    trials = [io.read_demo(p) for p in files]
    data = build_dataset(trials)
    mixture, history = em_fit(
        data, args.components, args.seed, args.reg, args.tol, args.max_iter, return_history=True
    )
    if args.n_times:
        t0 = min(tr.times[0] for tr in trials)
        t1 = max(tr.times[-1] for tr in trials)
        times = np.linspace(t0, t1, args.n_times)
    else:
        times = trials[0].times
    reg = regress_trajectory(mixture, times)
    io.write_mixture(_out(args, "mixture.json"), mixture)
    io.write_regressed(_out(args, "gmr.csv"), reg)
    rows = [np.column_stack([np.full(len(tr), i + 1), tr.to_array()]) for i, tr in enumerate(trials)]
    rows.append(np.column_stack([np.zeros(len(reg)), reg.to_array()]))
    io.write_table(_out(args, "gmr_overlay.csv"), ["trial"] + io.DEMO_HEADER, np.vstack(rows))
    io.write_json(_out(args, "gmr_summary.json"), {
        "trials": [p.name for p in files],
        "components": args.components,
        "iterations": len(history),
        "log_likelihood": float(history[-1]),
        "extrapolated": int(np.sum(reg.extrapolated)),
    })
    _say(f"gmr: K={args.components}, {len(history)} EM iterations, {len(reg)} regressed samples")


def cmd_base(args):
    model = _robot(args)
    demo = io.read_demo(args.demo or _out(args, "gmr.csv"))
    grid = GridSpec(tuple(args.grid_x), tuple(args.grid_y), args.nx, args.ny, args.z, args.yaw)
    best, scenarios = grid_search(model, demo, grid, None, _gains(args), args.workers, args.tie_tol)
    io.write_score_field(_out(args, "score_field.csv"), scenarios)
    xs, ys = grid.axes()
    io.atomic_write(
        _out(args, "score_field.svg"), io.score_svg(xs, ys, score_field(scenarios, grid), (best.x, best.y))
    )
    io.write_json(_out(args, "best_base.json"), {
        "x": best.x, "y": best.y, "z": grid.z, "yaw": grid.yaw, "score": best.score,
        "diverged": sum(s.status != "ok" for s in scenarios), "points": len(scenarios),
    })
    _say(f"base: best s* = ({best.x:.4g}, {best.y:.4g}), average manipulability {best.score:.6g}")


def _read_base(path):
    cfg = io.read_json(path)
    try:
        return Pose.planar(cfg["x"], cfg["y"], cfg.get("z", 0.0), cfg.get("yaw", 0.0))
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed base file ({exc})") from None


def cmd_solve(args):
    model = _robot(args)
    demo = io.read_demo(args.demo or _out(args, "gmr.csv"))
    if args.base is not None:
        base = Pose.planar(*args.base)
    else:
        base = _read_base(args.base_file or _out(args, "best_base.json"))
    traj = solve_trajectory(model, model.q_home, demo, _gains(args), base=base)
    io.write_joint_trajectory(_out(args, "joints.csv"), traj)
    io.write_json(_out(args, "solve_summary.json"), {
        "base": [float(v) for v in base.pos],
        "final_err_lin": float(traj.err_lin[-1]),
        "final_err_ang": float(traj.err_ang[-1]),
        "max_err_lin": float(traj.err_lin.max()),
        "max_err_ang": float(traj.err_ang.max()),
    })
    _say(f"solve: final error {traj.err_lin[-1]:.3g} m / {traj.err_ang[-1]:.3g} rad")


def _replay_job(job):
    model, cfg, commanded, gripper, stride = job
    return simulate_replay(model, cfg, commanded, gripper, log_stride=stride)


def _stiffness(text):
    vals = [float(v) for v in str(text).replace(",", " ").split()]
    return vals[0] if len(vals) == 1 else vals


def cmd_replay(args):
    model = _robot(args)
    commanded = io.read_joint_trajectory(args.joints or _out(args, "joints.csv"))
    demo_path = Path(args.demo) if args.demo else _out(args, "gmr.csv")
    gripper = None
    if demo_path.is_file():
        demo = io.read_demo(demo_path)
        gripper = np.interp(commanded.times, demo.times, demo.aperture)
    delta_q = io.read_vector(args.delta_q) if args.delta_q else None
    cfg = ReplayConfig(_stiffness(args.stiffness), args.damping_ratio, delta_q, args.tau_policy,
                       args.replay_dt)
    spacing = np.median(np.diff(commanded.times)) if len(commanded) > 1 else cfg.dt
    stride = max(1, int(np.round(spacing / cfg.dt)))
    jobs = [(model, cfg, commanded, gripper, stride)] * args.n_trials
    if args.workers > 1 and args.n_trials > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_replay_job, jobs))
    else:
        results = [_replay_job(j) for j in jobs]
    events = {}
    for i, r in enumerate(results, 1):
        io.write_replay(_out(args, "replay", f"trial_{i:02d}.csv"), r)
        events[f"trial_{i:02d}"] = {
            "clamp_count": len(r.clamp_events),
            "clamp_events": [[t, j + 1] for t, j in r.clamp_events],
        }
    io.write_json(_out(args, "replay", "events.json"), events)
    track = [float(np.max(np.abs(r.joint_log.states - r.commanded.states - cfg.gains(model.dof)[3])))
             for r in results]
    peak = [float(np.max(np.abs(r.torque))) for r in results]
    text = [
        f"replay trials: {len(results)}",
        f"stiffness: {args.stiffness} N*m/rad, damping ratio {args.damping_ratio:g}, "
        f"policy {args.tau_policy}",
        f"max joint tracking lag: {max(track):.6g} rad",
        f"peak |torque|: {max(peak):.6g} N*m",
        f"clamp events: {sum(len(r.clamp_events) for r in results)}",
    ]
    io.atomic_write(_out(args, "replay", "summary.txt"), "\n".join(text) + "\n")
    _say(f"replay: {len(results)} trial(s), {text[-1]}")


def cmd_report(args):
    demo = io.read_wrench(args.demo_wrench or _out(args, "wrench", "demo.csv"))
    files = _files(args.replay_wrench, _out(args, "wrench"), "replay_*.csv")
    per_trial = {}
    rms_all, peak_all = [], []
    n_success = 0
    for i, path in enumerate(files, 1):
        rep = io.read_wrench(path)
        mm = haptic_mismatch(demo, rep)
        window = args.window or (rep.times[0], rep.times[-1])
        ok = classify_success(rep, args.tz_threshold, window)
        n_success += ok
        io.write_table(
            _out(args, "report", f"mismatch_{i:02d}.csv"),
            ["t"] + [f"d{a}" for a in AXES],
            np.column_stack([mm.times, mm.diff]),
        )
        rms_all.append(mm.rms)
        peak_all.append(mm.peak)
        per_trial[path.stem] = {
            "success": bool(ok), "peak_tz": peak_tz(rep, window), **mm.summary()
        }
    rms_mean = np.mean(rms_all, axis=0)
    peak_max = np.max(peak_all, axis=0)
    report = {
        "tz_threshold": args.tz_threshold,
        "trials": len(files),
        "successes": int(n_success),
        "mean_rms": dict(zip(AXES, rms_mean.tolist())),
        "max_peak": dict(zip(AXES, peak_max.tolist())),
        "per_trial": per_trial,
    }
    events = _out(args, "replay", "events.json")
    if events.is_file():
        report["replay_clamp_events"] = sum(v["clamp_count"] for v in io.read_json(events).values())
    io.write_json(_out(args, "report", "report.json"), report)
    lines = [
        f"successful replays: {n_success}/{len(files)} (|tau_z| >= {args.tz_threshold:g} N*m)",
        "axis   mean RMS      max peak",
    ]
    lines += [f"{a:<6} {r:<13.6g} {p:.6g}" for a, r, p in zip(AXES, rms_mean, peak_max)]
    io.atomic_write(_out(args, "report", "summary.txt"), "\n".join(lines) + "\n")
    _say("report: " + lines[0])


# parser

def _globals(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", default=d(None), help="JSON file of option defaults")
    parser.add_argument("--seed", type=int, default=d(0))
    parser.add_argument("--workers", type=int, default=d(1))
    parser.add_argument("--out-dir", default=d("out"))


def _gain_flags(p):
    g = PmpGains()
    p.add_argument("--k-l", type=float, default=g.k_l, help="linear tracking gain")
    p.add_argument("--k-r", type=float, default=g.k_r, help="rotational tracking gain")
    p.add_argument("--lam", type=float, default=g.lam, help="manipulability gradient weight")
    p.add_argument("--dt", type=float, default=g.dt, help="integration step (s)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    _globals(common, suppress=True)
    parser = argparse.ArgumentParser(prog="demoreplay", description=__doc__.splitlines()[0])
    _globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="synthetic marker, truth and wrench fixtures")
    p.add_argument("--robot")
    p.add_argument("--duration", type=float, default=25.0)
    p.add_argument("--rate", type=float, default=100.0)
    p.add_argument("--n-trials", type=int, default=4)
    p.add_argument("--n-replays", type=int, default=30)
    p.add_argument("--wrench-rate", type=float, default=100.0)
    p.add_argument("--noise-pos", type=float, default=2e-4)
    p.add_argument("--noise-marker", type=float, default=5e-4)
    p.add_argument("--trial-jitter", type=float, default=0.5)
    p.add_argument("--trial-spread-pos", type=float, default=5e-3)
    p.add_argument("--trial-spread-rot", type=float, default=1e-2)
    p.add_argument("--trial-spread-aperture", type=float, default=2.5e-3)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--base-x", type=float, default=0.3)
    p.add_argument("--base-y", type=float, default=-0.2)
    p.add_argument("--delta-q-sigma", type=float, default=2e-3)

    p = sub.add_parser("filter", parents=[common], help="marker frames to gripper trajectories")
    p.add_argument("--template")
    p.add_argument("--markers", nargs="+")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--finger-labels", nargs=2, default=list(FINGER_LABELS))

    p = sub.add_parser("gmr", parents=[common], help="mixture fit and regressed trajectory")
    p.add_argument("--demos", nargs="+")
    p.add_argument("--components", type=int, default=16)
    p.add_argument("--reg", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--n-times", type=int, default=0, help="regression grid size (0: first trial's times)")

    p = sub.add_parser("base", parents=[common], help="grid search for the robot base position")
    p.add_argument("--robot")
    p.add_argument("--demo")
    p.add_argument("--grid-x", type=float, nargs=2, default=[-1.0, 1.0], metavar=("A", "B"))
    p.add_argument("--grid-y", type=float, nargs=2, default=[-1.0, 1.0], metavar=("A", "B"))
    p.add_argument("--nx", type=int, default=10)
    p.add_argument("--ny", type=int, default=10)
    p.add_argument("--z", type=float, default=0.0)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--tie-tol", type=float, default=0.0)
    _gain_flags(p)

    p = sub.add_parser("solve", parents=[common], help="joint trajectory at the chosen base")
    p.add_argument("--robot")
    p.add_argument("--demo")
    p.add_argument("--base-file")
    p.add_argument("--base", type=float, nargs=2, metavar=("X", "Y"))
    _gain_flags(p)

    p = sub.add_parser("replay", parents=[common], help="impedance replay simulation")
    p.add_argument("--robot")
    p.add_argument("--joints")
    p.add_argument("--demo", help="trajectory whose aperture is relayed to the gripper")
    p.add_argument("--stiffness", default="100", help="scalar or comma-separated per joint")
    p.add_argument("--damping-ratio", type=float, default=1.0)
    p.add_argument("--delta-q", help="file of joint offsets (rad)")
    p.add_argument("--tau-policy", choices=("clamp", "fault"), default="clamp")
    p.add_argument("--replay-dt", type=float, default=1e-3)
    p.add_argument("--n-trials", type=int, default=30)

    p = sub.add_parser("report", parents=[common], help="haptic mismatch and success summary")
    p.add_argument("--demo-wrench")
    p.add_argument("--replay-wrench", nargs="+")
    p.add_argument("--tz-threshold", type=float, required=True)
    p.add_argument("--window", type=float, nargs=2, metavar=("A", "B"))
    return parser


def _config_defaults(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = io.read_json(known.config)
    if not isinstance(cfg, dict):
        raise InputError(f"{known.config}: expected a JSON object")
    norm = lambda d: {k.replace("-", "_"): v for k, v in d.items() if not isinstance(v, dict)}
    top = norm(cfg)
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    parser.set_defaults(**{k: v for k, v in top.items() if k in ("seed", "workers", "out_dir")})
    for name, p in sub.choices.items():
        dests = {a.dest for a in p._actions}
        vals = {k: v for k, v in top.items() if k in dests}
        vals.update(norm(cfg.get(name, {})))
        p.set_defaults(**vals)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        _config_defaults(parser, argv)
    except DemoReplayError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return exc.exit_code
    args = parser.parse_args(argv)
    handler = globals()[f"cmd_{args.command}"]
    try:
        handler(args)
    except DemoReplayError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
