"""Plain-text file formats of the pipeline stages.

All CSV files carry a header row. Floats are written with 17 significant
digits so every numeric file round-trips exactly. Writes go to a temporary
file in the target directory and are renamed into place.
"""

import csv
import io as _io
import json
import os
import tempfile
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .demo_stats import GaussianMixture, RegressedTrajectory
from .exceptions import InputError
from .markers import MarkerFrame, RigidTemplate
from .replay import WrenchSeries
from .trajectory import DemoTrajectory, JointTrajectory

DEMO_HEADER = ["t", "px", "py", "pz", "rx", "ry", "rz", "d"]
MARKER_HEADER = ["t", "label", "x", "y", "z"]
TEMPLATE_HEADER = ["label", "x", "y", "z"]
WRENCH_HEADER = ["t", "fx", "fy", "fz", "tx", "ty", "tz", "frame"]
SCORE_HEADER = ["x", "y", "score", "status"]
FLOAT = "%.17g"


def atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v):
    return FLOAT % v


def write_table(path, header, rows):
    """Numeric table with a header row."""
    buf = _io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in np.atleast_2d(rows):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return atomic_write(path, buf.getvalue())


def _open_rows(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path} is empty")
    return [c.strip() for c in rows[0]], rows[1:]


def _check_header(path, header, expected):
    if header != list(expected):
        raise InputError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")


def _floats(path, rows, cols):
    try:
        return np.array([[float(r[c]) for c in cols] for r in rows], dtype=float).reshape(len(rows), len(cols))
    except (ValueError, IndexError) as exc:
        raise InputError(f"{path}: malformed numeric row ({exc})") from None


def read_table(path, expected=None):
    """Numeric table; returns ``(header, array)``."""
    header, rows = _open_rows(path)
    if expected is not None:
        _check_header(path, header, expected)
    return header, _floats(path, rows, range(len(header)))


# markers and templates

def write_markers(path, frames):
    buf = _io.StringIO()
    buf.write(",".join(MARKER_HEADER) + "\n")
    for fr in frames:
        for label, p in fr.points.items():
            buf.write(f"{_fmt(fr.t)},{label},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}\n")
    return atomic_write(path, buf.getvalue())


def read_markers(path):
    """Long-format marker rows grouped into frames, in time order."""
    header, rows = _open_rows(path)
    _check_header(path, header, MARKER_HEADER)
    frames = OrderedDict()
    for r in rows:
        if len(r) != 5:
            raise InputError(f"{path}: marker rows need 5 fields, got {len(r)}")
        try:
            t, p = float(r[0]), [float(v) for v in r[2:]]
        except ValueError as exc:
            raise InputError(f"{path}: malformed marker row ({exc})") from None
        frames.setdefault(t, {})[r[1].strip()] = p
    return [MarkerFrame(t, pts) for t, pts in sorted(frames.items())]


def write_template(path, template):
    buf = _io.StringIO()
    buf.write(",".join(TEMPLATE_HEADER) + "\n")
    for label, p in template.ref_points.items():
        buf.write(f"{label},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])}\n")
    return atomic_write(path, buf.getvalue())


def read_template(path):
    header, rows = _open_rows(path)
    _check_header(path, header, TEMPLATE_HEADER)
    pts = _floats(path, rows, [1, 2, 3])
    return RigidTemplate({r[0].strip(): p for r, p in zip(rows, pts)})


# trajectories

def write_demo(path, demo):
    return write_table(path, DEMO_HEADER, demo.to_array())


def read_demo(path):
    _, arr = read_table(path, DEMO_HEADER)
    return DemoTrajectory.from_array(arr)


def write_regressed(path, reg):
    return write_table(path, DEMO_HEADER, reg.to_array())


def read_regressed(path):
    """A regression output read back as a demonstration."""
    return read_demo(path)


def joint_header(dof):
    return ["t"] + [f"q{i + 1}" for i in range(dof)] + ["err_lin", "err_ang"]


def write_joint_trajectory(path, traj):
    rows = np.column_stack([traj.times, traj.states, traj.err_lin, traj.err_ang])
    return write_table(path, joint_header(traj.dof), rows)


def read_joint_trajectory(path):
    header, arr = read_table(path)
    dof = len(header) - 3
    if dof < 1:
        raise InputError(f"{path}: too few columns for a joint trajectory")
    _check_header(path, header, joint_header(dof))
    return JointTrajectory(arr[:, 0], arr[:, 1:1 + dof], arr[:, -2], arr[:, -1])


# mixture

def write_mixture(path, mixture):
    return atomic_write(path, json.dumps(mixture.to_dict(), indent=1) + "\n")


def read_mixture(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return GaussianMixture.from_dict(json.loads(path.read_text()))
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"{path}: not a mixture file ({exc})") from None


# base placement

def write_score_field(path, scenarios):
    buf = _io.StringIO()
    buf.write(",".join(SCORE_HEADER) + "\n")
    for s in scenarios:
        buf.write(f"{_fmt(s.x)},{_fmt(s.y)},{_fmt(s.score)},{s.status}\n")
    return atomic_write(path, buf.getvalue())


def read_score_field(path):
    """Returns ``(xy, score, status)``."""
    header, rows = _open_rows(path)
    _check_header(path, header, SCORE_HEADER)
    vals = _floats(path, rows, [0, 1, 2])
    return vals[:, :2], vals[:, 2], [r[3].strip() for r in rows]


def score_svg(xs, ys, field, best=None, cell=36):
    """Heatmap of a ``(ny, nx)`` score field; diverged cells are grey."""
    ny, nx = field.shape
    finite = field[np.isfinite(field)]
    lo, hi = (finite.min(), finite.max()) if finite.size else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    pad = 50
    w, h = nx * cell + 2 * pad, ny * cell + 2 * pad
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    for j in range(ny):
        for i in range(nx):
            v = field[j, i]
            if np.isfinite(v):
                u = (v - lo) / span
                fill = f"rgb({int(255 * u)},{int(80 + 120 * (1 - abs(2 * u - 1)))},{int(255 * (1 - u))})"
            else:
                fill = "rgb(200,200,200)"
            x = pad + i * cell
            y = pad + (ny - 1 - j) * cell
            out.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}">'
                f"<title>x={xs[i]:.3g} y={ys[j]:.3g} score={v:.4g}</title></rect>"
            )
    if best is not None:
        i = int(np.argmin(np.abs(xs - best[0])))
        j = int(np.argmin(np.abs(ys - best[1])))
        out.append(
            f'<rect x="{pad + i * cell}" y="{pad + (ny - 1 - j) * cell}" width="{cell}" '
            f'height="{cell}" fill="none" stroke="black" stroke-width="3"/>'
        )
    out.append(f'<text x="{pad}" y="{h - 15}">x: {xs[0]:.3g} .. {xs[-1]:.3g} m</text>')
    out.append(f'<text x="5" y="{pad - 10}">y: {ys[0]:.3g} .. {ys[-1]:.3g} m (up)</text>')
    out.append(f'<text x="{pad}" y="25">average manipulability {lo:.3g} .. {hi:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# wrenches and replay

def write_wrench(path, w):
    buf = _io.StringIO()
    buf.write(",".join(WRENCH_HEADER) + "\n")
    for t, row in zip(w.times, w.wrench):
        buf.write(_fmt(t) + "," + ",".join(_fmt(v) for v in row) + f",{w.frame}\n")
    return atomic_write(path, buf.getvalue())


def read_wrench(path):
    header, rows = _open_rows(path)
    _check_header(path, header, WRENCH_HEADER)
    vals = _floats(path, rows, range(7))
    frames = {r[7].strip() for r in rows if len(r) > 7}
    if len(frames) != 1 or any(len(r) != 8 for r in rows):
        raise InputError(f"{path}: every row needs the same frame label")
    return WrenchSeries(vals[:, 0], vals[:, 1:4], vals[:, 4:7], frames.pop())


def read_vector(path):
    """Numbers separated by commas, whitespace or newlines (``#`` comments allowed)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    vals = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].replace(",", " ")
        try:
            vals.extend(float(v) for v in line.split())
        except ValueError as exc:
            raise InputError(f"{path}: {exc}") from None
    return np.array(vals)


def write_vector(path, values):
    return atomic_write(path, "\n".join(_fmt(v) for v in np.ravel(values)) + "\n")


def replay_header(dof):
    return (
        ["t"] + [f"qcmd{i + 1}" for i in range(dof)] + [f"q{i + 1}" for i in range(dof)]
        + [f"tau{i + 1}" for i in range(dof)] + ["d"]
    )


def write_replay(path, result):
    return write_table(path, replay_header(result.joint_log.dof), result.to_array())


def write_json(path, obj):
    return atomic_write(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except ValueError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
