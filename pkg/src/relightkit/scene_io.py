"""Text formats for scenes, trajectories, and edit scripts.

Grammar reference lives in docs/scene_format.md.  In short:

Scene file: INI-like sections.  `[background]` (ply), `[actor "<id>"]`
(ply, trajectory), `[camera]` (width, height, fx, fy, optional cx/cy,
poses), `[lighting]` (hdr = path, or skyparams = f_int dx dy dz
followed optionally by 64 latent values).  `#` starts a comment.  File
paths are resolved relative to the file that mentions them.

Trajectory file: one pose per line, `frame tx ty tz qw qx qy qz`, unit
quaternion, camera/object-to-world.

Edit script: one edit per line:
    remove <id>
    insert <id> <ply> <trajectory>
    retime <id> <trajectory>
    set_env <hdr>
    rotate_env <radians>
    move_rig <trajectory>

All parsers raise FileFormatError carrying the path, 1-based line, and
where determinable the column of the offending token.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from relightkit.camera import CameraModel
from relightkit.envlight import EnvMap, SkyParams, decode_sky, read_hdr
from relightkit.errors import FileFormatError
from relightkit.geometry import load_ply
from relightkit.scene import (Actor, EditScript, InsertActor, MoveRig, Pose,
                              RemoveActor, Retime, RotateEnv, Scene, SetEnv)

_SECTION_RE = re.compile(r'^\[(\w+)(?:\s+"([^"]*)")?\]$')
_KEY_RE = re.compile(r'^(\w+)\s*=\s*(\S.*?)\s*$')


def _strip(raw: str) -> str:
    return raw.split("#", 1)[0].rstrip()


def _column(raw: str, token: str) -> int:
    pos = raw.find(token)
    return pos + 1 if pos >= 0 else 1


def _parse_float(path, raw, lineno, token, what):
    try:
        value = float(token)
    except ValueError:
        raise FileFormatError(path, f"bad {what} '{token}'", line=lineno,
                              column=_column(raw, token)) from None
    if not np.isfinite(value):
        raise FileFormatError(path, f"non-finite {what} '{token}'",
                              line=lineno, column=_column(raw, token))
    return value


def _parse_int(path, raw, lineno, token, what):
    try:
        return int(token)
    except ValueError:
        raise FileFormatError(path, f"bad {what} '{token}'", line=lineno,
                              column=_column(raw, token)) from None


# ------------------------------------------------------------- trajectories

def load_trajectory(path) -> dict[int, Pose]:
    """Parse `frame tx ty tz qw qx qy qz` lines into a pose map."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(str(path), f"cannot read: {exc.strerror}")
    poses: dict[int, Pose] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = _strip(raw)
        if not stripped.strip():
            continue
        tokens = stripped.split()
        if len(tokens) != 8:
            raise FileFormatError(
                str(path), "expected 8 fields "
                f"(frame tx ty tz qw qx qy qz), got {len(tokens)}",
                line=lineno)
        frame = _parse_int(str(path), raw, lineno, tokens[0], "frame index")
        if frame < 0:
            raise FileFormatError(str(path),
                                  f"negative frame index {frame}",
                                  line=lineno, column=_column(raw, tokens[0]))
        if frame in poses:
            raise FileFormatError(str(path),
                                  f"duplicate frame index {frame}",
                                  line=lineno, column=_column(raw, tokens[0]))
        vals = [_parse_float(str(path), raw, lineno, t, "pose value")
                for t in tokens[1:]]
        tx, ty, tz, qw, qx, qy, qz = vals
        norm = np.sqrt(qw * qw + qx * qx + qy * qy + qz * qz)
        if norm < 1e-8:
            raise FileFormatError(str(path), "zero quaternion", line=lineno,
                                  column=_column(raw, tokens[4]))
        # scipy uses scalar-last order.
        rot = Rotation.from_quat(np.array([qx, qy, qz, qw]) / norm)
        poses[frame] = Pose(rot.as_matrix(), np.array([tx, ty, tz]))
    if not poses:
        raise FileFormatError(str(path), "no pose lines")
    return poses


def save_trajectory(path, poses: dict[int, Pose]) -> None:
    lines = []
    for frame in sorted(poses):
        pose = poses[frame]
        qx, qy, qz, qw = Rotation.from_matrix(pose.rotation).as_quat()
        tx, ty, tz = pose.translation
        lines.append(f"{frame} {tx:.17g} {ty:.17g} {tz:.17g} "
                     f"{qw:.17g} {qx:.17g} {qy:.17g} {qz:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


# ------------------------------------------------------------- scene files

def _split_sections(path: Path, text: str) -> list:
    """[(kind, name, header_line, {key: (value, line, raw)})], in order."""
    sections = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = _strip(raw)
        if not stripped.strip():
            continue
        if stripped.lstrip().startswith("["):
            m = _SECTION_RE.match(stripped.strip())
            if not m:
                raise FileFormatError(str(path), f"bad section header "
                                      f"'{stripped.strip()}'", line=lineno)
            current = (m.group(1), m.group(2), lineno, {})
            sections.append(current)
            continue
        m = _KEY_RE.match(stripped.strip())
        if not m:
            raise FileFormatError(str(path),
                                  f"expected key = value, got "
                                  f"'{stripped.strip()}'", line=lineno)
        if current is None:
            raise FileFormatError(str(path),
                                  "key outside any [section]", line=lineno)
        key, value = m.group(1), m.group(2)
        if key in current[3]:
            raise FileFormatError(str(path), f"duplicate key '{key}'",
                                  line=lineno, column=_column(raw, key))
        current[3][key] = (value, lineno, raw)
    return sections


def _take(path, section, key, required=True):
    kind, name, header_line, entries = section
    if key not in entries:
        if required:
            where = f'[{kind} "{name}"]' if name else f"[{kind}]"
            raise FileFormatError(str(path),
                                  f"{where} is missing '{key}'",
                                  line=header_line)
        return None
    return entries.pop(key)


def _reject_leftovers(path, section):
    kind, name, _, entries = section
    if entries:
        key = next(iter(entries))
        _, lineno, raw = entries[key]
        raise FileFormatError(str(path), f"unknown key '{key}' in [{kind}]",
                              line=lineno, column=_column(raw, key))


def _parse_skyparams(path, value, lineno, raw) -> EnvMap:
    tokens = value.split()
    if len(tokens) not in (4, 68):
        raise FileFormatError(
            str(path), "skyparams needs 'f_int dx dy dz' plus optionally "
            f"64 latent values, got {len(tokens)} fields", line=lineno)
    vals = [_parse_float(str(path), raw, lineno, t, "skyparams value")
            for t in tokens]
    f_dir = np.array(vals[1:4])
    norm = np.linalg.norm(f_dir)
    if norm < 1e-8:
        raise FileFormatError(str(path), "skyparams sun direction is zero",
                              line=lineno)
    latents = np.array(vals[4:]) if len(vals) == 68 else np.zeros(64)
    params = SkyParams(z_sky=latents, f_int=vals[0], f_dir=f_dir / norm)
    return decode_sky(params)


def load_scene(path) -> Scene:
    """Parse a scene description file and load everything it references."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(str(path), f"cannot read: {exc.strerror}")
    base = path.parent
    sections = _split_sections(path, text)

    background = None
    actors = []
    camera_section = None
    env = None
    for section in sections:
        kind, name, header_line, _ = section
        if kind == "background":
            if background is not None:
                raise FileFormatError(str(path),
                                      "multiple [background] sections",
                                      line=header_line)
            ply, _, _ = _take(path, section, "ply")
            background = load_ply(base / ply)
        elif kind == "actor":
            if not name:
                raise FileFormatError(
                    str(path), 'actor sections need a name: [actor "id"]',
                    line=header_line)
            ply, _, _ = _take(path, section, "ply")
            traj, _, _ = _take(path, section, "trajectory")
            actors.append(Actor(actor_id=name, mesh=load_ply(base / ply),
                                trajectory=load_trajectory(base / traj)))
        elif kind == "camera":
            if camera_section is not None:
                raise FileFormatError(str(path),
                                      "multiple [camera] sections",
                                      line=header_line)
            camera_section = section
            continue  # keys consumed later by _build_cameras
        elif kind == "lighting":
            if env is not None:
                raise FileFormatError(str(path),
                                      "multiple [lighting] sections",
                                      line=header_line)
            hdr = _take(path, section, "hdr", required=False)
            sky = _take(path, section, "skyparams", required=False)
            if (hdr is None) == (sky is None):
                raise FileFormatError(
                    str(path), "[lighting] needs exactly one of "
                    "'hdr' or 'skyparams'", line=header_line)
            if hdr is not None:
                env = read_hdr(base / hdr[0])
            else:
                env = _parse_skyparams(path, sky[0], sky[1], sky[2])
        else:
            raise FileFormatError(str(path), f"unknown section [{kind}]",
                                  line=header_line)
        _reject_leftovers(path, section)

    if background is None:
        raise FileFormatError(str(path), "missing [background] section")
    if camera_section is None:
        raise FileFormatError(str(path), "missing [camera] section")
    if env is None:
        raise FileFormatError(str(path), "missing [lighting] section")

    cameras = _build_cameras(path, base, camera_section)
    return Scene(background=background, actors=actors, cameras=cameras,
                 env=env, frame_count=len(cameras))


def _build_cameras(path, base: Path, camera_section) -> list[CameraModel]:
    def cam_value(key, parser, required=True, default=None):
        entry = _take(path, camera_section, key, required=required)
        if entry is None:
            return default
        value, lineno, raw = entry
        return parser(str(path), raw, lineno, value, key)

    width = cam_value("width", _parse_int)
    height = cam_value("height", _parse_int)
    fx = cam_value("fx", _parse_float)
    fy = cam_value("fy", _parse_float)
    cx = cam_value("cx", _parse_float, required=False, default=width / 2.0)
    cy = cam_value("cy", _parse_float, required=False, default=height / 2.0)
    poses_entry = _take(path, camera_section, "poses")
    _reject_leftovers(path, camera_section)
    rig = load_trajectory(base / poses_entry[0])
    frames = sorted(rig)
    if frames != list(range(len(frames))):
        raise FileFormatError(
            str(base / poses_entry[0]),
            f"camera poses must cover frames 0..{len(frames) - 1} "
            "without gaps")
    return [CameraModel(width, height, fx, fy, cx, cy,
                        rotation=rig[f].rotation,
                        center=rig[f].translation)
            for f in frames]


def load_camera_rig(path) -> list[CameraModel]:
    """Cameras from a file containing exactly one [camera] section."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(str(path), f"cannot read: {exc.strerror}")
    sections = _split_sections(path, text)
    cams = [s for s in sections if s[0] == "camera"]
    if len(sections) != len(cams) or len(cams) != 1:
        raise FileFormatError(
            str(path), "camera rig file needs exactly one [camera] "
            "section and nothing else")
    return _build_cameras(path, path.parent, cams[0])


_FIT_KEYS = {"iterations": _parse_int, "freespace_samples": _parse_int,
             "step_size": _parse_float, "lambda_lidar": _parse_float,
             "lambda_eikonal": _parse_float, "lambda_freespace": _parse_float,
             "margin": _parse_float}


def load_fit_config(path) -> dict:
    """SDF-fitting settings from a [fit] section; missing keys default."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(str(path), f"cannot read: {exc.strerror}")
    sections = _split_sections(path, text)
    fits = [s for s in sections if s[0] == "fit"]
    if len(fits) != 1:
        raise FileFormatError(
            str(path), f"expected one [fit] section, found {len(fits)}")
    section = fits[0]
    settings = {}
    for key, parser in _FIT_KEYS.items():
        entry = _take(path, section, key, required=False)
        if entry is not None:
            value, lineno, raw = entry
            settings[key] = parser(str(path), raw, lineno, value, key)
    _reject_leftovers(path, section)
    return settings


# ------------------------------------------------------------- edit scripts

def load_edits(path) -> EditScript:
    """Parse an edit script, loading referenced meshes and trajectories."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileFormatError(str(path), f"cannot read: {exc.strerror}")
    base = path.parent
    edits = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        stripped = _strip(raw)
        if not stripped.strip():
            continue
        tokens = stripped.split()
        verb, args = tokens[0], tokens[1:]
        def wrong_arity(expect):
            return FileFormatError(
                str(path), f"'{verb}' takes {expect}, got {len(args)}",
                line=lineno, column=_column(raw, verb))
        if verb == "remove":
            if len(args) != 1:
                raise wrong_arity("1 argument (id)")
            edits.append(RemoveActor(args[0]))
        elif verb == "insert":
            if len(args) != 3:
                raise wrong_arity("3 arguments (id, ply, trajectory)")
            edits.append(InsertActor(Actor(
                actor_id=args[0], mesh=load_ply(base / args[1]),
                trajectory=load_trajectory(base / args[2]))))
        elif verb == "retime":
            if len(args) != 2:
                raise wrong_arity("2 arguments (id, trajectory)")
            edits.append(Retime(args[0], load_trajectory(base / args[1])))
        elif verb == "set_env":
            if len(args) != 1:
                raise wrong_arity("1 argument (hdr path)")
            edits.append(SetEnv(read_hdr(base / args[0])))
        elif verb == "rotate_env":
            if len(args) != 1:
                raise wrong_arity("1 argument (radians)")
            edits.append(RotateEnv(_parse_float(
                str(path), raw, lineno, args[0], "angle")))
        elif verb == "move_rig":
            if len(args) != 1:
                raise wrong_arity("1 argument (trajectory)")
            edits.append(MoveRig(load_trajectory(base / args[0])))
        else:
            raise FileFormatError(str(path), f"unknown edit '{verb}'",
                                  line=lineno, column=_column(raw, verb))
    return EditScript(edits=edits)
