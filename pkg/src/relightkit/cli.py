"""Command-line front end: one binary, a subcommand per pipeline stage.

Heavy modules import inside the handlers, not here: the THREADS
environment variable (0 or unset = all cores) must land in
NUMBA_NUM_THREADS before numba first loads, and main() does that before
dispatching.  Every invocation writes a RunManifest JSON next to its
primary output recording the command line, config hash, seed, paths,
version, and wall time; rerunning a command reproduces every artifact
byte-for-byte except the manifest's wall-time field.

Exit codes: 0 success, 2 contract violation (bad arguments, scene or
precondition errors), 3 I/O or file-format trouble.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shlex
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from relightkit import FB_FORMAT_REVISION, SCENE_GRAMMAR_REVISION, __version__
from relightkit.errors import (FileFormatError, PreconditionError,
                               RelightKitError, SceneError)

_VERSION_LINE = (f"relightkit {__version__} "
                 f"(formats: {FB_FORMAT_REVISION}, {SCENE_GRAMMAR_REVISION})")


def _configure_threads() -> None:
    raw = os.environ.get("THREADS")
    if raw is None or raw == "":
        return
    try:
        n = int(raw)
    except ValueError:
        raise PreconditionError(f"THREADS must be an integer, got '{raw}'")
    if n < 0:
        raise PreconditionError(f"THREADS must be >= 0, got {n}")
    if n > 0:
        os.environ["NUMBA_NUM_THREADS"] = str(n)
    # 0 keeps numba's all-cores default.


def _parse_floats(text: str, count: int, what: str) -> list[float]:
    tokens = text.replace(",", " ").split()
    if len(tokens) != count:
        raise PreconditionError(
            f"{what} needs {count} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError as exc:
        raise PreconditionError(f"bad {what}: {exc}") from None


def _parse_resolution(text: str) -> tuple[int, int, int]:
    tokens = text.replace(",", " ").split()
    if len(tokens) == 1:
        tokens = tokens * 3
    if len(tokens) != 3:
        raise PreconditionError(
            f"--res needs 1 or 3 integers, got {len(tokens)}")
    try:
        res = tuple(int(t) for t in tokens)
    except ValueError as exc:
        raise PreconditionError(f"bad --res: {exc}") from None
    if min(res) < 1:
        raise PreconditionError("--res values must be >= 1")
    return res


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path, args, inputs, outputs, t0,
                    config_path=None) -> None:
    manifest = {
        "command": shlex.join(sys.argv),
        "version": __version__,
        "formats": [FB_FORMAT_REVISION, SCENE_GRAMMAR_REVISION],
        "seed": getattr(args, "seed", None),
        "config_hash": _sha256(config_path) if config_path else "",
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time": time.monotonic() - t0,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True)
                          + "\n")


def _load_camera_rig(path):
    """Cameras from a file holding a single [camera] section."""
    from relightkit.scene_io import load_camera_rig
    return load_camera_rig(path)


# ----------------------------------------------------------- reconstruction

def cmd_fit_sdf(args) -> int:
    t0 = time.monotonic()
    from relightkit.fb import write_sdf_grid
    from relightkit.recon import (ReconConfig, fit_sdf, load_range_samples,
                                  write_loss_trace)
    from relightkit.scene_io import load_fit_config

    samples = load_range_samples(args.samples)
    vals = _parse_floats(args.bounds, 6, "--bounds")
    bounds = (vals[:3], vals[3:])
    resolution = _parse_resolution(args.res)
    settings = load_fit_config(args.config) if args.config else {}
    for name in ("iterations", "step_size", "lambda_lidar", "lambda_eikonal",
                 "lambda_freespace", "margin", "freespace_samples"):
        flag = getattr(args, name)
        if flag is not None:
            settings[name] = flag
    config = ReconConfig(**settings)
    trace_rows: list = []
    grid = fit_sdf(samples, bounds, resolution, config, trace_rows)
    write_sdf_grid(args.out, grid)
    trace_path = args.trace or f"{args.out}.trace.csv"
    write_loss_trace(trace_path, trace_rows)
    _write_manifest(f"{args.out}.manifest.json", args, [args.samples],
                    [args.out, trace_path], t0, config_path=args.config)
    return 0


def cmd_extract_mesh(args) -> int:
    t0 = time.monotonic()
    from relightkit.fb import read_sdf_grid
    from relightkit.geometry import SdfGrid, decimate, marching_cubes, save_ply

    grid = read_sdf_grid(args.sdf)
    if args.iso != 0.0:
        grid = SdfGrid(grid.bounds_min, grid.bounds_max,
                       grid.values - args.iso)
    mesh = marching_cubes(grid)
    if len(mesh.faces) == 0:
        print(f"warning: no zero crossing at iso {args.iso}; "
              "writing an empty mesh", file=sys.stderr)
    elif args.decimate is not None:
        mesh = decimate(mesh, target_ratio=args.decimate)
    save_ply(args.out, mesh)
    _write_manifest(f"{args.out}.manifest.json", args, [args.sdf],
                    [args.out], t0)
    return 0


def cmd_bake_albedo(args) -> int:
    t0 = time.monotonic()
    from relightkit.geometry import build_bvh, load_ply, save_ply
    from relightkit.imgio import read_png
    from relightkit.recon import bake_vertex_albedo

    mesh = load_ply(args.mesh)
    cameras = _load_camera_rig(args.cameras)
    if len(cameras) != len(args.images):
        raise PreconditionError(
            f"{len(args.images)} images but {len(cameras)} camera poses")
    images = [read_png(p) for p in args.images]
    result = bake_vertex_albedo(mesh, images, cameras, build_bvh(mesh))
    if result.unseen.any():
        print(f"warning: {int(result.unseen.sum())} vertices were never "
              "observed; they keep the default albedo", file=sys.stderr)
    save_ply(args.out, result.mesh)
    _write_manifest(f"{args.out}.manifest.json", args,
                    [args.mesh, *args.images, args.cameras], [args.out], t0)
    return 0


# ----------------------------------------------------------------- panorama

def _load_depth(path):
    """Depth raster from a 1-channel FB (or a full G-buffer FB)."""
    import numpy as np
    from relightkit.fb import read_fb
    from relightkit.render import GBUFFER_CHANNELS, SKY_DEPTH_SENTINEL

    data = read_fb(path).astype(np.float64)
    if data.shape[-1] == 1:
        depth = data[..., 0].copy()
    elif data.shape[-1] == GBUFFER_CHANNELS:
        depth = data[..., 3].copy()
    else:
        raise FileFormatError(
            str(path), f"depth file must have 1 or {GBUFFER_CHANNELS} "
            f"channels, got {data.shape[-1]}")
    depth[depth == SKY_DEPTH_SENTINEL] = np.inf
    return depth


def cmd_stitch(args) -> int:
    t0 = time.monotonic()
    from relightkit.imgio import read_png, write_pgm, write_png
    from relightkit.panorama import fill_holes, stitch

    if len(args.images) != len(args.depths):
        raise PreconditionError(
            f"{len(args.images)} images but {len(args.depths)} depths")
    cameras = _load_camera_rig(args.cameras)
    if len(cameras) != len(args.images):
        raise PreconditionError(
            f"{len(args.images)} images but {len(cameras)} camera poses")
    images = [read_png(p) for p in args.images]
    depths = [_load_depth(p) for p in args.depths]
    pano = stitch(images, depths, cameras, pano_height=args.height)
    out_image = pano.image if args.no_fill else fill_holes(pano)
    mask_path = Path(args.out).with_suffix(".mask.pgm")
    write_png(args.out, out_image)
    write_pgm(mask_path, pano.mask)
    _write_manifest(f"{args.out}.manifest.json", args,
                    [*args.images, *args.depths, args.cameras],
                    [args.out, mask_path], t0)
    return 0


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        raise PreconditionError(
            f"--time must be unix seconds or ISO 8601, got '{text}'") \
            from None
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def cmd_estimate_sky(args) -> int:
    t0 = time.monotonic()
    import numpy as np
    from relightkit.envlight import (EnvMap, GeoTime, decode_sky, env_lookup,
                                     extract_sun, fit_sky_params,
                                     inverse_tonemap, luminance,
                                     solar_direction, write_hdr)
    from relightkit.imgio import read_pgm, read_png
    from relightkit.panorama import Panorama, fill_holes

    if (args.geo is None) != (args.time is None):
        raise PreconditionError("--geo and --time must be given together")
    image = read_png(args.pano)
    mask = read_pgm(args.mask)
    if mask.shape != image.shape[:2]:
        raise PreconditionError(
            f"mask {mask.shape} does not match panorama "
            f"{image.shape[:2]}")
    pano = Panorama(image=image, count=mask.astype(np.int64))
    filled = fill_holes(pano)  # rejects a fully-masked panorama
    hdr = EnvMap(inverse_tonemap(filled))
    if args.geo is not None:
        lat, lon = _parse_floats(args.geo, 2, "--geo")
        f_dir = solar_direction(GeoTime(lat, lon, _parse_time(args.time)))
        f_int = float(luminance(env_lookup(hdr, f_dir[None])[0]))
    else:
        f_dir, f_int = extract_sun(hdr)
    params = fit_sky_params(hdr, f_dir, f_int)
    dome = decode_sky(params, height=args.height)
    write_hdr(args.out, dome)
    params_path = Path(args.out).with_suffix(".params")
    values = [params.f_int, *params.f_dir, *params.z_sky]
    params_path.write_text(
        " ".join(f"{v:.17g}" for v in values) + "\n")
    _write_manifest(f"{args.out}.manifest.json", args,
                    [args.pano, args.mask], [args.out, params_path], t0)
    return 0


# ------------------------------------------------------- render and relight

def cmd_render(args) -> int:
    t0 = time.monotonic()
    from relightkit.fb import write_fb
    from relightkit.render import SamplerConfig
    from relightkit.scene import simulate
    from relightkit.scene_io import load_scene

    scene = load_scene(args.scene)
    sampler = SamplerConfig(spp=args.spp, seed=args.seed)
    (result,) = simulate(scene, [args.frame], sampler)
    write_fb(args.out, result.maps_src.shadowed)
    outputs = [args.out]
    if args.gbuffer:
        write_fb(args.gbuffer, result.gbuf.channels())
        outputs.append(args.gbuffer)
    _write_manifest(f"{args.out}.manifest.json", args, [args.scene],
                    outputs, t0)
    return 0


def cmd_relight(args) -> int:
    t0 = time.monotonic()
    from relightkit.envlight import tonemap_ldr
    from relightkit.fb import write_fb
    from relightkit.imgio import write_png
    from relightkit.relight import load_bundle, relight

    pair = load_bundle(args.bundle)
    image = relight(pair.inp)
    write_fb(args.out, image)
    outputs = [args.out]
    if args.png:
        write_png(args.png, tonemap_ldr(image))
        outputs.append(args.png)
    _write_manifest(f"{args.out}.manifest.json", args, [args.bundle],
                    outputs, t0)
    return 0


def cmd_simulate(args) -> int:
    t0 = time.monotonic()
    from relightkit.envlight import read_hdr
    from relightkit.render import SamplerConfig
    from relightkit.scene import apply_edits, simulate
    from relightkit.scene_io import load_edits, load_scene

    scene = load_scene(args.scene)
    inputs = [args.scene]
    if args.edits:
        scene = apply_edits(scene, load_edits(args.edits))
        inputs.append(args.edits)
    env_tgt = None
    if args.env_tgt:
        env_tgt = read_hdr(args.env_tgt)
        inputs.append(args.env_tgt)
    sampler = SamplerConfig(spp=args.spp, seed=args.seed)
    out_dir = Path(args.out)
    results = simulate(scene, range(args.frames), sampler, env_tgt=env_tgt,
                       out_dir=out_dir)
    outputs = []
    for res in results:
        outputs.append(out_dir / f"frame_{res.frame:04d}")
        outputs.append(out_dir / f"frame_{res.frame:04d}.png")
    _write_manifest(out_dir / "manifest.json", args, inputs, outputs, t0)
    return 0


# ------------------------------------------------------------------ parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relightkit",
        description="Deterministic reconstruction and relighting pipeline.")
    parser.add_argument("--version", action="version",
                        version=_VERSION_LINE)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit-sdf", help="fit an SDF grid to range samples")
    p.add_argument("--samples", required=True)
    p.add_argument("--bounds", required=True,
                   help="'x0 y0 z0 x1 y1 z1' fitting box")
    p.add_argument("--res", required=True, help="cells per axis (1 or 3 ints)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None,
                   help="scene-format file with a [fit] section")
    p.add_argument("--trace", default=None,
                   help="loss trace CSV path (default <out>.trace.csv)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--step-size", dest="step_size", type=float, default=None)
    p.add_argument("--lambda-lidar", dest="lambda_lidar", type=float,
                   default=None)
    p.add_argument("--lambda-eikonal", dest="lambda_eikonal", type=float,
                   default=None)
    p.add_argument("--lambda-freespace", dest="lambda_freespace", type=float,
                   default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--freespace-samples", dest="freespace_samples", type=int,
                   default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit_sdf)

    p = sub.add_parser("extract-mesh", help="isosurface a stored SDF grid")
    p.add_argument("--sdf", required=True)
    p.add_argument("--iso", type=float, default=0.0)
    p.add_argument("--decimate", type=float, default=None,
                   help="target face-count ratio in (0, 1]")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract_mesh)

    p = sub.add_parser("bake-albedo",
                       help="project images onto mesh vertices")
    p.add_argument("--mesh", required=True)
    p.add_argument("--images", required=True, nargs="+")
    p.add_argument("--cameras", required=True,
                   help="scene-format file with a [camera] section")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bake_albedo)

    p = sub.add_parser("stitch", help="splat posed views into a panorama")
    p.add_argument("--images", required=True, nargs="+")
    p.add_argument("--depths", required=True, nargs="+",
                   help="FB depth rasters (1-channel, or G-buffer files)")
    p.add_argument("--cameras", required=True)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--out", required=True, help="panorama PNG path")
    p.add_argument("--no-fill", action="store_true",
                   help="keep unobserved texels black instead of filling")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_stitch)

    p = sub.add_parser("estimate-sky",
                       help="fit sky parameters to a panorama")
    p.add_argument("--pano", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--geo", default=None, help="'lat lon' in degrees")
    p.add_argument("--time", default=None,
                   help="unix seconds or ISO 8601 UTC")
    p.add_argument("--height", type=int, default=128,
                   help="output dome height")
    p.add_argument("--out", required=True, help="output .hdr path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_estimate_sky)

    p = sub.add_parser("render", help="shade one frame of a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--spp", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="HDR render FB path")
    p.add_argument("--gbuffer", default=None,
                   help="also write the G-buffer FB here")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("relight", help="relight a stored bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True, help="relit FB path")
    p.add_argument("--png", default=None, help="tonemapped preview path")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_relight)

    p = sub.add_parser("simulate",
                       help="render, relight, and persist a frame sequence")
    p.add_argument("--scene", required=True)
    p.add_argument("--edits", default=None)
    p.add_argument("--env-tgt", dest="env_tgt", default=None)
    p.add_argument("--frames", type=int, required=True,
                   help="number of frames (0..N-1)")
    p.add_argument("--spp", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    try:
        _configure_threads()
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return 3
    except (FileFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PreconditionError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RelightKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
