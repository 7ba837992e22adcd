"""Command line entry point: ``semfuse {build-aoi,detect,eval,render,synth}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import load_config
from .errors import ConfigError, DataError
from .pipeline import format_report, run_build_aoi, run_detect, run_eval
from .render import run_render
from .synth import Pedestrian, SceneSpec, generate, random_pedestrians, write_scene

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "-c", required=True, help="run configuration (JSON)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field; dotted keys reach nested sections")
    p.add_argument("--jobs", "-j", type=int, default=None, help="frame-parallel workers")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semfuse", description="Multi-camera pedestrian detection fusion")
    ap.add_argument("--verbose", "-v", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("build-aoi", "build the ground-plane area of interest"),
                        ("detect", "project, filter, fuse and refine detections"),
                        ("eval", "score detections against ground truth"),
                        ("render", "draw overlays and the ground-plane map")):
        _add_run_args(sub.add_parser(name, help=help_))
    s = sub.add_parser("synth", help="generate a synthetic scene")
    s.add_argument("--out", "-o", required=True)
    s.add_argument("--spec", help="JSON file with SceneSpec fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--pedestrians", type=int, default=3, help="random pedestrians when the scene file lists none")
    s.add_argument("--cameras", type=int)
    s.add_argument("--frames", type=int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--jitter", type=float, help="detection jitter (px)")
    s.add_argument("--calib-noise", type=float, help="camera position noise (m)")
    s.add_argument("--phantoms", type=float, help="mean spurious detections per camera frame")
    return ap


def _scene_spec(args) -> SceneSpec:
    raw = {}
    if args.spec:
        try:
            with open(args.spec) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read scene spec {args.spec}: {exc}") from exc
    for key, attr in (("seed", "seed"), ("n_cameras", "cameras"), ("n_frames", "frames"), ("dropout", "dropout"),
                      ("detection_jitter", "jitter"), ("calib_position_noise", "calib_noise"),
                      ("phantom_rate", "phantoms")):
        v = getattr(args, attr)
        if v is not None:
            raw[key] = v
    peds = raw.pop("pedestrians", None)
    if "image_size" in raw:
        raw["image_size"] = tuple(raw["image_size"])
    try:
        spec = SceneSpec(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid scene spec: {exc}") from exc
    if peds is None:
        rng = np.random.default_rng([spec.seed, 1])
        peds = random_pedestrians(args.pedestrians, spec.extent, rng)
    else:
        peds = tuple(Pedestrian(**p) for p in peds)
    return replace(spec, pedestrians=peds)


def _print_stats(title: str, stats: dict) -> None:
    print(title)
    for k, v in stats.items():
        print(f"  {k}: {v}")


def run(args) -> int:
    if args.command == "synth":
        scene = generate(_scene_spec(args))
        out = write_scene(scene, args.out)
        print(f"wrote scene to {out}: {len(scene.cameras)} cameras, {len(scene.frames)} frames, "
              f"{len(scene.detections)} detections")
        return EXIT_OK
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    cfg = load_config(args.config, overrides)
    if args.command == "build-aoi":
        s = run_build_aoi(cfg)
        print(f"AOI: {s['cells']} of {s['total_cells']} cells ({100 * s['fraction']:.2f}%), "
              f"{s['area_m2']:.2f} m^2")
    elif args.command == "detect":
        _print_stats("detect:", run_detect(cfg))
    elif args.command == "eval":
        print(format_report(run_eval(cfg)))
    elif args.command == "render":
        _print_stats("render:", run_render(cfg))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
