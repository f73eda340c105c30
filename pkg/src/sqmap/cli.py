"""Command line interface: simulate, run, evaluate, export-mesh.

Exit codes: 0 success, 2 input or schema error, 1 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config
from .evaluation import evaluate_run
from .geometry import enclosing_obb
from .mesh import grid_mesh, off_text, ply_text
from .pipeline import InputError, build_map
from .plotting import plot_report, plot_topdown
from .simulator import camera_frames, generate_scene, render_detections

log = logging.getLogger("sqmap")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None


def _resolve_config(args, fallback: Path | None = None) -> RunConfig:
    """Config from ``--config`` (or a fallback file), then command-line overrides."""
    path = Path(args.config) if args.config else fallback if fallback is not None and fallback.exists() else None
    if path is None:
        cfg = RunConfig(seed=args.seed if args.seed is not None else 0)
    else:
        if not path.exists():
            raise InputError(f"config file {path} does not exist")
        cfg = load_config(path, getattr(args, "seed", None))
    opt, assoc = {}, {}
    if getattr(args, "mode", None):
        opt["shape_mode"] = args.mode
    if getattr(args, "no_prior", False):
        opt["prior_enabled"] = False
    if getattr(args, "assoc", None):
        assoc["mode"] = args.assoc
    return cfg.with_overrides(optimizer=opt, association=assoc) if opt or assoc else cfg


def _config_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), indent=1) + "\n"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if not args.config and args.seed is None:
        raise ConfigError(["<command line>: field 'seed': required (give --config or --seed)"])
    cfg = _resolve_config(args)
    out = Path(args.out)
    manifest = io.build_manifest(cfg, "simulate")
    spec = cfg.scenario_spec()
    scene = generate_scene(spec, [c.spec() for c in cfg.categories])
    frames = camera_frames(spec)
    dets = render_detections(scene, spec, frames)

    io.write_text(out / io.CONFIG_FILE, _config_json(cfg))
    io.write_text(out / io.DETECTIONS_FILE,
                  io.serialize_detections([io.DetectionRecord.from_detection(d) for d in dets], manifest))
    io.write_text(out / io.TRAJECTORY_FILE, io.serialize_trajectory(io.Trajectory.from_frames(frames), manifest))
    gt = [io.GroundTruthRecord.from_object(o) for o in scene.objects]
    io.write_text(out / io.GROUND_TRUTH_FILE,
                  io.serialize_ground_truth(gt, [c.model_dump(mode="json") for c in cfg.categories], manifest))
    cams = np.array([f.pose.inverse().translation[:2] for f in frames])
    plot_topdown(out / "scene_topdown.png", [], [(o.state, o.class_id) for o in scene.objects],
                 cfg.class_names(), cams, manifest["config_hash"])
    print(f"simulated {len(scene.objects)} objects, {len(frames)} frames, {len(dets)} detections -> {out}")
    return EXIT_OK


def _vocabulary(cfg: RunConfig, gt_categories: list[dict]) -> dict[int, str]:
    names = cfg.class_names()
    if gt_categories:
        gt_names = {int(c["class_id"]): str(c["name"]) for c in gt_categories}
        if gt_names != names:
            raise InputError(f"class vocabulary mismatch: config {names} vs ground truth {gt_names}")
    return names


def _evaluate(cfg: RunConfig, records: list[io.MapObjectRecord], gt_path: Path, matching_accuracy,
              manifest: dict, out: Path) -> None:
    gt, gt_cats = io.parse_ground_truth(_read(gt_path), str(gt_path))
    names = _vocabulary(cfg, gt_cats)
    for r in records:
        if r.class_id not in names:
            raise InputError(f"map object {r.track_id} has class {r.class_id} outside the vocabulary {names}")
    for g in gt:
        if g.class_id not in names:
            raise InputError(f"ground-truth object {g.object_id} has class {g.class_id} outside the vocabulary")
    preds = [(enclosing_obb(r.state()), r.class_id) for r in records]
    gts = [(enclosing_obb(g.state()), g.class_id) for g in gt]
    report = evaluate_run(preds, gts, names, matching_accuracy, manifest, cfg.evaluation.thresholds)
    io.write_text(out / io.REPORT_JSON, io.serialize_report_json(report))
    io.write_text(out / io.REPORT_CSV, io.serialize_report_csv(report))
    plot_report(out / "report_f1.png", report, manifest.get("config_hash"))
    thr = cfg.evaluation.thresholds
    print("F1: " + ", ".join(f"@{t:g}={report.f1(t):.3f}" for t in thr)
          + (f", matching accuracy {matching_accuracy:.3f}" if matching_accuracy is not None else ""))


def cmd_run(args) -> int:
    src = Path(args.input) if args.input else None
    det_path = Path(args.detections) if args.detections else (src / io.DETECTIONS_FILE if src else None)
    traj_path = Path(args.trajectory) if args.trajectory else (src / io.TRAJECTORY_FILE if src else None)
    if det_path is None or traj_path is None:
        raise InputError("give an input directory or both --detections and --trajectory")
    gt_path = Path(args.ground_truth) if args.ground_truth else (src / io.GROUND_TRUTH_FILE if src else None)
    cfg = _resolve_config(args, src / io.CONFIG_FILE if src else None)
    out = Path(args.out)

    records, _ = io.parse_detections(_read(det_path), str(det_path))
    traj = io.parse_trajectory(_read(traj_path), str(traj_path))
    frames = traj.camera_frames()
    if cfg.association.mode == "3d" and any(r.sv3d is None for r in records):
        raise InputError("3d association needs sv3d fields on every detection; rerun with --assoc 2d")
    result = build_map(frames, [r.to_detection() for r in records], cfg.priors(), cfg.optimizer.spec(),
                       cfg.mapper_settings())

    manifest = io.build_manifest(cfg, "run")
    objs = [io.MapObjectRecord.from_state(t.track_id, t.class_id, t.estimate, len(t.observations))
            for t in result.tracks]
    io.write_text(out / io.CONFIG_FILE, _config_json(cfg))
    io.write_text(out / io.MAP_FILE, io.serialize_map(objs, manifest))
    tag = f"{manifest['config_hash']},{cfg.seed}"
    rounds = ["track_id,trigger,n_observations,iterations,initial_objective,best_objective,config_hash,seed"]
    rounds += [f"{r.track_id},{r.trigger},{r.n_observations},{r.iterations},{r.initial_objective!r},"
               f"{r.best_objective!r},{tag}" for r in result.rounds]
    io.write_text(out / "rounds.csv", "\n".join(rounds) + "\n")
    print(f"mapped {len(objs)} confirmed objects -> {out / io.MAP_FILE}")

    gt_states = []
    if gt_path is not None and gt_path.exists():
        _evaluate(cfg, objs, gt_path, result.matching_accuracy, manifest, out)
        gt_states = [(g.state(), g.class_id) for g in io.parse_ground_truth(_read(gt_path))[0]]
    cams = np.array([f.pose.inverse().translation[:2] for f in frames])
    plot_topdown(out / "map_topdown.png", [(t.estimate, t.class_id) for t in result.tracks], gt_states,
                 cfg.class_names(), cams, manifest["config_hash"])
    return EXIT_OK


def cmd_evaluate(args) -> int:
    map_path = Path(args.map)
    records, map_manifest = io.parse_map(_read(map_path), str(map_path))
    cfg = _resolve_config(args, map_path.parent / io.CONFIG_FILE)
    manifest = io.build_manifest(cfg, "evaluate")
    if map_manifest and map_manifest.get("config_hash") not in (None, manifest["config_hash"]):
        log.warning("map was produced with config %s, evaluating with %s",
                    map_manifest.get("config_hash"), manifest["config_hash"])
    _evaluate(cfg, records, Path(args.ground_truth), None, manifest, Path(args.out))
    return EXIT_OK


def cmd_export_mesh(args) -> int:
    map_path = Path(args.map)
    records, manifest = io.parse_map(_read(map_path), str(map_path))
    manifest = manifest or {}
    n_eta, n_omega = args.grid
    if n_eta < 3 or n_omega < 3:
        raise InputError("--grid needs at least 3 x 3")
    out = Path(args.out)
    comments = [f"config_hash {manifest.get('config_hash')}", f"seed {manifest.get('seed')}"]
    for r in records:
        verts, faces = grid_mesh(r.state(), n_eta, n_omega)
        c = comments + [f"track_id {r.track_id}", f"class_id {r.class_id}"]
        text = ply_text(verts, faces, c) if args.format == "ply" else off_text(verts, faces, c)
        io.write_text(out / f"object_{r.track_id:04d}.{args.format}", text)
    print(f"wrote {len(records)} meshes ({n_eta}x{n_omega} vertices each) -> {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, run_flags: bool = False) -> None:
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", required=True, help="output directory")
    if run_flags:
        p.add_argument("--mode", choices=["superquadric", "ellipsoid", "cuboid", "no_optimization"])
        p.add_argument("--assoc", choices=["3d", "2d"])
        p.add_argument("--no-prior", action="store_true", help="disable the category scale prior")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqmap", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scene, trajectory and detection log")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="build an object map from detections and known poses")
    p.add_argument("input", nargs="?", help="directory with detections.jsonl, trajectory.json (and ground_truth.json)")
    p.add_argument("--detections")
    p.add_argument("--trajectory")
    p.add_argument("--ground-truth")
    _common(p, run_flags=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score a map against ground truth")
    p.add_argument("map")
    p.add_argument("ground_truth")
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-mesh", help="write one triangle mesh per mapped object")
    p.add_argument("map")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, nargs=2, default=(32, 64), metavar=("N_ETA", "N_OMEGA"))
    p.add_argument("--format", choices=["ply", "off"], default="ply")
    p.set_defaults(func=cmd_export_mesh)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for m in exc.messages:
            print(f"error: {m}", file=sys.stderr)
        return EXIT_INPUT
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
