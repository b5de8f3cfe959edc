"""Command-line entry point: ``liorecon <simulate|odometry|reconstruct|evaluate|metrics>``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..tsdf import read_ply
from . import evaluation, io
from .config import ConfigError, RunConfig
from .odometry import OdometryAborted, run_odometry, write_odometry
from .reconstruction import reconstruct_run
from .simulate import simulate_dataset

log = logging.getLogger("liorecon")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value configuration file")
    p.add_argument("--output", type=Path, help="output directory (or file for metrics)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--verbose", "-v", action="count", default=0, help="more logging (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="liorecon", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="ray-cast a synthetic dataset")
    _common(p)

    p = sub.add_parser("odometry", help="estimate a keyframe trajectory from a dataset")
    p.add_argument("dataset", nargs="?", type=Path, help="dataset directory (default: config 'dataset')")
    _common(p)

    p = sub.add_parser("reconstruct", help="fuse keyframe clouds into a mesh")
    p.add_argument("run", type=Path, help="odometry output directory")
    _common(p)

    p = sub.add_parser("evaluate", help="trajectory ATE and optional mesh distance")
    p.add_argument("trajectory", type=Path)
    p.add_argument("groundtruth", type=Path)
    p.add_argument("--no-align", action="store_true", help="skip rigid alignment before differencing")
    p.add_argument("--mesh", type=Path, help="reconstructed mesh (PLY)")
    p.add_argument("--world", type=Path, help="ground-truth world mesh (PLY)")
    _common(p)

    p = sub.add_parser("metrics", help="detail/time efficiency factors")
    p.add_argument("values", nargs="*", type=float, metavar="N",
                   help="detail_a detail_b time_a time_b")
    p.add_argument("--table", type=Path, help="csv with header level,triangles,seconds")
    _common(p)
    return parser


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed}
    if args.config:
        return RunConfig.load(args.config, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _out(args, cfg: RunConfig, fallback: str) -> Path:
    return Path(args.output or cfg.output or fallback)


def cmd_simulate(args, cfg) -> int:
    root = simulate_dataset(cfg, _out(args, cfg, "dataset"))
    print(root)
    return 0


def cmd_odometry(args, cfg) -> int:
    dataset = args.dataset or (Path(cfg.dataset) if cfg.dataset else None)
    if dataset is None:
        raise ConfigError("no dataset given (positional argument or 'dataset' key)")
    cfg = cfg.replace(dataset=str(dataset))
    ds = io.Dataset.open(dataset, cfg.scan_period)
    result = run_odometry(cfg, ds)
    out = write_odometry(result, _out(args, cfg, "run"))
    print(f"{len(result.keyframes)} keyframes, {len(result.loops)} loop edges, "
          f"{len(result.skipped)} skipped scans -> {out}")
    return 0


def cmd_reconstruct(args, cfg) -> int:
    out = _out(args, cfg, str(args.run))
    mesh = reconstruct_run(args.run, cfg, out)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles -> {out / 'mesh.ply'}")
    return 0


def cmd_evaluate(args, cfg) -> int:
    es, ep = io.read_trajectory(args.trajectory)
    gs, gp = io.read_trajectory(args.groundtruth)
    ate = evaluation.compute_ate(es, ep, gs, gp, align=not args.no_align)
    lines = [f"ate {ate:.6f}"]
    if args.mesh and args.world:
        mesh, world = read_ply(args.mesh), read_ply(args.world)
        verts = mesh.vertices
        if not args.no_align:
            # the mesh lives in the trajectory frame; carry it into ground-truth coordinates
            R, t = evaluation.alignment(es, ep, gs, gp)
            verts = verts @ R.T + t
        h = evaluation.hausdorff_to_world(verts, mesh.triangles, world.vertices[world.triangles])
        lines.append(f"hausdorff {h:.6f}")
    _emit(args, lines)
    return 0


def cmd_metrics(args, cfg) -> int:
    if args.table:
        rows = evaluation.read_table(args.table)
        lines = ["from,to,detail_ratio,time_ratio,efficiency"]
        for lb, la, f in evaluation.table_factors(rows):
            lines.append(f"{lb:g},{la:g},{f.detail_ratio:.4f},{f.time_ratio:.4f},{f.efficiency:.4f}")
        lines.append(f"best,{evaluation.best_level(rows):g}")
    else:
        if len(args.values) != 4:
            raise ConfigError("metrics needs detail_a detail_b time_a time_b, or --table")
        f = evaluation.efficiency_factors(*args.values)
        lines = [f"detail_ratio {f.detail_ratio:.4f}", f"time_ratio {f.time_ratio:.4f}", f"efficiency {f.efficiency:.4f}"]
    _emit(args, lines)
    return 0


def _emit(args, lines):
    text = "\n".join(lines) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    sys.stdout.write(text)


COMMANDS = {
    "simulate": cmd_simulate,
    "odometry": cmd_odometry,
    "reconstruct": cmd_reconstruct,
    "evaluate": cmd_evaluate,
    "metrics": cmd_metrics,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, io.FormatError, OdometryAborted, ValueError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return 2
