"""Command-line interface: contain, pour, eval, export-frames.

Exit codes are part of the contract: 0 success, 2 usage or bad
configuration values, 3 I/O, 4 parse, 5 simulation failure, 6 object is
not an open container. Success paths write nothing to standard error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

from .config import RunConfig
from .containability import ContainabilityResult, imagine_containability
from .errors import (
    ConfigError,
    CupFillError,
    DegenerateGeometryError,
    DuplicatePathError,
    EmptyMeshError,
    ManifestError,
    MeshParseError,
    MissingMeshError,
    NotAContainerError,
    ScheduleOverflowError,
    SimulationUnstableError,
    SingleClassError,
    SpawnOverlapError,
)
from .evaluation import EvalReport, evaluate, load_manifest
from .geometry import load_mesh
from .jsonio import dumps, format_float
from .pouring import PourPlan, imagine_pouring, replay_best_pour

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_PARSE = 4
EXIT_SIMULATION = 5
EXIT_NOT_A_CONTAINER = 6


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH",
                   help="JSON config file; flags override its values")
    p.add_argument("--scale", type=float, metavar="F",
                   help="uniform scale applied to mesh coordinates")
    p.add_argument("--omega-thr", type=float, metavar="F",
                   help="classification threshold on omega")
    p.add_argument("--jobs", type=int, metavar="N",
                   help="worker threads for independent simulations")
    p.add_argument("--timings", action="store_true",
                   help="include runtime_seconds in output records")
    p.add_argument("--seedless", action="store_true",
                   help="assert the run uses no random source (always holds;"
                        " the flag is a contract check)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opencontain",
        description="Classify open containers by simulated particle drops "
                    "and plan cup pours above them.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("contain", help="score open containability of a mesh")
    p.add_argument("mesh")
    _add_common(p)
    p.add_argument("--output", metavar="PATH", help="also write the JSON here")
    p.add_argument("--export-frames", metavar="PATH",
                   help="write simulation frames as JSON lines")

    p = sub.add_parser("pour", help="plan the best pour into a container mesh")
    p.add_argument("mesh")
    _add_common(p)
    p.add_argument("--output", metavar="PATH", help="also write the JSON here")
    p.add_argument("--export-frames", metavar="PATH",
                   help="replay the winning pour, writing frames as JSON lines")

    p = sub.add_parser("eval", help="evaluate a labeled mesh corpus")
    p.add_argument("manifest")
    _add_common(p)
    p.add_argument("--output", metavar="PATH", default="eval_report.json",
                   help="report JSON path (CSV lands next to it)")

    p = sub.add_parser("export-frames",
                       help="run a pipeline and save its frames as JSON lines")
    p.add_argument("mesh")
    p.add_argument("out")
    p.add_argument("--mode", choices=("contain", "pour"), default="contain")
    _add_common(p)
    return parser


def _build_config(args) -> RunConfig:
    overrides = {}
    if args.scale is not None:
        overrides["scale"] = args.scale
    if getattr(args, "omega_thr", None) is not None:
        overrides["omega_thr"] = args.omega_thr
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    if args.config:
        path = Path(args.config)
        text = path.read_text()  # OSError -> exit 3
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MeshParseError(str(path), "config",
                                 f"not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return RunConfig.from_dict(data).with_overrides(overrides)
    return RunConfig().with_overrides(overrides)


# --------------------------------------------------------------------------
# record assembly

def contain_record(result: ContainabilityResult, runtime: float,
                   timings: bool) -> dict:
    grid = result.grid
    rec = {
        "mesh": result.mesh_name,
        "omega": float(result.omega),
        "n_in": result.n_in,
        "n_drop": result.n_drop,
        "n_x": grid.n_x,
        "n_y": grid.n_y,
        "n_z": grid.n_z,
        "scale_s": float(grid.scale_s),
        "is_open_container": result.is_open_container,
        "footprint": [[float(x), float(y)] for x, y in result.footprint.points],
    }
    if timings:
        rec["runtime_seconds"] = runtime
    return rec


def pour_record(plan: PourPlan, runtime: float, timings: bool) -> dict:
    rec = {
        "table": [[float(v) for v in row] for row in plan.table],
        "i_star": plan.i_star,
        "j_star": plan.j_star,
        "theta_star_rad": float(plan.theta_star),
        "p_star": [float(v) for v in plan.p_star],
        "R_init": [float(v) for v in plan.init_pose.rotation.ravel()],
        "t_init": [float(v) for v in plan.init_pose.translation],
        "n_pour": plan.n_pour,
        "gamma0_rad": float(plan.gamma0),
    }
    if timings:
        rec["runtime_seconds"] = runtime
    return rec


def eval_record(report: EvalReport, timings: bool) -> dict:
    rec = {
        "accuracy": float(report.accuracy),
        "auc": float(report.auc),
        "confusion": {
            "true_pos": report.true_pos,
            "false_pos": report.false_pos,
            "true_neg": report.true_neg,
            "false_neg": report.false_neg,
        },
        "n_entries": len(report.rows),
        "entries": [
            {
                "mesh": r.mesh,
                "category": r.category,
                "label": r.label,
                "omega": float(r.omega),
                "predicted": r.predicted,
                "n_in": r.n_in,
                "n_drop": r.n_drop,
                "failed": r.failed,
                "error": r.error,
            }
            for r in report.rows
        ],
    }
    if timings:
        rec["runtime_seconds"] = report.runtime_seconds
    return rec


def eval_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mesh", "category", "label", "omega", "predicted",
                "n_in", "n_drop", "failed", "error"])
    for r in report.rows:
        w.writerow([r.mesh, r.category, str(r.label).lower(),
                    format_float(r.omega), str(r.predicted).lower(),
                    r.n_in, r.n_drop, str(r.failed).lower(), r.error])
    return buf.getvalue()


def _frame_sink(fh):
    def sink(world) -> None:
        rec = {
            "step": world.step_count,
            "positions": [[float(c) for c in row] for row in world.positions],
        }
        for key, body in (("object_pose", world.object),
                          ("cup_pose", world.cup)):
            if body is not None:
                rec[key] = {
                    "rotation": [float(v) for v in body.pose.rotation.ravel()],
                    "translation": [float(v) for v in body.pose.translation],
                }
        fh.write(dumps(rec, indent=None) + "\n")
    return sink


def _emit(doc: dict, output: str | None) -> None:
    text = dumps(doc) + "\n"
    sys.stdout.write(text)
    if output:
        Path(output).write_text(text)


# --------------------------------------------------------------------------
# commands

def cmd_contain(args) -> int:
    config = _build_config(args)
    mesh = load_mesh(args.mesh, scale=config.scale)
    start = time.perf_counter()
    if args.export_frames:
        with open(args.export_frames, "w") as fh:
            result = imagine_containability(mesh, config,
                                            frame_sink=_frame_sink(fh))
    else:
        result = imagine_containability(mesh, config)
    _emit(contain_record(result, time.perf_counter() - start, args.timings),
          args.output)
    return 0


def cmd_pour(args) -> int:
    config = _build_config(args)
    mesh = load_mesh(args.mesh, scale=config.scale)
    start = time.perf_counter()
    containability = imagine_containability(mesh, config)
    plan = imagine_pouring(mesh, containability, config)
    if args.export_frames:
        with open(args.export_frames, "w") as fh:
            replay_best_pour(mesh, plan, config, _frame_sink(fh))
    _emit(pour_record(plan, time.perf_counter() - start, args.timings),
          args.output)
    return 0


def cmd_eval(args) -> int:
    config = _build_config(args)
    manifest = load_manifest(args.manifest)
    if len(manifest) == 0:
        sys.stderr.write("opencontain eval: manifest has no entries\n")
        return EXIT_USAGE
    report = evaluate(manifest, config)
    out = Path(args.output)
    out.write_text(dumps(eval_record(report, args.timings)) + "\n")
    out.with_suffix(".csv").write_text(eval_csv(report))
    sys.stdout.write(f"accuracy={report.accuracy:.4f} auc={report.auc:.4f}\n")
    return 0


def cmd_export_frames(args) -> int:
    config = _build_config(args)
    mesh = load_mesh(args.mesh, scale=config.scale)
    with open(args.out, "w") as fh:
        sink = _frame_sink(fh)
        if args.mode == "contain":
            imagine_containability(mesh, config, frame_sink=sink)
        else:
            containability = imagine_containability(mesh, config)
            plan = imagine_pouring(mesh, containability, config)
            replay_best_pour(mesh, plan, config, sink)
    return 0


_COMMANDS = {
    "contain": cmd_contain,
    "pour": cmd_pour,
    "eval": cmd_eval,
    "export-frames": cmd_export_frames,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.ERROR, stream=sys.stderr)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except NotAContainerError as exc:
        sys.stderr.write(f"opencontain: {exc}\n")
        return EXIT_NOT_A_CONTAINER
    except (SimulationUnstableError, SpawnOverlapError, ScheduleOverflowError,
            CupFillError, DegenerateGeometryError) as exc:
        sys.stderr.write(f"opencontain: simulation failed: {exc}\n")
        return EXIT_SIMULATION
    except MissingMeshError as exc:
        sys.stderr.write(f"opencontain: {exc}\n")
        return EXIT_IO
    except (MeshParseError, EmptyMeshError, DuplicatePathError,
            ManifestError) as exc:
        sys.stderr.write(f"opencontain: {exc}\n")
        return EXIT_PARSE
    except (ConfigError, SingleClassError) as exc:
        sys.stderr.write(f"opencontain: {exc}\n")
        return EXIT_USAGE
    except OSError as exc:
        sys.stderr.write(f"opencontain: {exc}\n")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
