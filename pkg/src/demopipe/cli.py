"""Command-line interface.

Subcommands:
  synth             emit a synthetic session (ground truth included)
  measure-latency   estimate per-stream latencies from a session's sync phase
  calibrate-handeye solve AX = YB from a pose-pair log
  process           turn a session into a validated episode container
  validate          re-validate an episode container
  inspect           static diagnostic plots for an episode

Exit codes: 0 success, 1 validation failure, 2 input error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .calibio import CalibrationFile
from .episode import import_episode, export_episode, validate_episode
from .errors import DemopipeError, EpisodeRejected
from .geometry import Handedness, RigidTransform, lh_to_rh
from .handeye import CalibrationSet, solve_ax_yb
from .pipeline import ingest_recording, measure_session_latencies, process_episode
from .sync import SKEW_THRESHOLD


def _cmd_synth(args) -> int:
    from .oracle import emit_session, load_scenario

    spec = load_scenario(args.scenario)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    emit_session(spec, args.output)
    print(f"session written to {args.output}")
    return 0


def _cmd_measure_latency(args) -> int:
    raw = ingest_recording(args.session)
    records = measure_session_latencies(raw)
    if not records:
        print("error: session has no sync phase", file=sys.stderr)
        return 2
    calib = CalibrationFile.load(args.output) if Path(args.output).exists() else CalibrationFile()
    device_cfg = Path(args.session) / "device_config.txt"
    if device_cfg.exists():
        calib.merge_from(CalibrationFile.load(device_cfg))
    for rec in records.values():
        calib.set_latency(rec)
    calib.save(args.output)
    for sid in sorted(records):
        r = records[sid]
        print(f"{sid}: latency {r.t_latency * 1e3:.1f} ms over {r.sample_count} samples (spread {r.spread * 1e3:.1f} ms)")
    print(f"calibration updated: {args.output}")
    return 0


def _read_pose_pairs(path: Path) -> CalibrationSet:
    handedness = Handedness.RIGHT
    pairs = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "wq_handedness" in line and "left" in line.lower().split(":")[-1]:
                handedness = Handedness.LEFT
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 14:
            raise DemopipeError("pose-pair lines need 14 numbers (two tx..qw tuples)")
        a = RigidTransform(np.array(vals[3:7]), np.array(vals[0:3]), handedness)
        if handedness is Handedness.LEFT:
            a = lh_to_rh(a)
        b = RigidTransform(np.array(vals[10:14]), np.array(vals[7:10]))
        pairs.append((a, b))
    return CalibrationSet(pairs=tuple(pairs))


def _cmd_calibrate_handeye(args) -> int:
    cal = _read_pose_pairs(Path(args.pose_pairs))
    result = solve_ax_yb(cal)
    calib = CalibrationFile.load(args.output) if Path(args.output).exists() else CalibrationFile()
    calib.set_handeye(args.device_id, result)
    calib.save(args.output)
    print(
        f"{args.device_id}: residuals {result.residual_rot:.4f} deg / "
        f"{result.residual_trans * 1e3:.3f} mm over {len(cal.pairs)} pairs"
    )
    print(f"calibration updated: {args.output}")
    return 0


def _cmd_process(args) -> int:
    raw = ingest_recording(args.session)
    calib = CalibrationFile.load(args.calib)
    try:
        episode, report = process_episode(
            raw,
            calib,
            compensate_latency=not args.no_latency_compensation,
            skew_threshold=args.skew_threshold,
        )
    except EpisodeRejected as e:
        print(e.report.to_json())
        print(f"episode rejected: {e}", file=sys.stderr)
        return 1
    export_episode(episode, args.output)
    print(report.to_json())
    print(f"episode with {len(episode.frames)} frames written to {args.output}")
    return 0 if report.passed else 1


def _cmd_validate(args) -> int:
    episode = import_episode(args.episode)
    report = validate_episode(episode)
    print(report.to_json())
    return 0 if report.passed else 1


def _cmd_inspect(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    episode = import_episode(args.episode)
    out = Path(args.plot)
    out.mkdir(parents=True, exist_ok=True)
    ts = np.array([f.t for f in episode.frames])

    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(ts, [f.skew * 1e3 for f in episode.frames], ".-")
    ax.axhline(SKEW_THRESHOLD * 1e3, color="r", ls="--", label="validity window")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("skew [ms]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "skew.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3))
    for hand, idx in (("left", 0), ("right", 1)):
        ax.plot(ts, [f.grippers[idx].width * 1e3 for f in episode.frames], label=hand)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("gripper width [mm]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "widths.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 3))
    for hand, idx in (("left", 0), ("right", 1)):
        mags = [np.linalg.norm(f.deltas[idx].translation) * 1e3 for f in episode.frames]
        ax.plot(ts, mags, label=hand)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("|delta translation| [mm]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "deltas.png", dpi=120)
    plt.close(fig)

    fig = plt.figure(figsize=(6, 6))
    ax = fig.add_subplot(projection="3d")
    mid = episode.frames[len(episode.frames) // 2]
    for cloud, label in zip(mid.clouds, ("left0", "left1", "right0", "right1")):
        pts = cloud.points
        ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2], s=3, label=label)
    ax.set_title(f"tactile clouds at t={mid.t:.2f}s")
    ax.legend()
    fig.savefig(out / "clouds.png", dpi=120)
    plt.close(fig)

    print(f"plots written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="demopipe", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"demopipe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="emit a synthetic session")
    p.add_argument("scenario", help="builtin scenario name or JSON spec file")
    p.add_argument("-o", "--output", required=True, help="session directory to create")
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("measure-latency", help="estimate per-stream latencies")
    p.add_argument("session", help="session directory with a sync/ phase")
    p.add_argument("-o", "--output", required=True, help="calibration file to update")
    p.set_defaults(fn=_cmd_measure_latency)

    p = sub.add_parser("calibrate-handeye", help="solve AX = YB from pose pairs")
    p.add_argument("pose_pairs", help="pose-pair log file")
    p.add_argument("-o", "--output", required=True, help="calibration file to update")
    p.add_argument("--device-id", default="left", help="device entry to write (default: left)")
    p.set_defaults(fn=_cmd_calibrate_handeye)

    p = sub.add_parser("process", help="process a session into an episode")
    p.add_argument("session", help="session directory")
    p.add_argument("--calib", required=True, help="calibration file")
    p.add_argument("-o", "--output", required=True, help="episode container to write")
    p.add_argument(
        "--no-latency-compensation",
        action="store_true",
        help="match streams on raw reception times (ablation)",
    )
    p.add_argument("--skew-threshold", type=float, default=SKEW_THRESHOLD, help="validity window, seconds")
    p.set_defaults(fn=_cmd_process)

    p = sub.add_parser("validate", help="validate an episode container")
    p.add_argument("episode", help="episode file")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("inspect", help="write diagnostic plots for an episode")
    p.add_argument("episode", help="episode file")
    p.add_argument("--plot", required=True, help="output directory for plots")
    p.set_defaults(fn=_cmd_inspect)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DemopipeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
