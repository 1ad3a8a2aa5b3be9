"""Command-line entry point.

Exit codes: 0 on success, 1 on usage errors, 2 on data or invariant errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .camera import CameraModel, max_displacement, motion_radius_from_speed
from .coherence import CoherenceParams, RecoveryRecord, RecoveryResult, recover
from .config import build_env, build_initial_state, load_config
from .loop import (
    CONFIG_FILENAME,
    LOCK_FILENAME,
    STATE_FILENAME,
    LoopPhase,
    LoopState,
    ReviewSubmission,
    decision_from_json,
    ingest_reviews,
    load_state,
    run_iteration,
    save_state,
)
from .metrics import DEFAULT_IOU_THRESHOLDS, MaskMode, MatchPolicy, evaluate
from .sampling import SkipSampler, SplitSpec, alpha_split, select_frames, skip_indicator, support
from .simulate import SimScenario, generate
from .streams import (
    DataError,
    ValidationError,
    detection_to_json,
    load_ground_truth,
    load_stream,
    save_ground_truth,
    save_stream,
)


class _Parser(argparse.ArgumentParser):
    # Usage problems exit 1; argparse's default of 2 is reserved for data errors.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="detloop", description=__doc__)
    parser.add_argument("--version", action="version", version=f"detloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("recover", help="recover weak detections via temporal coherence")
    p.add_argument("--in", dest="stream_in", required=True)
    p.add_argument("--out", dest="stream_out", required=True)
    p.add_argument("--report", dest="report_out")
    p.add_argument("--t-lower", type=float, default=0.5)
    p.add_argument("--t-upper", type=float, default=0.9)
    p.add_argument("--k", type=int, default=4, help="temporal window in frames")
    p.add_argument("--delta-d", type=float, default=60.0, help="per-frame displacement budget (px)")
    p.set_defaults(handler=_cmd_recover)

    p = sub.add_parser("delta-d", help="compute the per-frame displacement bound")
    p.add_argument("--focal-mm", type=float, required=True)
    p.add_argument("--pixel-mm", type=float, required=True)
    p.add_argument("--epsilon-m", type=float, help="inter-frame motion ball radius")
    p.add_argument("--z-min-m", type=float, required=True)
    p.add_argument("--v-max", type=float, help="max linear camera speed (m/s); with --fps replaces --epsilon-m")
    p.add_argument("--fps", type=float)
    p.set_defaults(handler=_cmd_delta_d)

    p = sub.add_parser("sample", help="skip-sample recovered frames and split them")
    p.add_argument("--recovered", required=True, help="recovery report JSONL")
    p.add_argument("--n-frames", type=int, required=True)
    p.add_argument("--skip", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-auto", required=True)
    p.add_argument("--out-human", required=True)
    p.set_defaults(handler=_cmd_sample)

    p = sub.add_parser("evaluate", help="precision/recall/f1 over an IoU sweep")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mask-mode", choices=[m.value for m in MaskMode], default="box")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--csv", help="also write the threshold grid as CSV")
    p.add_argument("--figures-dir", help="render report figures into this directory")
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("simulate", help="generate a synthetic stream and ground truth")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out-stream", required=True)
    p.add_argument("--out-truth", required=True)
    p.add_argument("--out-misslog")
    p.set_defaults(handler=_cmd_simulate)

    p = sub.add_parser("loop", help="self-training loop orchestration")
    loop_sub = p.add_subparsers(dest="loop_command", required=True, parser_class=_Parser)

    q = loop_sub.add_parser("init", help="create a loop workspace from a config")
    q.add_argument("--config", required=True)
    q.add_argument("--workdir", required=True)
    q.set_defaults(handler=_cmd_loop_init)

    q = loop_sub.add_parser("step", help="run one loop iteration")
    q.add_argument("--workdir", required=True)
    q.set_defaults(handler=_cmd_loop_step)

    q = loop_sub.add_parser("status", help="print loop status and history")
    q.add_argument("--workdir", required=True)
    q.add_argument("--json", action="store_true", dest="as_json")
    q.add_argument("--csv", help="write the history ledger as CSV")
    q.add_argument("--figures-dir", help="render history figures into this directory")
    q.set_defaults(handler=_cmd_loop_status)

    q = loop_sub.add_parser("export-pending", help="write frames awaiting review as JSONL")
    q.add_argument("--workdir", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(handler=_cmd_loop_export)

    q = loop_sub.add_parser("ingest-reviews", help="apply reviewed annotations from a JSONL file")
    q.add_argument("--workdir", required=True)
    q.add_argument("--reviews", required=True)
    q.set_defaults(handler=_cmd_loop_ingest)

    p = sub.add_parser("serve", help="run the review service over a loop workspace")
    p.add_argument("--workdir", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--ui-dir", help="built review UI bundle to serve statically")
    p.set_defaults(handler=_cmd_serve)

    return parser


# --- Handlers ---------------------------------------------------------------

def _cmd_recover(args: argparse.Namespace) -> int:
    params = CoherenceParams(
        t_lower=args.t_lower, t_upper=args.t_upper, window=args.k, max_displacement=args.delta_d
    )
    stream = load_stream(args.stream_in)
    result = recover(stream, params)
    save_stream(result.stream, args.stream_out)
    if args.report_out:
        _write_recovery_report(result, args.report_out)
    print(
        f"recovered {len(result.records)} detections across "
        f"{len(result.recovered_frames)} frames -> {args.stream_out}"
    )
    return 0


def _write_recovery_report(result: RecoveryResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in result.records:
            handle.write(json.dumps(_record_to_json(record)) + "\n")


def _record_to_json(record: RecoveryRecord) -> dict[str, Any]:
    return {
        "frame": record.frame_index,
        "detection": record.detection_index,
        "lag": record.lag,
        "ref_near": list(record.ref_near),
        "ref_far": list(record.ref_far),
        "original_score": record.original_score,
        "updated_score": record.updated_score,
    }


def _cmd_delta_d(args: argparse.Namespace) -> int:
    if args.epsilon_m is not None:
        radius = args.epsilon_m
    elif args.v_max is not None and args.fps is not None:
        radius = motion_radius_from_speed(args.v_max, args.fps)
    else:
        raise ValidationError("provide --epsilon-m, or --v-max together with --fps")
    cam = CameraModel(
        focal_mm=args.focal_mm,
        pixel_mm=args.pixel_mm,
        motion_radius_m=radius,
        min_depth_m=args.z_min_m,
        fps=args.fps,
        max_speed_mps=args.v_max,
    )
    print(f"{max_displacement(cam):g}")
    return 0


def _cmd_sample(args: argparse.Namespace) -> int:
    recovered_frames: set[int] = set()
    with open(args.recovered, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                recovered_frames.add(int(json.loads(line)["frame"]))
    out_of_range = sorted(f for f in recovered_frames if f >= args.n_frames)
    if out_of_range:
        raise ValidationError(f"recovered frames outside the timeline: {out_of_range}")
    indicator = np.zeros(args.n_frames, dtype=np.int64)
    indicator[sorted(recovered_frames)] = 1
    selected = support(select_frames(indicator, skip_indicator(SkipSampler(args.skip), args.n_frames)))
    auto, human = alpha_split(selected, SplitSpec(alpha=args.alpha, seed=args.seed))
    Path(args.out_auto).write_text("".join(f"{f}\n" for f in auto), encoding="utf-8")
    Path(args.out_human).write_text("".join(f"{f}\n" for f in human), encoding="utf-8")
    print(f"sampled {len(selected)} of {len(recovered_frames)} recovered frames "
          f"-> {len(auto)} auto, {len(human)} human")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    pred = load_stream(args.pred)
    truth = load_ground_truth(args.gt)
    policy = MatchPolicy(iou_thresholds=DEFAULT_IOU_THRESHOLDS, mask_mode=MaskMode(args.mask_mode))
    report = evaluate(pred, truth, policy)
    with open(args.out, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, indent=1)
    if args.csv:
        _write_report_csv(report, args.csv)
    if args.figures_dir:
        from .plots import save_class_precision, save_threshold_curves

        figures = Path(args.figures_dir)
        figures.mkdir(parents=True, exist_ok=True)
        save_threshold_curves(report, figures / "metrics_vs_iou.png")
        if report.mask_mode is MaskMode.POLYGON_RASTER:
            save_class_precision(report, policy.iou_thresholds[len(policy.iou_thresholds) // 2],
                                 figures / "class_precision.png")
    row = report.thresholds[len(report.thresholds) // 2]
    print(f"IoU {row.iou:g}: precision {row.precision:.3f} recall {row.recall:.3f} f1 {row.f1:.3f}")
    return 0


def _write_report_csv(report, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        header = ["iou", "tp", "fp", "fn", "precision", "recall", "f1"]
        has_mp = any(row.mean_precision is not None for row in report.thresholds)
        if has_mp:
            header.append("mean_precision")
        writer.writerow(header)
        for row in report.thresholds:
            values = [row.iou, row.tp, row.fp, row.fn, row.precision, row.recall, row.f1]
            if has_mp:
                values.append(row.mean_precision)
            writer.writerow(values)


def _cmd_simulate(args: argparse.Namespace) -> int:
    with open(args.scenario, encoding="utf-8") as handle:
        scenario = SimScenario.from_dict(json.load(handle))
    output = generate(scenario)
    save_stream(output.stream, args.out_stream)
    save_ground_truth(output.truth, args.out_truth)
    if args.out_misslog:
        with open(args.out_misslog, "w", encoding="utf-8") as handle:
            for miss in output.miss_log:
                handle.write(json.dumps({
                    "frame": miss.frame_index, "track": miss.track_index, "kind": miss.kind,
                }) + "\n")
    print(f"generated {output.stream.frame_count} frames, "
          f"{output.truth.total_objects()} ground-truth objects")
    return 0


# --- Loop workspace helpers -------------------------------------------------

def _workspace_lock(workdir: Path):
    from filelock import FileLock

    return FileLock(workdir / LOCK_FILENAME)


def _load_workspace(workdir: str) -> tuple[Path, LoopState]:
    root = Path(workdir)
    state_path = root / STATE_FILENAME
    if not state_path.exists():
        raise ValidationError(f"no loop state at {state_path}; run 'detloop loop init' first")
    return root, load_state(state_path)


def _cmd_loop_init(args: argparse.Namespace) -> int:
    root = Path(args.workdir)
    root.mkdir(parents=True, exist_ok=True)
    state_path = root / STATE_FILENAME
    if state_path.exists():
        raise ValidationError(f"refusing to overwrite existing loop state at {state_path}")
    config = load_config(args.config)
    build_env(config, root)  # validate adapter/data wiring before writing anything
    state = build_initial_state(config)

    # The workspace copy must keep working wherever it lives: pin the data
    # paths, which load_config resolved relative to the original config.
    record = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for key in ("world_truth", "initial_manifest"):
        if record.get(key) is not None:
            record[key] = str((Path(args.config).parent / record[key]).resolve())
    with _workspace_lock(root):
        save_state(state, state_path)
        (root / CONFIG_FILENAME).write_text(json.dumps(record, indent=1), encoding="utf-8")
    print(f"initialized loop workspace at {root} "
          f"(|T|={len(state.training)}, |V|={len(state.unlabeled)})")
    return 0


def _load_env(root: Path):
    config = load_config(root / CONFIG_FILENAME)
    return build_env(config, root)


def _cmd_loop_step(args: argparse.Namespace) -> int:
    root, state = _load_workspace(args.workdir)
    if state.phase is LoopPhase.AWAITING_REVIEW:
        pending = state.pending.unreviewed() if state.pending else []
        print(f"awaiting review of {len(pending)} frames for iteration {state.iteration}; "
              f"submit reviews via serve or 'loop ingest-reviews'")
        return 0
    if state.phase in (LoopPhase.DONE, LoopPhase.EXHAUSTED):
        print(f"loop already finished: {state.phase.value}")
        return 0
    env = _load_env(root)
    with _workspace_lock(root):
        # Re-read under the lock: the review service may have advanced the
        # state between the check above and here.
        state = load_state(root / STATE_FILENAME)
        state = run_iteration(state, env)
        save_state(state, root / STATE_FILENAME)
    last = state.history[-1] if state.history else None
    if last is not None:
        print(f"iteration {last.iteration}: |T|={last.train_size} "
              f"P={last.precision:.3f} R={last.recall:.3f} f1={last.f1:.3f} "
              f"-> phase {state.phase.value}")
    else:
        print(f"phase {state.phase.value}")
    return 0


def _history_rows(state: LoopState) -> list[dict[str, Any]]:
    return [vars(row).copy() for row in state.history]


def _cmd_loop_status(args: argparse.Namespace) -> int:
    root, state = _load_workspace(args.workdir)
    summary = {
        "iteration": state.iteration,
        "phase": state.phase.value,
        "training_size": len(state.training),
        "unlabeled_size": len(state.unlabeled),
        "pending_frames": state.pending.unreviewed() if state.pending else [],
        "history": _history_rows(state),
    }
    if args.as_json:
        print(json.dumps(summary, indent=1))
    else:
        print(f"iteration {state.iteration} phase {state.phase.value} "
              f"|T|={len(state.training)} |V|={len(state.unlabeled)}")
        for row in state.history:
            print(f"  l={row.iteration} |T|={row.train_size} P={row.precision:.3f} "
                  f"R={row.recall:.3f} f1={row.f1:.3f} recovered={row.recovered} "
                  f"sampled={row.sampled} auto={row.auto} human={row.human}")
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iteration", "train_size", "precision", "recall", "f1",
                             "recovered", "sampled", "auto", "human", "terminated"])
            for row in state.history:
                writer.writerow([row.iteration, row.train_size, row.precision, row.recall,
                                 row.f1, row.recovered, row.sampled, row.auto, row.human,
                                 row.terminated])
    if args.figures_dir and state.history:
        from .plots import save_dataset_sizes, save_history_curves

        env = _load_env(root)
        figures = Path(args.figures_dir)
        figures.mkdir(parents=True, exist_ok=True)
        save_history_curves(state.history, env.criteria, figures / "history_metrics.png")
        save_dataset_sizes(state.history, figures / "dataset_sizes.png")
    return 0


def _cmd_loop_export(args: argparse.Namespace) -> int:
    _, state = _load_workspace(args.workdir)
    pending = state.pending
    with open(args.out, "w", encoding="utf-8") as handle:
        if pending is not None:
            for frame_id in pending.human_frames:
                handle.write(json.dumps({
                    "frame_id": frame_id,
                    "iteration": pending.iteration,
                    "reviewed": frame_id in pending.reviews,
                    "image": pending.images.get(frame_id),
                    "detections": [
                        {"index": idx, **detection_to_json(d)}
                        for idx, d in enumerate(pending.payload[frame_id])
                    ],
                }) + "\n")
    count = len(pending.human_frames) if pending else 0
    print(f"exported {count} pending frames -> {args.out}")
    return 0


def _cmd_loop_ingest(args: argparse.Namespace) -> int:
    root, _ = _load_workspace(args.workdir)
    submissions: dict[str, ReviewSubmission] = {}
    with open(args.reviews, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            frame_id = str(record["frame_id"])
            submissions[frame_id] = ReviewSubmission(
                request_id=record.get("request_id", f"file-{line_no}"),
                decisions=tuple(decision_from_json(d) for d in record.get("decisions", [])),
            )
    with _workspace_lock(root):
        state = load_state(root / STATE_FILENAME)
        state = ingest_reviews(state, submissions)
        save_state(state, root / STATE_FILENAME)
    if state.phase is LoopPhase.AWAITING_REVIEW:
        print(f"stored {len(submissions)} reviews; still awaiting "
              f"{len(state.pending.unreviewed())} frames")
    else:
        print(f"reviews applied; advanced to iteration {state.iteration} "
              f"(|T|={len(state.training)})")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    root, _ = _load_workspace(args.workdir)
    ui_dir = Path(args.ui_dir) if args.ui_dir else None
    if ui_dir is not None and not ui_dir.is_dir():
        raise ValidationError(f"--ui-dir {ui_dir} is not a directory; build the frontend first")
    app = create_app(root, ui_dir=ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except DataError as exc:
        print(f"detloop: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"detloop: error: {exc}", file=sys.stderr)
        return 2
    except KeyError as exc:
        print(f"detloop: error: missing {exc}", file=sys.stderr)
        return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
