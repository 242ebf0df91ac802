"""Command-line interface: ``tadfuse {fuse,eval,merge,simulate,compare}``.

Exit codes: 0 success, 1 validation/evaluation failure, 2 usage error,
3 I/O or schema error. Every flag can also be supplied through ``--config``
(a JSON object keyed by the flag's long name, dashes or underscores);
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import datasetio
from .core import GroundTruthSet, LabelSpace, PredictionSet
from .errors import (
    BadOverrideTarget,
    InfeasibleConfig,
    InvariantViolation,
    MalformedJson,
    SchemaViolation,
    TadError,
    UnknownLabel,
    UnknownVideo,
    VideoIdCollision,
    WeightLengthMismatch,
)
from .evaluation import DEFAULT_THRESHOLDS, EvalConfig, evaluate
from .fusion import FusionConfig, RescaleMode, ScoreCombine, wbf_fuse, wbf_fuse_with_stats
from .simulator import SimConfig, format_table, run_ensemble_experiment

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3

log = logging.getLogger("tadfuse")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}", EXIT_USAGE)


# ---------------------------------------------------------------- helpers


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from None


def _write(path: str, data: bytes | str) -> None:
    try:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(data, str):
            data = data.encode("utf-8")
        p.write_bytes(data)
    except OSError as exc:
        raise CliError(f"{path}: {exc.strerror or exc}", EXIT_IO) from None


def _load_json_file(path: str) -> dict:
    try:
        doc = json.loads(_read(path).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CliError(f"{path}: malformed JSON: {exc}", EXIT_IO) from None
    if not isinstance(doc, dict):
        raise CliError(f"{path}: expected a JSON object", EXIT_IO)
    return doc


def _load_gt(path: str) -> GroundTruthSet:
    try:
        return datasetio.load_ground_truth(_read(path))
    except (MalformedJson, SchemaViolation, InvariantViolation) as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None


def _load_preds(path: str, space: LabelSpace) -> PredictionSet:
    try:
        return datasetio.load_predictions(_read(path), space)
    except (MalformedJson, SchemaViolation, InvariantViolation) as exc:
        raise CliError(f"{path}: {exc}", EXIT_IO) from None


def _labels_from_predictions(paths: Sequence[str]) -> LabelSpace:
    """Label space spanned by a set of prediction files, in first-seen order."""
    names: dict[str, str] = {}
    for path in paths:
        try:
            doc = json.loads(_read(path).decode("utf-8"))
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CliError(f"{path}: malformed JSON: {exc}", EXIT_IO) from None
        results = doc.get("results") if isinstance(doc, dict) else None
        if not isinstance(results, dict):
            continue
        for items in results.values():
            for item in items if isinstance(items, list) else ():
                label = item.get("label") if isinstance(item, dict) else None
                if isinstance(label, str):
                    names.setdefault(label.strip().casefold(), label)
    return LabelSpace(names.values())


def _apply_config(args: argparse.Namespace, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the --config file, then from built-in defaults."""
    config = {}
    if getattr(args, "config", None):
        raw = _load_json_file(args.config)
        config = {k.replace("-", "_"): v for k, v in raw.items()}
        unknown = set(config) - set(defaults)
        if unknown:
            raise CliError(f"{args.config}: unknown keys {sorted(unknown)}", EXIT_USAGE)
    for key, default in defaults.items():
        if getattr(args, key, None) is None:
            setattr(args, key, config.get(key, default))
    return args


def _parse_thresholds(value) -> tuple[float, ...]:
    if isinstance(value, str):
        try:
            return tuple(float(v) for v in value.split(",") if v.strip())
        except ValueError:
            raise CliError(f"bad --thresholds value {value!r}", EXIT_USAGE) from None
    return tuple(float(v) for v in value)


def _fusion_config(args) -> FusionConfig:
    try:
        return FusionConfig(
            iou_threshold=args.iou_thr,
            skip_threshold=args.skip_thr,
            rescale_mode=RescaleMode(args.rescale),
            score_combine=ScoreCombine(args.score_combine),
            model_weights=tuple(args.weight or ()),
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _eval_config(args) -> EvalConfig:
    try:
        return EvalConfig(
            tiou_thresholds=_parse_thresholds(args.thresholds),
            max_detections_per_video=args.max_dets,
            unknown_video="drop" if getattr(args, "drop_unknown_videos", False) else "error",
        )
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


FUSE_DEFAULTS = {
    "pred": None, "weight": None, "iou_thr": 0.55, "skip_thr": 0.0,
    "rescale": "min", "score_combine": "wmean", "out": None,
}
EVAL_DEFAULTS = {
    "gt": None, "pred": None, "thresholds": ",".join(f"{t:g}" for t in DEFAULT_THRESHOLDS),
    "max_dets": None, "out": None, "csv": None, "drop_unknown_videos": False,
}
MERGE_DEFAULTS = {"primary": None, "aux": None, "map": None, "prefix": "ssv2", "out": None, "report": None}
SIMULATE_DEFAULTS = {"sim_config": None, "fusion_config": None, "eval_config": None, "out": None, "table": None}
COMPARE_DEFAULTS = {**FUSE_DEFAULTS, **EVAL_DEFAULTS, "fused": None}


def _add_fusion_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--weight", type=float, action="append", help="model weight, once per --pred, in order")
    p.add_argument("--iou-thr", type=float, help="cluster tIoU threshold (default 0.55)")
    p.add_argument("--skip-thr", type=float, help="drop detections scoring below this (default 0)")
    p.add_argument("--rescale", choices=[m.value for m in RescaleMode])
    p.add_argument("--score-combine", choices=[m.value for m in ScoreCombine])


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--thresholds", help="comma-separated increasing tIoU thresholds")
    p.add_argument("--max-dets", type=int, help="keep at most this many detections per video")
    p.add_argument("--drop-unknown-videos", action="store_true", default=None,
                   help="warn and ignore predictions for videos missing from the ground truth")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tadfuse", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fuse", help="fuse prediction files with temporal WBF")
    p.add_argument("--config")
    p.add_argument("--pred", action="append", help="prediction file (repeat)")
    _add_fusion_flags(p)
    p.add_argument("--labels", help="ground-truth file whose label list orders the output labels")
    p.add_argument("--out")

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--config")
    p.add_argument("--gt")
    p.add_argument("--pred")
    _add_eval_flags(p)
    p.add_argument("--out", help="write the full report as JSON")
    p.add_argument("--csv", help="write label,threshold,ap rows")

    p = sub.add_parser("merge", help="merge auxiliary annotations into a primary label space")
    p.add_argument("--config")
    p.add_argument("--primary")
    p.add_argument("--aux")
    p.add_argument("--map", help="JSON object of source-label -> target-label overrides")
    p.add_argument("--prefix", help="namespace for aux video ids (default ssv2)")
    p.add_argument("--out")
    p.add_argument("--report")

    p = sub.add_parser("simulate", help="run the synthetic ensemble experiment")
    p.add_argument("--config", dest="sim_config", help="SimConfig JSON")
    p.add_argument("--fusion-config")
    p.add_argument("--eval-config")
    p.add_argument("--out", help="write ExperimentReport JSON")
    p.add_argument("--table", help="also write the human-readable table here")

    p = sub.add_parser("compare", help="tabulate avg mAP of several prediction files and their fusion")
    p.add_argument("--config")
    p.add_argument("--gt")
    p.add_argument("--pred", action="append")
    p.add_argument("--fused", help="pre-fused prediction file; fused on the fly with WBF when omitted")
    _add_fusion_flags(p)
    _add_eval_flags(p)
    p.add_argument("--out", help="write the comparison as JSON")
    return parser


# ---------------------------------------------------------------- commands


def cmd_fuse(args) -> int:
    _apply_config(args, {**FUSE_DEFAULTS, "labels": None})
    if not args.pred:
        raise CliError("fuse: at least one --pred file is required", EXIT_USAGE)
    if not args.out:
        raise CliError("fuse: --out is required", EXIT_USAGE)
    if args.weight and len(args.weight) != len(args.pred):
        raise CliError(
            f"fuse: {len(args.weight)} --weight values for {len(args.pred)} --pred files", EXIT_USAGE
        )
    config = _fusion_config(args)
    space = _load_gt(args.labels).label_space if args.labels else _labels_from_predictions(args.pred)
    inputs = [_load_preds(path, space) for path in args.pred]
    try:
        fused, stats = wbf_fuse_with_stats(inputs, config)
    except WeightLengthMismatch as exc:
        raise CliError(str(exc), EXIT_USAGE) from None
    _write(args.out, datasetio.save_predictions(fused, space))
    print(
        f"fused {stats.inputs} detections in {stats.groups} groups into {stats.clusters} clusters "
        f"({stats.multi_member_clusters} multi-member)",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    _apply_config(args, EVAL_DEFAULTS)
    if not args.gt or not args.pred:
        raise CliError("eval: --gt and --pred are required", EXIT_USAGE)
    config = _eval_config(args)
    gt = _load_gt(args.gt)
    preds = _load_preds(args.pred, gt.label_space)
    try:
        report = evaluate(preds, gt, config)
    except (UnknownVideo, UnknownLabel) as exc:
        raise CliError(f"eval: {exc}", EXIT_FAILURE) from None
    if args.out:
        _write(args.out, report.to_json())
    if args.csv:
        _write(args.csv, report.to_csv())
    print(f"{report.avg_map:.4f}")
    return EXIT_OK


def cmd_merge(args) -> int:
    _apply_config(args, MERGE_DEFAULTS)
    if not args.primary or not args.aux or not args.out:
        raise CliError("merge: --primary, --aux and --out are required", EXIT_USAGE)
    primary = _load_gt(args.primary)
    aux = _load_gt(args.aux)
    overrides = _load_json_file(args.map) if args.map else {}
    if not all(isinstance(k, str) and isinstance(v, str) for k, v in overrides.items()):
        raise CliError(f"{args.map}: overrides must map label names to label names", EXIT_IO)
    try:
        mapping, unmapped = datasetio.build_label_mapping(aux.label_space, primary.label_space, overrides)
    except BadOverrideTarget as exc:
        raise CliError(f"merge: {exc}", EXIT_USAGE) from None
    try:
        merged, report = datasetio.merge_datasets(primary, aux, mapping, args.prefix)
    except VideoIdCollision as exc:
        raise CliError(f"merge: {exc}", EXIT_FAILURE) from None
    _write(args.out, datasetio.save_ground_truth(merged))
    summary = report.to_dict()
    summary["unmapped_labels"] = unmapped
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.report:
        _write(args.report, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        sim = SimConfig.from_dict(_load_json_file(args.sim_config)) if args.sim_config else SimConfig()
        fusion = (FusionConfig.from_dict(_load_json_file(args.fusion_config))
                  if args.fusion_config else FusionConfig())
        ev = EvalConfig.from_dict(_load_json_file(args.eval_config)) if args.eval_config else EvalConfig()
        report = run_ensemble_experiment(sim, fusion, ev)
    except (InfeasibleConfig, ValueError, TypeError) as exc:
        raise CliError(f"simulate: {exc}", EXIT_USAGE) from None
    if args.out:
        _write(args.out, report.to_json())
    if args.table:
        _write(args.table, report.to_table())
    sys.stdout.write(report.to_table())
    return EXIT_OK


def cmd_compare(args) -> int:
    _apply_config(args, COMPARE_DEFAULTS)
    if not args.gt:
        raise CliError("compare: --gt is required", EXIT_USAGE)
    if not args.pred:
        raise CliError("compare: at least one --pred file is required", EXIT_USAGE)
    if args.weight and len(args.weight) != len(args.pred):
        raise CliError(
            f"compare: {len(args.weight)} --weight values for {len(args.pred)} --pred files", EXIT_USAGE
        )
    ev = _eval_config(args)
    gt = _load_gt(args.gt)
    inputs = [_load_preds(path, gt.label_space) for path in args.pred]
    if args.fused:
        fused = _load_preds(args.fused, gt.label_space)
    else:
        fused = wbf_fuse(inputs, _fusion_config(args))

    rows = []
    try:
        for path, p in zip(args.pred, inputs):
            rows.append((p.model_name or Path(path).stem, evaluate(p, gt, ev)))
        rows.append((f"+ WBF ({fused.model_name})", evaluate(fused, gt, ev)))
    except (UnknownVideo, UnknownLabel) as exc:
        raise CliError(f"compare: {exc}", EXIT_FAILURE) from None

    sys.stdout.write(format_table([(name, r.avg_map) for name, r in rows]))
    if args.out:
        doc = {
            "rows": [
                {"name": name, "avg_map": r.avg_map,
                 "map_per_threshold": {f"{t:g}": v for t, v in r.map_per_threshold.items()}}
                for name, r in rows
            ]
        }
        _write(args.out, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "merge": cmd_merge,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        if not args.command:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
