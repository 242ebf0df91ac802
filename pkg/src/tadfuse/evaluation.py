"""Class-averaged mAP over a list of tIoU thresholds."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .core import Detection, GroundTruthInstance, GroundTruthSet, PredictionSet, tiou
from .errors import UnknownLabel, UnknownVideo, ZeroGroundTruth

log = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class EvalConfig:
    tiou_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    max_detections_per_video: Optional[int] = None
    min_score: float = 0.0
    # "error" raises UnknownVideo; "drop" logs a warning and ignores the video.
    unknown_video: str = "error"

    def __post_init__(self) -> None:
        ts = tuple(float(t) for t in self.tiou_thresholds)
        object.__setattr__(self, "tiou_thresholds", ts)
        if not ts:
            raise ValueError("at least one tIoU threshold is required")
        for t in ts:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"tIoU threshold {t} outside (0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"tIoU thresholds must be strictly increasing, got {list(ts)}")
        if self.max_detections_per_video is not None and self.max_detections_per_video < 1:
            raise ValueError("max_detections_per_video must be a positive integer")
        if self.unknown_video not in ("error", "drop"):
            raise ValueError(f"unknown_video must be 'error' or 'drop', got {self.unknown_video!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "EvalConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown eval config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "tiou_thresholds": list(self.tiou_thresholds),
            "max_detections_per_video": self.max_detections_per_video,
            "min_score": self.min_score,
            "unknown_video": self.unknown_video,
        }


def score_order_key(d: Detection):
    s = d.segment
    return (-d.score, d.video_id, s.start, s.end)


def match_detections(
    preds: Sequence[Detection], gts: Sequence[GroundTruthInstance], threshold: float
) -> tuple[list[tuple[Detection, bool]], int]:
    """Greedily label one class's detections as true or false positives.

    Detections are visited in descending score order. Each one claims the
    still-unmatched ground truth in its video with the highest tIoU, provided
    that overlap reaches ``threshold``.
    """
    by_video: dict[str, list[GroundTruthInstance]] = defaultdict(list)
    for g in gts:
        by_video[g.video_id].append(g)
    # Equal-tIoU ties go to the earliest GT segment, independent of input order.
    for items in by_video.values():
        items.sort(key=lambda g: (g.segment.start, g.segment.end))
    used = {vid: [False] * len(items) for vid, items in by_video.items()}

    out = []
    for d in sorted(preds, key=score_order_key):
        candidates = by_video.get(d.video_id, ())
        taken = used.get(d.video_id)
        best, best_iou = -1, -1.0
        for j, g in enumerate(candidates):
            if taken[j]:
                continue
            v = tiou(d.segment, g.segment)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0 and best_iou >= threshold:
            taken[best] = True
            out.append((d, True))
        else:
            out.append((d, False))
    return out, len(gts)


def average_precision(flags: Sequence[bool], num_gt: int) -> float:
    """All-points interpolated AP of a score-ordered TP/FP sequence.

    Precision is replaced by its running maximum from the right; recall only
    moves at true positives (by ``1/num_gt`` each), so AP is the mean of the
    interpolated precision at the true positives, divided over all GT.
    """
    if num_gt <= 0:
        raise ZeroGroundTruth("average precision is undefined without ground truth")
    n = len(flags)
    if n == 0:
        return 0.0
    precision = [0.0] * n
    tp = 0
    for i, f in enumerate(flags):
        tp += bool(f)
        precision[i] = tp / (i + 1)
    for i in range(n - 2, -1, -1):
        if precision[i + 1] > precision[i]:
            precision[i] = precision[i + 1]
    return math.fsum(p for p, f in zip(precision, flags) if f) / num_gt


@dataclass
class EvalReport:
    label_names: tuple[str, ...]
    thresholds: tuple[float, ...]
    per_class_ap: dict[tuple[int, float], float]
    map_per_threshold: dict[float, float]
    avg_map: float
    gt_counts: dict[int, int]
    detection_counts: dict[int, int]
    excluded_labels: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        per_class = {}
        for lid, name in enumerate(self.label_names):
            if lid in self.excluded_labels:
                continue
            per_class[name] = {_fmt_t(t): self.per_class_ap[(lid, t)] for t in self.thresholds}
        return {
            "avg_map": self.avg_map,
            "map_per_threshold": {_fmt_t(t): v for t, v in self.map_per_threshold.items()},
            "tiou_thresholds": list(self.thresholds),
            "per_class_ap": per_class,
            "counts": {
                name: {
                    "gt_instances": self.gt_counts.get(lid, 0),
                    "detections": self.detection_counts.get(lid, 0),
                    "excluded": lid in self.excluded_labels,
                }
                for lid, name in enumerate(self.label_names)
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["label", "threshold", "ap"])
        for lid, name in enumerate(self.label_names):
            if lid in self.excluded_labels:
                continue
            for t in self.thresholds:
                w.writerow([name, _fmt_t(t), repr(self.per_class_ap[(lid, t)])])
        for t in self.thresholds:
            w.writerow(["__mean__", _fmt_t(t), repr(self.map_per_threshold[t])])
        w.writerow(["__mean__", "avg", repr(self.avg_map)])
        return buf.getvalue()


def _fmt_t(t: float) -> str:
    return f"{t:g}"


def evaluate(preds: PredictionSet, gt: GroundTruthSet, config: EvalConfig = EvalConfig()) -> EvalReport:
    space = gt.label_space
    kept: list[Detection] = []
    for vid in sorted(preds.results):
        dets = preds.results[vid]
        if vid not in gt.videos:
            if not dets:
                continue
            if config.unknown_video == "error":
                raise UnknownVideo(f"predictions reference video {vid!r} absent from ground truth")
            log.warning("dropping %d detections for unknown video %r", len(dets), vid)
            continue
        for d in dets:
            if not space.is_valid(d.label_id):
                raise UnknownLabel(f"video {vid!r}: label id {d.label_id} not in label space")
        dets = [d for d in dets if d.score >= config.min_score]
        dets.sort(key=score_order_key)
        if config.max_detections_per_video is not None:
            dets = dets[: config.max_detections_per_video]
        kept.extend(dets)

    preds_by_label: dict[int, list[Detection]] = defaultdict(list)
    for d in kept:
        preds_by_label[d.label_id].append(d)
    gts_by_label: dict[int, list[GroundTruthInstance]] = defaultdict(list)
    for inst in gt.instances():
        gts_by_label[inst.label_id].append(inst)

    scored = [lid for lid in range(len(space)) if gts_by_label.get(lid)]
    excluded = [lid for lid in range(len(space)) if not gts_by_label.get(lid)]
    per_class: dict[tuple[int, float], float] = {}
    for lid in scored:
        for t in config.tiou_thresholds:
            matched, num_gt = match_detections(preds_by_label.get(lid, ()), gts_by_label[lid], t)
            per_class[(lid, t)] = average_precision([tp for _, tp in matched], num_gt)

    map_per_t = {}
    for t in config.tiou_thresholds:
        vals = [per_class[(lid, t)] for lid in scored]
        map_per_t[t] = math.fsum(vals) / len(vals) if vals else 0.0
    avg = math.fsum(map_per_t.values()) / len(map_per_t)
    return EvalReport(
        label_names=space.names,
        thresholds=config.tiou_thresholds,
        per_class_ap=per_class,
        map_per_threshold=map_per_t,
        avg_map=avg,
        gt_counts={lid: len(gts_by_label.get(lid, ())) for lid in range(len(space))},
        detection_counts={lid: len(preds_by_label.get(lid, ())) for lid in range(len(space))},
        excluded_labels=excluded,
    )
