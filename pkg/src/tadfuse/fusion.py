"""Weighted Boxes Fusion on temporal segments, with NMS / Soft-NMS baselines.

All fusers work independently per (video, label) group; nothing is ever merged
across classes or videos.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .core import Detection, PredictionSet, Segment, tiou
from .errors import EmptyCluster, EmptyModelList, WeightLengthMismatch

FUSED_MODEL_NAME = "wbf_fused"


class RescaleMode(str, enum.Enum):
    MIN_CLAMP = "min"
    RATIO = "ratio"
    NONE = "none"


class ScoreCombine(str, enum.Enum):
    WEIGHTED_MEAN = "wmean"
    MEAN = "mean"
    MAX = "max"


class SoftNmsMethod(str, enum.Enum):
    LINEAR = "linear"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.55
    skip_threshold: float = 0.0
    rescale_mode: RescaleMode = RescaleMode.MIN_CLAMP
    score_combine: ScoreCombine = ScoreCombine.WEIGHTED_MEAN
    # Empty means "use each PredictionSet's own model_weight".
    model_weights: tuple[float, ...] = ()
    # Baseline knobs, used by nms_fuse / soft_nms_fuse only.
    soft_nms_sigma: float = 0.5
    soft_nms_method: SoftNmsMethod = SoftNmsMethod.GAUSSIAN

    def __post_init__(self) -> None:
        if not 0.0 < self.iou_threshold < 1.0:
            raise ValueError(f"iou_threshold must be in (0, 1), got {self.iou_threshold}")
        if not 0.0 <= self.skip_threshold <= 1.0:
            raise ValueError(f"skip_threshold must be in [0, 1], got {self.skip_threshold}")
        object.__setattr__(self, "rescale_mode", RescaleMode(self.rescale_mode))
        object.__setattr__(self, "score_combine", ScoreCombine(self.score_combine))
        object.__setattr__(self, "soft_nms_method", SoftNmsMethod(self.soft_nms_method))
        object.__setattr__(self, "model_weights", tuple(float(w) for w in self.model_weights))
        if any(not (math.isfinite(w) and w > 0) for w in self.model_weights):
            raise ValueError(f"model weights must be positive, got {list(self.model_weights)}")
        if self.soft_nms_sigma <= 0:
            raise ValueError(f"soft_nms_sigma must be positive, got {self.soft_nms_sigma}")

    @classmethod
    def from_dict(cls, data: dict) -> "FusionConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown fusion config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "iou_threshold": self.iou_threshold,
            "skip_threshold": self.skip_threshold,
            "rescale_mode": self.rescale_mode.value,
            "score_combine": self.score_combine.value,
            "model_weights": list(self.model_weights),
            "soft_nms_sigma": self.soft_nms_sigma,
            "soft_nms_method": self.soft_nms_method.value,
        }


Member = tuple[Detection, float]


def fuse_cluster(
    members: Sequence[Member], score_combine: ScoreCombine = ScoreCombine.WEIGHTED_MEAN
) -> Detection:
    """Collapse a cluster into one detection with an un-rescaled score.

    Boundaries are averaged with weight ``score * model_weight``. If every
    member scores 0 the boundaries fall back to a plain model-weighted mean.
    """
    if not members:
        raise EmptyCluster("cannot fuse an empty cluster")
    if len(members) == 1:
        return members[0][0]
    first = members[0][0]
    coeffs = [d.score * w for d, w in members]
    denom = math.fsum(coeffs)
    if denom <= 0.0:
        coeffs = [w for _, w in members]
        denom = math.fsum(coeffs)
    start = math.fsum(c * d.segment.start for c, (d, _) in zip(coeffs, members)) / denom
    end = math.fsum(c * d.segment.end for c, (d, _) in zip(coeffs, members)) / denom

    score_combine = ScoreCombine(score_combine)
    if score_combine is ScoreCombine.WEIGHTED_MEAN:
        score = math.fsum(d.score * w for d, w in members) / math.fsum(w for _, w in members)
    elif score_combine is ScoreCombine.MEAN:
        score = math.fsum(d.score for d, _ in members) / len(members)
    else:
        score = max(d.score for d, _ in members)
    return Detection(first.video_id, first.label_id, Segment(start, end), score, first.source_model)


def rescale_confidence(
    raw_score: float, cluster_weight_sum: float, total_model_weight: float, mode: RescaleMode
) -> float:
    """Penalise clusters supported by less than the full ensemble weight."""
    mode = RescaleMode(mode)
    if mode is RescaleMode.MIN_CLAMP:
        s = raw_score * min(cluster_weight_sum, total_model_weight) / total_model_weight
    elif mode is RescaleMode.RATIO:
        s = raw_score * cluster_weight_sum / total_model_weight
    else:
        s = raw_score
    return min(1.0, max(0.0, s))


@dataclass
class Cluster:
    members: list[Member]
    fused: Detection
    score_combine: ScoreCombine = ScoreCombine.WEIGHTED_MEAN

    @classmethod
    def start(cls, d: Detection, weight: float,
              score_combine: ScoreCombine = ScoreCombine.WEIGHTED_MEAN) -> "Cluster":
        return cls([(d, weight)], d, score_combine)

    def add(self, d: Detection, weight: float) -> None:
        self.members.append((d, weight))
        self.fused = fuse_cluster(self.members, self.score_combine)

    @property
    def weight_sum(self) -> float:
        return math.fsum(w for _, w in self.members)


def cluster_assign(d: Detection, clusters: Sequence[Cluster], iou_threshold: float) -> Optional[int]:
    """Index of the cluster whose fused segment overlaps ``d`` best.

    Only strictly-above-threshold overlaps count; ties go to the lowest index.
    """
    best, best_iou = None, iou_threshold
    for i, c in enumerate(clusters):
        v = tiou(d.segment, c.fused.segment)
        if v > best_iou:
            best, best_iou = i, v
    return best


def _processing_key(d: Detection):
    s = d.segment
    return (-d.score, d.video_id, s.start, s.end, d.source_model)


def _resolve_weights(inputs: Sequence[PredictionSet], config: FusionConfig) -> list[float]:
    if not inputs:
        raise EmptyModelList("no prediction sets to fuse")
    if config.model_weights:
        if len(config.model_weights) != len(inputs):
            raise WeightLengthMismatch(
                f"{len(config.model_weights)} model weights given for {len(inputs)} prediction sets"
            )
        return list(config.model_weights)
    return [p.model_weight for p in inputs]


def _grouped(inputs: Sequence[PredictionSet], weights: Sequence[float], skip_threshold: float):
    """Tag detections with their input index and group them by (video, label)."""
    groups: dict[tuple[str, int], list[Member]] = defaultdict(list)
    videos: set[str] = set()
    for k, (pset, w) in enumerate(zip(inputs, weights)):
        for vid, dets in pset.results.items():
            videos.add(vid)
            for d in dets:
                if d.score < skip_threshold:
                    continue
                tagged = d if d.source_model == k else Detection(d.video_id, d.label_id, d.segment, d.score, k)
                groups[(vid, d.label_id)].append((tagged, w))
    return groups, videos


@dataclass
class FusionStats:
    groups: int = 0
    clusters: int = 0
    inputs: int = 0
    multi_member_clusters: int = 0


def build_clusters(members: Iterable[Member], iou_threshold: float,
                   score_combine: ScoreCombine = ScoreCombine.WEIGHTED_MEAN) -> list[Cluster]:
    """Greedy WBF clustering of one (video, label) group, in score order."""
    ordered = sorted(members, key=lambda m: _processing_key(m[0]))
    clusters: list[Cluster] = []
    for d, w in ordered:
        idx = cluster_assign(d, clusters, iou_threshold)
        if idx is None:
            clusters.append(Cluster.start(d, w, score_combine))
        else:
            clusters[idx].add(d, w)
    return clusters


def _finalise(c: Cluster, config: FusionConfig, total_weight: float) -> Detection:
    fused = c.fused
    score = rescale_confidence(fused.score, c.weight_sum, total_weight, config.rescale_mode)
    return Detection(fused.video_id, fused.label_id, fused.segment, score, 0)


def wbf_fuse_with_stats(
    inputs: Sequence[PredictionSet], config: FusionConfig = FusionConfig()
) -> tuple[PredictionSet, FusionStats]:
    weights = _resolve_weights(inputs, config)
    total = math.fsum(weights)
    groups, videos = _grouped(inputs, weights, config.skip_threshold)
    results: dict[str, list[Detection]] = {vid: [] for vid in videos}
    stats = FusionStats(groups=len(groups))
    for key in sorted(groups):
        clusters = build_clusters(groups[key], config.iou_threshold, config.score_combine)
        stats.inputs += len(groups[key])
        stats.clusters += len(clusters)
        stats.multi_member_clusters += sum(1 for c in clusters if len(c.members) > 1)
        results[key[0]].extend(_finalise(c, config, total) for c in clusters)
    out = {vid: tuple(sorted(dets, key=_processing_key)) for vid, dets in results.items()}
    return PredictionSet(FUSED_MODEL_NAME, out, 1.0), stats


def wbf_fuse(inputs: Sequence[PredictionSet], config: FusionConfig = FusionConfig()) -> PredictionSet:
    """Fuse several models' predictions with temporal Weighted Boxes Fusion."""
    return wbf_fuse_with_stats(inputs, config)[0]


def _nms_order(d: Detection):
    s = d.segment
    return (-d.score, s.start, s.end - s.start, d.video_id, s.end, d.source_model)


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy hard NMS within one group.

    Score ties are broken by earlier start, then shorter duration.
    """
    remaining = sorted(detections, key=_nms_order)
    kept: list[Detection] = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [d for d in remaining if tiou(best.segment, d.segment) < iou_threshold]
    return kept


def soft_nms(
    detections: Sequence[Detection],
    iou_threshold: float,
    sigma: float = 0.5,
    method: SoftNmsMethod = SoftNmsMethod.GAUSSIAN,
) -> list[Detection]:
    """Soft-NMS within one group: overlapping scores decay, nothing is removed.

    LINEAR decays by ``1 - tIoU`` once the overlap reaches ``iou_threshold``;
    GAUSSIAN decays by ``exp(-tIoU**2 / sigma)`` regardless of the threshold.
    """
    method = SoftNmsMethod(method)
    pending = list(detections)
    kept: list[Detection] = []
    while pending:
        i = min(range(len(pending)), key=lambda j: _nms_order(pending[j]))
        best = pending.pop(i)
        kept.append(best)
        decayed = []
        for d in pending:
            v = tiou(best.segment, d.segment)
            if method is SoftNmsMethod.LINEAR:
                factor = 1.0 - v if v >= iou_threshold else 1.0
            else:
                factor = math.exp(-(v * v) / sigma)
            decayed.append(d if factor == 1.0 else d.with_score(d.score * factor))
        pending = decayed
    return kept


def _pooled_fuse(inputs, config, name, fuser) -> PredictionSet:
    weights = _resolve_weights(inputs, config)
    groups, videos = _grouped(inputs, weights, config.skip_threshold)
    results: dict[str, list[Detection]] = {vid: [] for vid in videos}
    for key in sorted(groups):
        results[key[0]].extend(fuser([d for d, _ in groups[key]]))
    out = {vid: tuple(sorted(dets, key=_processing_key)) for vid, dets in results.items()}
    return PredictionSet(name, out, 1.0)


def nms_fuse(inputs: Sequence[PredictionSet], config: FusionConfig = FusionConfig()) -> PredictionSet:
    """Pool all models' detections and apply hard NMS per group."""
    return _pooled_fuse(inputs, config, "nms_fused", lambda ds: nms(ds, config.iou_threshold))


def soft_nms_fuse(inputs: Sequence[PredictionSet], config: FusionConfig = FusionConfig()) -> PredictionSet:
    """Pool all models' detections and apply Soft-NMS per group."""
    return _pooled_fuse(
        inputs, config, "soft_nms_fused",
        lambda ds: soft_nms(ds, config.iou_threshold, config.soft_nms_sigma, config.soft_nms_method),
    )
