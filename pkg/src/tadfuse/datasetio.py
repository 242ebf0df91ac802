"""JSON ground-truth / prediction files, label mapping and dataset merging.

File layouts::

    ground truth: {"version": "1.0", "labels": [...],
                   "videos": {vid: {"duration": s, "annotations": [{"label", "segment"}]}}}
    predictions:  {"version": "1.0", "model": name, "weight": w,
                   "results": {vid: [{"label", "segment", "score"}]}}

Saving is canonical: keys sorted, numbers written in fixed-point with at most
six fractional digits and no trailing zeros.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Union

from .core import (
    Detection,
    GroundTruthInstance,
    GroundTruthSet,
    LabelSpace,
    PredictionSet,
    Segment,
    VideoAnnotations,
    canonical_label,
    segment_violation,
)
from .errors import (
    BadOverrideTarget,
    InvariantViolation,
    MalformedJson,
    SchemaViolation,
    VideoIdCollision,
)

FORMAT_VERSION = "1.0"
DECIMALS = 6

Source = Union[bytes, str]


# ---------------------------------------------------------------- parsing


def _parse_json(data: Source) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"not valid UTF-8: {exc}") from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _require(obj: Mapping, key: str, kind, where: str):
    if key not in obj:
        raise SchemaViolation(f"{where}: missing field {key!r}")
    value = obj[key]
    ok = _is_number(value) if kind == "number" else isinstance(value, kind)
    if not ok:
        name = kind if isinstance(kind, str) else kind.__name__
        raise SchemaViolation(f"{where}: field {key!r} must be {name}, got {type(value).__name__}")
    return value


def _check_version(doc: Mapping, where: str) -> None:
    version = doc.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        raise SchemaViolation(f"{where}: unsupported version {version!r}")


def _parse_segment(raw: Any, where: str) -> Segment:
    if not (isinstance(raw, list) and len(raw) == 2 and all(_is_number(v) for v in raw)):
        raise SchemaViolation(f"{where}: segment must be a [start, end] pair of numbers")
    start, end = float(raw[0]), float(raw[1])
    problem = segment_violation(start, end)
    if problem is not None:
        raise InvariantViolation(f"{where}: {problem}")
    return Segment(start, end)


def _parse_label(item: Mapping, space: LabelSpace, where: str) -> int:
    name = _require(item, "label", str, where)
    lid = space.index_of(name)
    if lid is None:
        raise InvariantViolation(f"{where}: unknown label {name!r}")
    return lid


def load_ground_truth(data: Source) -> GroundTruthSet:
    doc = _parse_json(data)
    if not isinstance(doc, dict):
        raise SchemaViolation("ground truth: top level must be an object")
    _check_version(doc, "ground truth")
    labels = _require(doc, "labels", list, "ground truth")
    space = LabelSpace(labels)
    videos_raw = _require(doc, "videos", dict, "ground truth")

    videos = {}
    for vid, entry in videos_raw.items():
        where = f"video {vid!r}"
        if not isinstance(entry, dict):
            raise SchemaViolation(f"{where}: entry must be an object")
        duration = float(_require(entry, "duration", "number", where))
        if not (math.isfinite(duration) and duration > 0):
            raise InvariantViolation(f"{where}: duration must be positive")
        anns = _require(entry, "annotations", list, where)
        instances = []
        for i, item in enumerate(anns):
            at = f"{where} annotation {i}"
            if not isinstance(item, dict):
                raise SchemaViolation(f"{at}: must be an object")
            lid = _parse_label(item, space, at)
            seg = _parse_segment(_require(item, "segment", list, at), at)
            if seg.end > duration:
                raise InvariantViolation(f"{at}: segment outside video duration {duration:g}")
            instances.append(GroundTruthInstance(vid, lid, seg))
        videos[vid] = VideoAnnotations(duration, tuple(instances))
    return GroundTruthSet(space, videos)


def load_predictions(data: Source, space: LabelSpace) -> PredictionSet:
    doc = _parse_json(data)
    if not isinstance(doc, dict):
        raise SchemaViolation("predictions: top level must be an object")
    _check_version(doc, "predictions")
    model = _require(doc, "model", str, "predictions")
    weight = float(doc.get("weight", 1.0)) if _is_number(doc.get("weight", 1.0)) else None
    if weight is None:
        raise SchemaViolation("predictions: field 'weight' must be number")
    if not (math.isfinite(weight) and weight > 0):
        raise InvariantViolation(f"predictions: weight must be positive, got {weight}")
    results_raw = _require(doc, "results", dict, "predictions")

    results = {}
    for vid, items in results_raw.items():
        where = f"video {vid!r}"
        if not isinstance(items, list):
            raise SchemaViolation(f"{where}: results must be a list")
        dets = []
        for i, item in enumerate(items):
            at = f"{where} detection {i}"
            if not isinstance(item, dict):
                raise SchemaViolation(f"{at}: must be an object")
            lid = _parse_label(item, space, at)
            seg = _parse_segment(_require(item, "segment", list, at), at)
            score = float(_require(item, "score", "number", at))
            if not 0.0 <= score <= 1.0:
                raise InvariantViolation(f"{at}: score out of range: {score}")
            dets.append(Detection(vid, lid, seg, score))
        results[vid] = tuple(dets)
    return PredictionSet(model, results, weight)


# ---------------------------------------------------------------- saving


def format_number(x: float) -> str:
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    text = f"{x:.{DECIMALS}f}"
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("-0", ""):
        text = "0"
    return text


def _encode(value: Any, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [
            f"{pad}{json.dumps(k, ensure_ascii=False)}: {_encode(value[k], indent, level + 1)}"
            for k in sorted(value)
        ]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, list):
        if not value:
            return "[]"
        # Short numeric lists (segments) stay on one line.
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            return "[" + ", ".join(_encode(v, indent, level) for v in value) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (int, float)):
        return format_number(value)
    return json.dumps(value, ensure_ascii=False)


def canonical_dumps(doc: Any) -> bytes:
    return (_encode(doc, 2, 0) + "\n").encode("utf-8")


def _det_sort_key(item: dict):
    return (item["segment"][0], item["segment"][1], item["label"], -item["score"])


def save_predictions(p: PredictionSet, space: LabelSpace) -> bytes:
    results = {}
    for vid, dets in p.results.items():
        items = [
            {
                "label": space.name_of(d.label_id),
                "segment": [_q(d.segment.start), _q(d.segment.end)],
                "score": _q(d.score),
            }
            for d in dets
        ]
        items.sort(key=_det_sort_key)
        results[vid] = items
    doc = {"version": FORMAT_VERSION, "model": p.model_name, "weight": _q(p.model_weight), "results": results}
    return canonical_dumps(doc)


def save_ground_truth(g: GroundTruthSet) -> bytes:
    videos = {}
    for vid, ann in g.videos.items():
        items = [
            {
                "label": g.label_space.name_of(inst.label_id),
                "segment": [_q(inst.segment.start), _q(inst.segment.end)],
            }
            for inst in ann.instances
        ]
        items.sort(key=lambda it: (it["segment"][0], it["segment"][1], it["label"]))
        videos[vid] = {"duration": _q(ann.duration), "annotations": items}
    doc = {"version": FORMAT_VERSION, "labels": list(g.label_space.names), "videos": videos}
    return canonical_dumps(doc)


def _q(x: float) -> float:
    # Value as it will read back after fixed-point formatting.
    return float(format_number(float(x)))


# ---------------------------------------------------------------- label mapping and merge


class MappingProvenance(str, enum.Enum):
    EXACT_MATCH = "exact"
    OVERRIDE = "override"


@dataclass(frozen=True)
class LabelMapping:
    # canonical source name -> canonical target name
    entries: Mapping[str, str]
    provenance: Mapping[str, MappingProvenance]

    def target_for(self, source_name: str) -> Optional[str]:
        return self.entries.get(canonical_label(source_name))


@dataclass
class MergeReport:
    instances_added: int = 0
    labels_mapped: int = 0
    labels_dropped: list[tuple[str, int]] = field(default_factory=list)
    videos_added: int = 0

    def to_dict(self) -> dict:
        return {
            "instances_added": self.instances_added,
            "labels_mapped": self.labels_mapped,
            "labels_dropped": [{"label": n, "instances": c} for n, c in self.labels_dropped],
            "videos_added": self.videos_added,
        }


def build_label_mapping(
    source: LabelSpace, target: LabelSpace, overrides: Optional[Mapping[str, str]] = None
) -> tuple[LabelMapping, list[str]]:
    """Map source labels onto the target space.

    Overrides take precedence over exact (canonicalised) name matches. Source
    labels with neither are returned in the unmapped list.
    """
    canon_overrides = {}
    for src, dst in (overrides or {}).items():
        if target.index_of(dst) is None:
            raise BadOverrideTarget(f"override {src!r} -> {dst!r}: target not in label space")
        canon_overrides[canonical_label(src)] = canonical_label(dst)

    entries, provenance, unmapped = {}, {}, []
    for name in source.names:
        key = canonical_label(name)
        if key in canon_overrides:
            entries[key] = canon_overrides[key]
            provenance[key] = MappingProvenance.OVERRIDE
        elif target.index_of(name) is not None:
            entries[key] = key
            provenance[key] = MappingProvenance.EXACT_MATCH
        else:
            unmapped.append(name)
    return LabelMapping(entries, provenance), unmapped


def merge_datasets(
    primary: GroundTruthSet, aux: GroundTruthSet, mapping: LabelMapping, prefix: str = "ssv2"
) -> tuple[GroundTruthSet, MergeReport]:
    """Append mapped auxiliary annotations to the primary set.

    Aux videos are renamed ``<prefix>/<id>``; only videos contributing at
    least one mapped instance are added. The primary label space and primary
    videos are left untouched.
    """
    target = primary.label_space
    for name in set(mapping.entries.values()):
        if target.index_of(name) is None:
            raise BadOverrideTarget(f"mapping target {name!r} not in primary label space")

    renamed = {vid: f"{prefix}/{vid}" if prefix else vid for vid in aux.videos}
    for vid, new_id in renamed.items():
        if new_id in primary.videos:
            raise VideoIdCollision(f"aux video {vid!r} collides with primary video {new_id!r}")

    relabel: dict[int, Optional[int]] = {}
    for lid, name in enumerate(aux.label_space.names):
        dst = mapping.target_for(name)
        relabel[lid] = target.index_of(dst) if dst is not None else None

    videos = dict(primary.videos)
    dropped: Counter = Counter()
    used_labels: set[int] = set()
    report = MergeReport()
    for vid in sorted(aux.videos):
        ann = aux.videos[vid]
        new_id = renamed[vid]
        kept = []
        for inst in ann.instances:
            dst = relabel[inst.label_id]
            if dst is None:
                dropped[inst.label_id] += 1
                continue
            used_labels.add(inst.label_id)
            kept.append(GroundTruthInstance(new_id, dst, inst.segment))
        if kept:
            videos[new_id] = VideoAnnotations(ann.duration, tuple(kept))
            report.videos_added += 1
            report.instances_added += len(kept)

    report.labels_mapped = len(used_labels)
    report.labels_dropped = sorted(
        ((aux.label_space.name_of(lid), n) for lid, n in dropped.items()), key=lambda x: x[0]
    )
    return GroundTruthSet(target, videos), report
