"""Domain types and 1D interval geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

from .errors import InvariantViolation


def canonical_label(name: str) -> str:
    """Trim surrounding whitespace and Unicode case-fold."""
    return name.strip().casefold()


def segment_violation(start: float, end: float) -> Optional[str]:
    """Return a description of the first broken segment invariant, or None."""
    if not (math.isfinite(start) and math.isfinite(end)):
        return "non-finite segment boundary"
    if start == end:
        return "zero-duration segment"
    if start > end:
        return "start ≥ end"
    if start < 0:
        return "negative start"
    return None


@dataclass(frozen=True, order=True)
class Segment:
    """A time interval in seconds. Validated on construction."""

    start: float
    end: float

    def __post_init__(self) -> None:
        problem = segment_violation(self.start, self.end)
        if problem is not None:
            raise InvariantViolation(f"{problem}: [{self.start}, {self.end}]")

    @classmethod
    def unchecked(cls, start: float, end: float) -> "Segment":
        # Skips validation; only for building known-bad inputs to validators.
        seg = object.__new__(cls)
        object.__setattr__(seg, "start", start)
        object.__setattr__(seg, "end", end)
        return seg

    @property
    def duration(self) -> float:
        return self.end - self.start

    def shifted(self, offset: float) -> "Segment":
        return Segment(self.start + offset, self.end + offset)

    def scaled(self, factor: float) -> "Segment":
        return Segment(self.start * factor, self.end * factor)


def tiou(a: Segment, b: Segment) -> float:
    """Temporal intersection-over-union of two segments.

    Touching segments (a.end == b.start) have zero intersection and score 0.
    """
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0.0:
        return 0.0
    union = (a.end - a.start) + (b.end - b.start) - inter
    return min(1.0, inter / union)


@dataclass(frozen=True)
class Detection:
    video_id: str
    label_id: int
    segment: Segment
    score: float
    source_model: int = 0

    def with_score(self, score: float) -> "Detection":
        return Detection(self.video_id, self.label_id, self.segment, score, self.source_model)


@dataclass(frozen=True)
class GroundTruthInstance:
    video_id: str
    label_id: int
    segment: Segment


class LabelSpace:
    """Ordered, duplicate-free list of class names with a dense index."""

    def __init__(self, names: Iterable[str]):
        self._names = tuple(names)
        self._index: dict[str, int] = {}
        for i, name in enumerate(self._names):
            if not isinstance(name, str):
                raise InvariantViolation(f"label at index {i} is not a string: {name!r}")
            key = canonical_label(name)
            if not key:
                raise InvariantViolation(f"label at index {i} is empty")
            if key in self._index:
                raise InvariantViolation(
                    f"duplicate label {name!r} (index {i} collides with index {self._index[key]})"
                )
            self._index[key] = i

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LabelSpace) and self._names == other._names

    def __hash__(self) -> int:
        return hash(self._names)

    def __repr__(self) -> str:
        return f"LabelSpace({list(self._names)!r})"

    def index_of(self, name: str) -> Optional[int]:
        return self._index.get(canonical_label(name))

    def name_of(self, label_id: int) -> str:
        return self._names[label_id]

    def is_valid(self, label_id: int) -> bool:
        return isinstance(label_id, int) and not isinstance(label_id, bool) and 0 <= label_id < len(self._names)


def validate_detection(d: Detection, space: LabelSpace) -> Optional[str]:
    """Check a detection against its invariants.

    Returns None when valid, otherwise a short description of the first
    violation found.
    """
    seg = d.segment
    problem = segment_violation(seg.start, seg.end)
    if problem is not None:
        return problem
    if not isinstance(d.score, (int, float)) or math.isnan(d.score):
        return "score is not a number"
    if not 0.0 <= d.score <= 1.0:
        return "score out of range"
    if not space.is_valid(d.label_id):
        return "unknown label"
    return None


@dataclass(frozen=True)
class VideoAnnotations:
    duration: float
    instances: tuple[GroundTruthInstance, ...] = ()


def _detection_key(d) -> tuple:
    s = d.segment
    return (s.start, s.end, d.label_id, getattr(d, "score", 0.0), getattr(d, "source_model", 0))


@dataclass(frozen=True, eq=False)
class GroundTruthSet:
    label_space: LabelSpace
    videos: Mapping[str, VideoAnnotations] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for vid, ann in self.videos.items():
            if not (math.isfinite(ann.duration) and ann.duration > 0):
                raise InvariantViolation(f"video {vid!r}: duration must be positive, got {ann.duration}")
            for i, inst in enumerate(ann.instances):
                if inst.video_id != vid:
                    raise InvariantViolation(f"video {vid!r} annotation {i}: belongs to {inst.video_id!r}")
                if inst.segment.end > ann.duration:
                    raise InvariantViolation(
                        f"video {vid!r} annotation {i}: segment outside video duration {ann.duration}"
                    )
                if not self.label_space.is_valid(inst.label_id):
                    raise InvariantViolation(f"video {vid!r} annotation {i}: unknown label")

    def __eq__(self, other: object) -> bool:
        # Annotation order within a video carries no meaning.
        if not isinstance(other, GroundTruthSet):
            return NotImplemented
        if self.label_space != other.label_space or set(self.videos) != set(other.videos):
            return False
        for vid, ann in self.videos.items():
            theirs = other.videos[vid]
            if ann.duration != theirs.duration:
                return False
            if sorted(ann.instances, key=_detection_key) != sorted(theirs.instances, key=_detection_key):
                return False
        return True

    __hash__ = None

    def instances(self) -> list[GroundTruthInstance]:
        return [inst for vid in sorted(self.videos) for inst in self.videos[vid].instances]

    def num_instances(self) -> int:
        return sum(len(a.instances) for a in self.videos.values())


@dataclass(frozen=True, eq=False)
class PredictionSet:
    model_name: str
    results: Mapping[str, tuple[Detection, ...]] = field(default_factory=dict)
    model_weight: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.model_weight) and self.model_weight > 0):
            raise InvariantViolation(f"model weight must be positive, got {self.model_weight}")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PredictionSet):
            return NotImplemented
        if (self.model_name, self.model_weight) != (other.model_name, other.model_weight):
            return False
        if set(self.results) != set(other.results):
            return False
        return all(
            sorted(dets, key=_detection_key) == sorted(other.results[vid], key=_detection_key)
            for vid, dets in self.results.items()
        )

    __hash__ = None

    def detections(self) -> list[Detection]:
        return [d for vid in sorted(self.results) for d in self.results[vid]]

    def num_detections(self) -> int:
        return sum(len(v) for v in self.results.values())

    def check(self, space: LabelSpace) -> None:
        """Raise InvariantViolation on the first invalid detection."""
        for vid, dets in self.results.items():
            for i, d in enumerate(dets):
                problem = validate_detection(d, space)
                if problem is None and d.video_id != vid:
                    problem = f"belongs to video {d.video_id!r}"
                if problem is not None:
                    raise InvariantViolation(f"video {vid!r} detection {i}: {problem}")


def predictions_from_detections(
    model_name: str, detections: Iterable[Detection], model_weight: float = 1.0,
    video_ids: Iterable[str] = (),
) -> PredictionSet:
    """Group a flat detection list into a PredictionSet keyed by video id."""
    results: dict[str, list[Detection]] = {vid: [] for vid in video_ids}
    for d in detections:
        results.setdefault(d.video_id, []).append(d)
    return PredictionSet(model_name, {k: tuple(v) for k, v in results.items()}, model_weight)
