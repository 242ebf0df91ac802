"""Seeded synthetic ground truth and noisy per-model predictions.

Randomness comes from numpy's PCG64. Every video gets its own substream,
``SeedSequence(seed, spawn_key=(stream, video_index))``, where ``stream`` is
0 for ground-truth generation and 1 for model perturbation. Results therefore
do not depend on the order videos are processed in.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import (
    Detection,
    GroundTruthInstance,
    GroundTruthSet,
    LabelSpace,
    PredictionSet,
    Segment,
    VideoAnnotations,
)
from .errors import InfeasibleConfig
from .evaluation import EvalConfig, evaluate
from .fusion import FusionConfig, nms_fuse, soft_nms_fuse, wbf_fuse

GT_STREAM = 0
MODEL_STREAM = 1
MIN_DETECTION_DURATION = 0.1
_PLACEMENT_TRIES = 100
_SEED_MAX = 2**64 - 1


@dataclass(frozen=True)
class ModelNoiseProfile:
    boundary_jitter_sigma: float = 0.0
    miss_rate: float = 0.0
    false_positive_rate: float = 0.0
    label_confusion_rate: float = 0.0
    tp_score_mean: float = 1.0
    fp_score_mean: float = 0.0
    score_sigma: float = 0.0
    name: str = ""
    weight: float = 1.0

    def __post_init__(self) -> None:
        for key in ("miss_rate", "label_confusion_rate"):
            v = getattr(self, key)
            if not 0.0 <= v <= 1.0:
                raise InfeasibleConfig(f"{key} must be a probability, got {v}")
        for key in ("boundary_jitter_sigma", "score_sigma", "false_positive_rate"):
            if getattr(self, key) < 0:
                raise InfeasibleConfig(f"{key} must be non-negative, got {getattr(self, key)}")
        if not self.weight > 0:
            raise InfeasibleConfig(f"model weight must be positive, got {self.weight}")

    @property
    def score_model(self) -> tuple[float, float, float]:
        return (self.tp_score_mean, self.fp_score_mean, self.score_sigma)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelNoiseProfile":
        data = dict(data)
        sm = data.pop("score_model", None)
        if sm is not None:
            if isinstance(sm, dict):
                data.update(sm)
            else:
                data["tp_score_mean"], data["fp_score_mean"], data["score_sigma"] = sm
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleConfig(f"unknown model profile keys: {sorted(unknown)}")
        return cls(**data)


# Stronger (audio+video) and weaker (video-only) stand-ins. Individually they
# score about 0.51 and 0.46 avg mAP on the default SimConfig.
MULTIMODAL_PROFILE = ModelNoiseProfile(
    boundary_jitter_sigma=0.8, miss_rate=0.2, false_positive_rate=2.5, label_confusion_rate=0.12,
    tp_score_mean=0.65, fp_score_mean=0.4, score_sigma=0.2, name="multimodal",
)
UNIMODAL_PROFILE = ModelNoiseProfile(
    boundary_jitter_sigma=0.9, miss_rate=0.22, false_positive_rate=2.5, label_confusion_rate=0.12,
    tp_score_mean=0.62, fp_score_mean=0.4, score_sigma=0.2, name="unimodal",
)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    num_videos: int = 200
    num_classes: int = 10
    video_duration: float = 35.0
    actions_per_video: tuple[int, int] = (2, 8)
    action_duration: tuple[float, float] = (1.0, 8.0)
    models: tuple[ModelNoiseProfile, ...] = (MULTIMODAL_PROFILE, UNIMODAL_PROFILE)

    def __post_init__(self) -> None:
        object.__setattr__(self, "actions_per_video", tuple(self.actions_per_video))
        object.__setattr__(self, "action_duration", tuple(float(v) for v in self.action_duration))
        object.__setattr__(self, "models", tuple(self.models))
        if not (isinstance(self.seed, int) and 0 <= self.seed <= _SEED_MAX):
            raise InfeasibleConfig(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.num_videos < 0:
            raise InfeasibleConfig("num_videos must be non-negative")
        if self.num_classes < 1:
            raise InfeasibleConfig("num_classes must be at least 1")
        if not self.video_duration > 0:
            raise InfeasibleConfig("video_duration must be positive")
        lo, hi = self.actions_per_video
        if not 0 <= lo <= hi:
            raise InfeasibleConfig(f"actions_per_video range {self.actions_per_video} is invalid")
        dlo, dhi = self.action_duration
        if not 0 < dlo <= dhi:
            raise InfeasibleConfig(f"action_duration range {self.action_duration} is invalid")
        if dlo > self.video_duration:
            raise InfeasibleConfig(
                f"minimum action duration {dlo}s exceeds video duration {self.video_duration}s"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        if "models" in data:
            data["models"] = tuple(ModelNoiseProfile.from_dict(m) for m in data["models"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleConfig(f"unknown simulation config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["actions_per_video"] = list(self.actions_per_video)
        d["action_duration"] = list(self.action_duration)
        return d


def substream(seed: int, stream: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(stream, index))))


def derive_seed(seed: int, *path: int) -> int:
    """Hash (seed, path...) to a fresh unsigned 64-bit seed."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(path)).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def video_ids(n: int) -> list[str]:
    width = max(4, len(str(max(n - 1, 0))))
    return [f"sim_{i:0{width}d}" for i in range(n)]


def class_names(n: int) -> list[str]:
    return [f"action_{i:02d}" for i in range(n)]


def _q(x: float) -> float:
    # Six decimals, so generated sets survive a save/load round trip unchanged.
    return round(float(x), 6)


def _uniform_segment(rng: np.random.Generator, config: SimConfig) -> tuple[float, float]:
    dlo, dhi = config.action_duration
    dhi = min(dhi, config.video_duration)
    length = float(rng.uniform(dlo, dhi)) if dhi > dlo else dlo
    start = float(rng.uniform(0.0, config.video_duration - length))
    start = _q(min(max(start, 0.0), config.video_duration - length))
    end = _q(min(start + length, config.video_duration))
    if end <= start:
        end = _q(start + dlo)
    return start, end


def generate_ground_truth(config: SimConfig) -> GroundTruthSet:
    """Uniform action counts, durations, placements and labels per video.

    Instances of different classes may overlap. A placement that would overlap
    an existing instance of the same class is redrawn (and the action skipped
    after repeated failures), so identical models never fuse two annotations.
    """
    space = LabelSpace(class_names(config.num_classes))
    lo, hi = config.actions_per_video
    videos = {}
    for i, vid in enumerate(video_ids(config.num_videos)):
        rng = substream(config.seed, GT_STREAM, i)
        n = int(rng.integers(lo, hi + 1))
        instances = []
        for _ in range(n):
            label = int(rng.integers(config.num_classes))
            # Same-class instances in one video stay disjoint; other overlaps are allowed.
            for _attempt in range(_PLACEMENT_TRIES):
                start, end = _uniform_segment(rng, config)
                if not any(
                    g.label_id == label and g.segment.start < end and start < g.segment.end
                    for g in instances
                ):
                    instances.append(GroundTruthInstance(vid, label, Segment(start, end)))
                    break
        videos[vid] = VideoAnnotations(config.video_duration, tuple(instances))
    return GroundTruthSet(space, videos)


def _clamped_normal(rng: np.random.Generator, mean: float, sigma: float) -> float:
    v = mean + sigma * float(rng.standard_normal()) if sigma > 0 else mean
    return min(1.0, max(0.0, v))


def _jitter(rng, seg: Segment, sigma: float, duration: float) -> Segment:
    if sigma > 0:
        start = seg.start + sigma * float(rng.standard_normal())
        end = seg.end + sigma * float(rng.standard_normal())
    else:
        start, end = seg.start, seg.end
    if end < start:
        start, end = end, start
    start = min(max(start, 0.0), duration)
    end = min(max(end, 0.0), duration)
    min_len = min(MIN_DETECTION_DURATION, seg.duration)
    if end - start < min_len:
        mid = min(max((start + end) / 2, min_len / 2), duration - min_len / 2)
        start, end = mid - min_len / 2, mid + min_len / 2
    start, end = _q(max(start, 0.0)), _q(min(end, duration))
    if end <= start:
        return seg
    return Segment(start, end)


def perturb_model(
    gt: GroundTruthSet, profile: ModelNoiseProfile, seed: int, sim: Optional[SimConfig] = None
) -> PredictionSet:
    """Turn ground truth into one model's noisy predictions.

    ``sim`` supplies the action-duration range for false positives; without
    it, the range spanned by the ground-truth segments themselves is used.
    """
    num_classes = len(gt.label_space)
    if sim is not None:
        fp_range = sim.action_duration
    else:
        lengths = [inst.segment.duration for inst in gt.instances()]
        fp_range = (min(lengths), max(lengths)) if lengths else (1.0, 1.0)

    results = {}
    for i, vid in enumerate(sorted(gt.videos)):
        ann = gt.videos[vid]
        rng = substream(seed, MODEL_STREAM, i)
        dets = []
        for inst in ann.instances:
            if rng.random() < profile.miss_rate:
                continue
            seg = _jitter(rng, inst.segment, profile.boundary_jitter_sigma, ann.duration)
            label = inst.label_id
            if num_classes > 1 and rng.random() < profile.label_confusion_rate:
                other = int(rng.integers(num_classes - 1))
                label = other if other < label else other + 1
            score = _q(_clamped_normal(rng, profile.tp_score_mean, profile.score_sigma))
            dets.append(Detection(vid, label, seg, score))

        n_fp = int(rng.poisson(profile.false_positive_rate)) if profile.false_positive_rate > 0 else 0
        dlo, dhi = fp_range
        dhi = min(dhi, ann.duration)
        dlo = min(dlo, dhi)
        for _ in range(n_fp):
            length = float(rng.uniform(dlo, dhi)) if dhi > dlo else dhi
            start = _q(float(rng.uniform(0.0, ann.duration - length)))
            end = _q(min(start + length, ann.duration))
            if end <= start:
                continue
            label = int(rng.integers(num_classes))
            score = _q(_clamped_normal(rng, profile.fp_score_mean, profile.score_sigma))
            dets.append(Detection(vid, label, Segment(start, end), score))
        results[vid] = tuple(dets)
    return PredictionSet(profile.name or "model", results, profile.weight)


@dataclass
class ExperimentReport:
    seed: int
    model_names: list[str]
    model_avg_map: list[float]
    fused_avg_map: dict[str, float]
    model_map_per_threshold: list[dict[str, float]] = field(default_factory=list)
    fused_map_per_threshold: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def best_individual(self) -> float:
        return max(self.model_avg_map)

    @property
    def deltas(self) -> dict[str, float]:
        best = self.best_individual
        return {k: v - best for k, v in self.fused_avg_map.items()}

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "models": [
                {"name": n, "avg_map": m, "map_per_threshold": t}
                for n, m, t in zip(self.model_names, self.model_avg_map, self.model_map_per_threshold)
            ],
            "fused": {
                k: {"avg_map": v, "delta_vs_best": self.deltas[k],
                    "map_per_threshold": self.fused_map_per_threshold.get(k, {})}
                for k, v in self.fused_avg_map.items()
            },
            "best_individual_avg_map": self.best_individual,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        rows = [(n, m) for n, m in zip(self.model_names, self.model_avg_map)]
        rows += [(f"+ {k}", v) for k, v in self.fused_avg_map.items()]
        return format_table(rows)


def format_table(rows: Sequence[tuple[str, float]], header: str = "Avg mAP") -> str:
    """Two-column text table; values are fractions shown as percentages."""
    width = max([len("Model")] + [len(n) for n, _ in rows])
    lines = [f"{'Model':<{width}}  {header:>8}", f"{'-' * width}  {'-' * 8}"]
    lines += [f"{n:<{width}}  {100 * v:>8.1f}" for n, v in rows]
    return "\n".join(lines) + "\n"


def run_ensemble_experiment(
    config: SimConfig, fusion: FusionConfig = FusionConfig(), eval_config: EvalConfig = EvalConfig()
) -> ExperimentReport:
    if len(config.models) < 2:
        raise InfeasibleConfig("an ensemble experiment needs at least two models")
    gt = generate_ground_truth(config)
    preds = [
        perturb_model(gt, profile, derive_seed(config.seed, MODEL_STREAM, k), config)
        for k, profile in enumerate(config.models)
    ]
    names = [p.name or f"model_{k}" for k, p in enumerate(config.models)]

    def score(p: PredictionSet):
        r = evaluate(p, gt, eval_config)
        return r.avg_map, {f"{t:g}": v for t, v in r.map_per_threshold.items()}

    individual = [score(p) for p in preds]
    fused = {
        "wbf": score(wbf_fuse(preds, fusion)),
        "nms": score(nms_fuse(preds, fusion)),
        "soft_nms": score(soft_nms_fuse(preds, fusion)),
    }
    return ExperimentReport(
        seed=config.seed,
        model_names=names,
        model_avg_map=[m for m, _ in individual],
        fused_avg_map={k: m for k, (m, _) in fused.items()},
        model_map_per_threshold=[t for _, t in individual],
        fused_map_per_threshold={k: t for k, (_, t) in fused.items()},
    )
