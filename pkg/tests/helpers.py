"""Random instance builders shared by the property and acceptance tests."""

from __future__ import annotations

import numpy as np

from tadfuse.core import (
    Detection,
    GroundTruthInstance,
    GroundTruthSet,
    LabelSpace,
    PredictionSet,
    Segment,
    VideoAnnotations,
)


def random_segment(rng, horizon=20.0, min_len=0.2, max_len=8.0) -> Segment:
    length = float(rng.uniform(min_len, max_len))
    start = float(rng.uniform(0.0, horizon - length))
    return Segment(start, start + length)


def random_model_sets(rng, n_models=None, video="v", label=0, max_dets=6, horizon=20.0):
    """Prediction sets for a single (video, label) group, with distinct scores."""
    n_models = n_models or int(rng.integers(1, 4))
    sets = []
    for k in range(n_models):
        n = int(rng.integers(0, max_dets + 1))
        dets = tuple(
            Detection(video, label, random_segment(rng, horizon), float(rng.uniform(0.01, 1.0)), k)
            for _ in range(n)
        )
        sets.append(PredictionSet(f"m{k}", {video: dets}, float(rng.uniform(0.2, 3.0))))
    return sets


def random_eval_instance(rng, max_videos=5, max_classes=3, max_dets=8, max_gt_per_class=4, duration=30.0,
                         disjoint_gt=False):
    """Small GT + prediction set pair for oracle comparisons.

    Returns (gt, preds, raw_gt, raw_preds); the raw lists are plain tuples for the oracle.
    """
    n_videos = int(rng.integers(1, max_videos + 1))
    n_classes = int(rng.integers(1, max_classes + 1))
    vids = [f"v{i}" for i in range(n_videos)]
    space = LabelSpace([f"c{i}" for i in range(n_classes)])

    raw_gt = []
    for c in range(n_classes):
        for _ in range(int(rng.integers(0, max_gt_per_class + 1))):
            seg = random_segment(rng, duration, 0.5, 10.0)
            v = vids[int(rng.integers(n_videos))]
            if disjoint_gt and any(
                g[0] == v and g[1] == c and g[2] < seg.end and seg.start < g[3] for g in raw_gt
            ):
                continue
            raw_gt.append((v, c, seg.start, seg.end))
    videos = {
        v: VideoAnnotations(duration, tuple(
            GroundTruthInstance(v, c, Segment(s, e)) for (vv, c, s, e) in raw_gt if vv == v
        ))
        for v in vids
    }
    gt = GroundTruthSet(space, videos)

    raw_preds = []
    for _ in range(int(rng.integers(0, max_dets + 1))):
        v = vids[int(rng.integers(n_videos))]
        c = int(rng.integers(n_classes))
        same = [g for g in raw_gt if g[0] == v and g[1] == c]
        if same and rng.random() < 0.7:
            # Near-miss of a real instance so that matches actually happen.
            g = same[int(rng.integers(len(same)))]
            s = max(0.0, g[2] + float(rng.normal(0, 1.0)))
            e = max(s + 0.1, g[3] + float(rng.normal(0, 1.0)))
        else:
            seg = random_segment(rng, duration, 0.5, 10.0)
            s, e = seg.start, seg.end
        raw_preds.append((v, c, s, e, float(rng.uniform(0.0, 1.0))))
    results = {v: [] for v in vids}
    for (v, c, s, e, sc) in raw_preds:
        results[v].append(Detection(v, c, Segment(s, e), sc))
    preds = PredictionSet("p", {k: tuple(x) for k, x in results.items()})
    return gt, preds, raw_gt, raw_preds


def random_gt(rng) -> GroundTruthSet:
    space = LabelSpace([f"class {i}" for i in range(int(rng.integers(1, 5)))])
    videos = {}
    for i in range(int(rng.integers(0, 5))):
        vid = f"vid-{i}"
        dur = round(float(rng.uniform(5, 40)), 6)
        inst = []
        for _ in range(int(rng.integers(0, 6))):
            s = round(float(rng.uniform(0, dur - 1)), 6)
            e = round(float(rng.uniform(s + 0.001, dur)), 6)
            if e > s:
                inst.append(GroundTruthInstance(vid, int(rng.integers(len(space))), Segment(s, e)))
        videos[vid] = VideoAnnotations(dur, tuple(inst))
    return GroundTruthSet(space, videos)


def random_preds(rng, gt: GroundTruthSet) -> PredictionSet:
    results = {}
    for vid, ann in gt.videos.items():
        dets = []
        for _ in range(int(rng.integers(0, 6))):
            s = round(float(rng.uniform(0, ann.duration - 1)), 6)
            e = round(float(rng.uniform(s + 0.001, ann.duration)), 6)
            if e > s:
                dets.append(Detection(vid, int(rng.integers(len(gt.label_space))), Segment(s, e),
                                      round(float(rng.uniform()), 6)))
        results[vid] = tuple(dets)
    return PredictionSet("model", results, round(float(rng.uniform(0.1, 3)), 6))


def perfect_predictions(gt: GroundTruthSet) -> PredictionSet:
    return PredictionSet(
        "perfect",
        {vid: tuple(Detection(vid, i.label_id, i.segment, 1.0) for i in ann.instances)
         for vid, ann in gt.videos.items()},
    )


def rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)
