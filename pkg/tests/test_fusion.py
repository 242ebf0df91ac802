import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tadfuse.core import Detection, PredictionSet, Segment, tiou
from tadfuse.errors import EmptyCluster, EmptyModelList, WeightLengthMismatch
from tadfuse.fusion import (
    Cluster,
    FusionConfig,
    RescaleMode,
    ScoreCombine,
    SoftNmsMethod,
    build_clusters,
    cluster_assign,
    fuse_cluster,
    nms,
    nms_fuse,
    rescale_confidence,
    soft_nms,
    soft_nms_fuse,
    wbf_fuse,
    wbf_fuse_with_stats,
)

from helpers import random_model_sets


def det(s, e, score, model=0, video="v", label=0):
    return Detection(video, label, Segment(s, e), score, model)


# ------------------------------------------------------------ fuse_cluster


def test_fuse_cluster_hand_example():
    fused = fuse_cluster([(det(0, 10, 0.8), 1.0), (det(2, 12, 0.4), 1.0)])
    # start = (0*0.8 + 2*0.4) / 1.2, end = (10*0.8 + 12*0.4) / 1.2
    assert fused.segment.start == pytest.approx(2 / 3, abs=1e-12)
    assert fused.segment.end == pytest.approx(32 / 3, abs=1e-12)
    assert fused.score == pytest.approx(0.6, abs=1e-15)


def test_fuse_cluster_single_member_identity():
    d = det(1, 4, 0.3, model=2)
    assert fuse_cluster([(d, 2.0)]) == d


def test_fuse_cluster_identical_members():
    fused = fuse_cluster([(det(1, 4, 0.5), 1.0), (det(1, 4, 0.5, model=1), 1.0)])
    assert (fused.segment.start, fused.segment.end, fused.score) == (1.0, 4.0, 0.5)


def test_fuse_cluster_score_modes():
    members = [(det(0, 10, 0.8), 3.0), (det(2, 12, 0.4), 1.0)]
    assert fuse_cluster(members, ScoreCombine.WEIGHTED_MEAN).score == pytest.approx((2.4 + 0.4) / 4)
    assert fuse_cluster(members, ScoreCombine.MEAN).score == pytest.approx(0.6)
    assert fuse_cluster(members, ScoreCombine.MAX).score == 0.8


def test_fuse_cluster_zero_scores_falls_back_to_model_weights():
    fused = fuse_cluster([(det(0, 10, 0.0), 1.0), (det(2, 12, 0.0), 1.0)])
    assert (fused.segment.start, fused.segment.end) == (1.0, 11.0)


def test_fuse_cluster_empty():
    with pytest.raises(EmptyCluster):
        fuse_cluster([])


# ------------------------------------------------------------ rescale_confidence


@pytest.mark.parametrize(
    "raw,t,n,mode,expected",
    [
        (0.6, 2, 2, RescaleMode.MIN_CLAMP, 0.6),
        (0.6, 1, 2, RescaleMode.MIN_CLAMP, 0.3),
        (0.6, 3, 2, RescaleMode.RATIO, 0.9),
        (0.6, 3, 2, RescaleMode.MIN_CLAMP, 0.6),
        (0.6, 1, 2, RescaleMode.NONE, 0.6),
        (0.9, 3, 2, RescaleMode.RATIO, 1.0),
    ],
)
def test_rescale_confidence(raw, t, n, mode, expected):
    assert rescale_confidence(raw, t, n, mode) == pytest.approx(expected, abs=1e-15)


# ------------------------------------------------------------ cluster_assign


def test_cluster_assign_picks_best_overlap():
    d = det(0, 10, 0.9)
    clusters = [Cluster.start(det(0, 6, 0.5), 1.0), Cluster.start(det(0, 3, 0.5), 1.0)]
    assert tiou(d.segment, clusters[0].fused.segment) == pytest.approx(0.6)
    assert tiou(d.segment, clusters[1].fused.segment) == pytest.approx(0.3)
    assert cluster_assign(d, clusters, 0.55) == 0


def test_cluster_assign_below_threshold():
    clusters = [Cluster.start(det(0, 5, 0.5), 1.0)]
    assert tiou(det(0, 10, 0.9).segment, clusters[0].fused.segment) == 0.5
    assert cluster_assign(det(0, 10, 0.9), clusters, 0.55) is None


def test_cluster_assign_tie_lowest_index():
    clusters = [Cluster.start(det(50, 60, 0.5), 1.0),
                Cluster.start(det(0, 8, 0.5), 1.0),
                Cluster.start(det(2, 10, 0.5), 1.0)]
    assert cluster_assign(det(0, 10, 0.9), clusters, 0.55) == 1


def test_cluster_tracks_weighted_average():
    c = Cluster.start(det(0, 10, 0.8), 1.0)
    c.add(det(2, 12, 0.4, model=1), 1.0)
    assert c.fused.segment.start == pytest.approx(2 / 3, abs=1e-9)
    assert c.weight_sum == 2.0


# ------------------------------------------------------------ wbf_fuse


def test_wbf_two_model_example():
    a = PredictionSet("mm", {"v": (det(0, 10, 0.8),)})
    b = PredictionSet("um", {"v": (det(2, 12, 0.4),)})
    out = wbf_fuse([a, b], FusionConfig())
    assert out.model_name == "wbf_fused" and out.model_weight == 1.0
    (fused,) = out.results["v"]
    assert fused.segment.start == pytest.approx(0.6667, abs=1e-4)
    assert fused.segment.end == pytest.approx(10.6667, abs=1e-4)
    assert fused.score == pytest.approx(0.6, abs=1e-12)


def test_wbf_empty_in_empty_out():
    out = wbf_fuse([PredictionSet("a", {}), PredictionSet("b", {})])
    assert out.num_detections() == 0


def test_wbf_single_model_identity():
    dets = (det(0, 10, 0.8), det(3, 12, 0.4), det(20, 25, 0.1))
    out = wbf_fuse([PredictionSet("a", {"v": dets})], FusionConfig(iou_threshold=0.9))
    assert sorted(out.results["v"], key=lambda d: d.segment) == sorted(dets, key=lambda d: d.segment)


def test_wbf_single_model_clusters_still_merge():
    # Overlapping detections from one model share a cluster; T=2 > N=1 is clamped.
    out = wbf_fuse([PredictionSet("a", {"v": (det(0, 10, 0.8), det(1, 10, 0.6))})])
    (fused,) = out.results["v"]
    assert fused.score == pytest.approx(0.7)


def test_wbf_unmatched_cluster_penalised():
    a = PredictionSet("a", {"v": (det(0, 10, 0.8),)})
    b = PredictionSet("b", {"v": (det(30, 40, 0.4),)})
    out = wbf_fuse([a, b])
    assert sorted(d.score for d in out.results["v"]) == pytest.approx([0.2, 0.4])


def test_wbf_never_merges_across_labels_or_videos():
    a = PredictionSet("a", {"v": (det(0, 10, 0.8, label=0),), "w": (det(0, 10, 0.8, video="w"),)})
    b = PredictionSet("b", {"v": (det(0, 10, 0.8, label=1),)})
    out = wbf_fuse([a, b])
    assert len(out.results["v"]) == 2 and len(out.results["w"]) == 1


def test_wbf_skip_threshold():
    a = PredictionSet("a", {"v": (det(0, 10, 0.8), det(20, 30, 0.05))})
    out = wbf_fuse([a], FusionConfig(skip_threshold=0.1))
    assert [d.segment for d in out.results["v"]] == [Segment(0, 10)]


def test_wbf_errors():
    with pytest.raises(EmptyModelList):
        wbf_fuse([])
    with pytest.raises(WeightLengthMismatch):
        wbf_fuse([PredictionSet("a", {}), PredictionSet("b", {})], FusionConfig(model_weights=(1.0,)))


def test_wbf_model_weights_override_set_weights():
    a = PredictionSet("a", {"v": (det(0, 10, 0.5),)}, 1.0)
    b = PredictionSet("b", {"v": (det(2, 12, 0.5),)}, 1.0)
    out = wbf_fuse([a, b], FusionConfig(model_weights=(3.0, 1.0)))
    (fused,) = out.results["v"]
    assert fused.segment.start == pytest.approx(0.5)


def test_wbf_stats():
    a = PredictionSet("a", {"v": (det(0, 10, 0.8), det(20, 30, 0.5))})
    b = PredictionSet("b", {"v": (det(1, 10, 0.7),)})
    _, stats = wbf_fuse_with_stats([a, b])
    assert (stats.groups, stats.inputs, stats.clusters, stats.multi_member_clusters) == (1, 3, 2, 1)


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(iou_threshold=1.0)
    with pytest.raises(ValueError):
        FusionConfig(model_weights=(1.0, 0.0))
    assert FusionConfig.from_dict({"rescale_mode": "ratio"}).rescale_mode is RescaleMode.RATIO
    with pytest.raises(ValueError):
        FusionConfig.from_dict({"bogus": 1})


# ------------------------------------------------------------ nms / soft-nms


def test_nms_examples():
    assert nms([det(0, 10, 0.9), det(1, 11, 0.8)], 0.5) == [det(0, 10, 0.9)]
    assert len(nms([det(0, 10, 0.9), det(20, 30, 0.8)], 0.5)) == 2
    assert nms([det(2, 12, 0.5), det(0, 10, 0.5)], 0.5) == [det(0, 10, 0.5)]


def test_nms_tie_shorter_duration():
    assert nms([det(0, 12, 0.5), det(0, 10, 0.5)], 0.5) == [det(0, 10, 0.5)]


def test_soft_nms_examples():
    pair = [det(0, 10, 0.9), det(20, 30, 0.6)]
    assert sorted(d.score for d in soft_nms(pair, 0.3, 0.5, SoftNmsMethod.LINEAR)) == [0.6, 0.9]
    # tIoU([0,10],[0,5]) = 0.5
    out = soft_nms([det(0, 10, 0.8), det(0, 5, 0.6)], 0.3, 0.5, SoftNmsMethod.LINEAR)
    assert out[1].score == pytest.approx(0.3)
    out = soft_nms(pair, 0.3, 0.5, SoftNmsMethod.GAUSSIAN)
    assert sorted(d.score for d in out) == [0.6, 0.9]


def test_soft_nms_gaussian_decay():
    out = soft_nms([det(0, 10, 0.8), det(0, 5, 0.6)], 0.3, 0.5, SoftNmsMethod.GAUSSIAN)
    assert out[1].score == pytest.approx(0.6 * math.exp(-0.25 / 0.5))


def test_soft_nms_linear_below_threshold_untouched():
    out = soft_nms([det(0, 10, 0.8), det(0, 5, 0.6)], 0.6, 0.5, SoftNmsMethod.LINEAR)
    assert out[1].score == 0.6


def test_pooled_baselines():
    a = PredictionSet("a", {"v": (det(0, 10, 0.8),)})
    b = PredictionSet("b", {"v": (det(1, 10, 0.7),)})
    assert nms_fuse([a, b]).num_detections() == 1
    assert soft_nms_fuse([a, b]).num_detections() == 2


# ------------------------------------------------------------ properties


seeds = st.integers(0, 2**32 - 1)


@given(seeds)
def test_property_convex_hull(seed):
    rng = np.random.default_rng(seed)
    sets = random_model_sets(rng)
    members = [(d, p.model_weight) for p in sets for d in p.results["v"]]
    for c in build_clusters(members, float(rng.uniform(0.1, 0.9))):
        starts = [d.segment.start for d, _ in c.members]
        ends = [d.segment.end for d, _ in c.members]
        assert min(starts) - 1e-9 <= c.fused.segment.start <= max(starts) + 1e-9
        assert min(ends) - 1e-9 <= c.fused.segment.end <= max(ends) + 1e-9


@given(seeds)
def test_property_output_count(seed):
    rng = np.random.default_rng(seed)
    sets = random_model_sets(rng)
    n_in = sum(p.num_detections() for p in sets)
    assert wbf_fuse(sets).num_detections() <= n_in
    assert nms_fuse(sets).num_detections() <= n_in
    assert soft_nms_fuse(sets).num_detections() <= n_in


@given(seeds)
def test_property_nms_antichain(seed):
    rng = np.random.default_rng(seed)
    dets = [d for p in random_model_sets(rng, max_dets=10) for d in p.results["v"]]
    thr = float(rng.uniform(0.1, 0.9))
    kept = nms(dets, thr)
    for i in range(len(kept)):
        for j in range(i + 1, len(kept)):
            assert tiou(kept[i].segment, kept[j].segment) < thr


@given(seeds, st.integers(-8, 8))
def test_property_power_of_two_weight_scaling_is_exact(seed, exponent):
    rng = np.random.default_rng(seed)
    sets = random_model_sets(rng)
    base = wbf_fuse(sets)
    scaled = wbf_fuse(sets, FusionConfig(model_weights=tuple(p.model_weight * 2.0**exponent for p in sets)))
    assert base == scaled
