"""Effect of the WBF cluster threshold and confidence rescaling on fused avg mAP."""

import argparse
import itertools

import numpy as np

from tadfuse.evaluation import evaluate
from tadfuse.fusion import FusionConfig, RescaleMode, ScoreCombine, wbf_fuse
from tadfuse.simulator import MODEL_STREAM, SimConfig, derive_seed, generate_ground_truth, perturb_model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--videos", type=int, default=200)
    args = ap.parse_args()

    cases = []
    for seed in range(args.seeds):
        config = SimConfig(seed=seed, num_videos=args.videos)
        gt = generate_ground_truth(config)
        preds = [perturb_model(gt, p, derive_seed(seed, MODEL_STREAM, k), config)
                 for k, p in enumerate(config.models)]
        cases.append((gt, preds))

    print(f"{'iou_thr':>7}  {'rescale':>7}  {'combine':>7}  avg mAP")
    for thr, mode, combine in itertools.product((0.3, 0.45, 0.55, 0.7), RescaleMode, ScoreCombine):
        config = FusionConfig(iou_threshold=thr, rescale_mode=mode, score_combine=combine)
        scores = [evaluate(wbf_fuse(preds, config), gt).avg_map for gt, preds in cases]
        print(f"{thr:>7.2f}  {mode.value:>7}  {combine.value:>7}  {np.mean(scores):.4f}")


if __name__ == "__main__":
    main()
