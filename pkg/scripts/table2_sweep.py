"""Seed sweep of the synthetic two-model ensemble.

Prints the mean avg mAP of each single model and each fuser over the seeds,
in the layout of an ablation table, plus per-seed WBF gains.

    python scripts/table2_sweep.py --seeds 20 --videos 200
"""

import argparse
import json

import numpy as np

from tadfuse.evaluation import EvalConfig
from tadfuse.fusion import FusionConfig
from tadfuse.simulator import SimConfig, format_table, run_ensemble_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--videos", type=int, default=200)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--iou-thr", type=float, default=0.55)
    ap.add_argument("--json", help="write per-seed results here")
    args = ap.parse_args()

    fusion = FusionConfig(iou_threshold=args.iou_thr)
    reports = []
    for seed in range(args.seeds):
        config = SimConfig(seed=seed, num_videos=args.videos, num_classes=args.classes)
        r = run_ensemble_experiment(config, fusion, EvalConfig())
        reports.append(r)
        print(f"seed {seed:3d}  best single {r.best_individual:.4f}  wbf {r.fused_avg_map['wbf']:.4f}  "
              f"gain {r.deltas['wbf']:+.4f}")

    names = reports[0].model_names
    rows = [(n, float(np.mean([r.model_avg_map[i] for r in reports]))) for i, n in enumerate(names)]
    for key in ("nms", "soft_nms", "wbf"):
        rows.append((f"+ {key}", float(np.mean([r.fused_avg_map[key] for r in reports]))))
    print()
    print(format_table(rows))
    gains = [r.deltas["wbf"] for r in reports]
    print(f"WBF >= best single in {sum(g >= 0 for g in gains)}/{len(gains)} seeds; mean gain {np.mean(gains):+.4f}")
    if args.json:
        with open(args.json, "w") as f:
            json.dump([r.to_dict() for r in reports], f, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
