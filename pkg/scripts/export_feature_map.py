#!/usr/bin/env python3
"""Run the joint attack once and export feature-space evidence.

Writes the per-sample clean and backdoored image features plus their 2-D
principal-axis projections to features.csv inside the run bundle, ready for
scatter plotting (columns px, py, colored by kind/label).
"""
import argparse
import os
from dataclasses import replace

from baple.config import ExperimentConfig
from baple.pipeline import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-root", default="runs/features")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--mode", default="baple")
    args = ap.parse_args()

    os.environ["BAPLE_OUT_ROOT"] = args.out_root
    cfg = replace(ExperimentConfig(), mode=args.mode, seed=args.seed)
    bundle = run_experiment(cfg, with_features=True)
    row = bundle.metrics[0]
    print(f"mode={row['mode']} ca={row['ca']} ba={row['ba']}")
    print(f"features: {bundle.path / 'features.csv'}")


if __name__ == "__main__":
    main()
