#!/usr/bin/env python3
"""Reproduce the method-comparison table.

Pretrains one shared encoder, runs every mode (clean and backdoored, prompt
learning and full fine-tuning) across the requested seeds, and renders the
merged markdown/CSV report. Bundles land under --out-root, so the run is
resumable: existing bundles are reused.
"""
import argparse
import os
from dataclasses import replace
from pathlib import Path

from baple.config import ExperimentConfig, fingerprint
from baple.pipeline import (
    load_bundle,
    pretrain_encoder,
    render_report,
    run_experiment,
)

MODES = ("clean_ft", "badnets_ft", "wanet_ft", "fiba_ft",
         "clean_pl", "badnets_pl", "wanet_pl", "fiba_pl", "baple")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-root", default="runs/method_table")
    ap.add_argument("--seeds", default="0,1,2")
    args = ap.parse_args()

    os.environ["BAPLE_OUT_ROOT"] = args.out_root
    seeds = [int(s) for s in args.seeds.split(",")]
    base = ExperimentConfig()
    encoder = pretrain_encoder(base)
    print(f"pretrained encoder zero-shot accuracy: {encoder.pretrain_accuracy}")

    bundles = []
    for mode in MODES:
        for seed in seeds:
            cfg = replace(base, mode=mode, seed=seed)
            path = Path(args.out_root) / fingerprint(cfg)
            if (path / "metrics.csv").is_file():
                bundle = load_bundle(path)
            else:
                bundle = run_experiment(cfg, encoder=encoder)
            row = bundle.metrics[0]
            print(f"{mode:12s} seed={seed} ca={row['ca']} ba={row['ba']}")
            bundles.append(bundle)

    md, csv = render_report(bundles)
    out = Path(args.out_root)
    (out / "report.md").write_text(md, encoding="utf-8")
    (out / "report.csv").write_text(csv, encoding="utf-8")
    print()
    print(md)
    print(f"written: {out / 'report.md'} and {out / 'report.csv'}")


if __name__ == "__main__":
    main()
