"""Accuracy table for the robust-loss baselines, naive selection and DSPT.

    python3 scripts/baseline_table.py --rates 0.2,0.4,0.6,0.8 --out results/baselines.csv
"""

import argparse
import csv
from pathlib import Path

from dspt.data import BENCHMARK
from dspt.trainer import TrainConfig, run_experiment

LOSSES = ("ce", "smoothing", "logitnorm", "square", "bootstrap", "nce", "gce",
          "logitclip:1", "select", "dspt")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", default="0.2,0.4,0.6,0.8")
    ap.add_argument("--kind", choices=["sym", "pair"], default="sym")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--out", default="results/baselines.csv")
    args = ap.parse_args()

    b = BENCHMARK
    train, test, anchors = b.generate()
    rates = [float(r) for r in args.rates.split(",")]
    table = {}
    for loss in LOSSES:
        for rate in rates:
            cfg = TrainConfig(loss=loss, epochs=args.epochs, noise=f"{args.kind}:{rate:g}",
                              seed=b.train_seed, mode=b.mode, scale=b.scale)
            table[loss, rate] = run_experiment(cfg, train, test, anchors).log.final_acc
    print(f"{'loss':12s}" + "".join(f"{args.kind}:{r:<8g}" for r in rates))
    for loss in LOSSES:
        print(f"{loss:12s}" + "".join(f"{table[loss, r]:<12.4f}" for r in rates))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loss"] + [f"{args.kind}:{r:g}" for r in rates])
        for loss in LOSSES:
            w.writerow([loss] + [repr(table[loss, r]) for r in rates])


if __name__ == "__main__":
    main()
