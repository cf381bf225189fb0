"""Epoch-0 histogram of per-sample logit-gradient L1 norms, split by label status.

CE piles mislabeled samples up near 2; DSPT pushes them towards 0.

    python3 scripts/gradient_audit.py --eta 0.6 --out results/gradient_audit.csv
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from dspt.data import BENCHMARK
from dspt.losses import LossKind
from dspt.model import PrototypeModel
from dspt.noise import parse_noise
from dspt.trainer import grad_audit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--eta", type=float, default=0.6)
    ap.add_argument("--bins", type=int, default=20)
    ap.add_argument("--out", default="results/gradient_audit.csv")
    args = ap.parse_args()

    b = BENCHMARK
    train, _, anchors = b.generate()
    noisy, _ = train.with_noise(parse_noise(f"sym:{args.eta:g}", b.C), b.train_seed)
    model = PrototypeModel(anchors, b.scale, b.mode)
    edges = np.linspace(0.0, 2.0, args.bins + 1)
    rows = []
    for tag in ("ce", "dspt"):
        g = grad_audit(model, noisy, LossKind(tag))["grad_l1"]
        for group, sel in (("clean", ~noisy.mask), ("mislabeled", noisy.mask)):
            counts, _ = np.histogram(g[sel], edges)
            print(f"{tag:5s} {group:10s} mean {g[sel].mean():.4f} median {np.median(g[sel]):.4f}")
            rows += [{"loss": tag, "group": group, "bin_lo": lo, "bin_hi": hi, "count": int(c)}
                     for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
