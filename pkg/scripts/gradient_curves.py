"""Total logit-gradient L1 as a function of the confidence on a wrong class.

Uses a C-class logit vector with mass 1 - delta on one wrong class; prints the
CE and DSPT totals alongside the 5*delta ceiling.

    python3 scripts/gradient_curves.py --classes 10
"""

import argparse

import numpy as np

from dspt.losses import LossKind, loss_and_grad


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classes", type=int, default=10)
    args = ap.parse_args()

    C = args.classes
    print(f"{'p_wrong':>10s} {'CE':>10s} {'DSPT':>12s} {'5*delta':>10s}")
    for p in (0.5, 0.7, 0.9, 0.99, 0.999, 1 - 1e-4, 1 - 1e-6, 1 - 1e-8):
        delta = 1 - p
        probs = np.full(C, delta / (C - 1))
        probs[1] = p
        z = np.log(probs)[None, :]
        y = np.array([0])
        g_ce = np.abs(loss_and_grad(LossKind("ce"), z, y)[1]).sum()
        g_ds = np.abs(loss_and_grad(LossKind("dspt"), z, y)[1]).sum()
        print(f"{p:10.8f} {g_ce:10.4f} {g_ds:12.3e} {5 * delta:10.1e}")


if __name__ == "__main__":
    main()
