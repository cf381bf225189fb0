"""LogitClip accuracy across its threshold, against the hyperparameter-free DSPT.

    python3 scripts/logitclip_sweep.py --taus 0.05,0.1,0.5,1,2
"""

import argparse

from dspt.data import BENCHMARK
from dspt.losses import LossKind
from dspt.trainer import TrainConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--taus", default="0.05,0.1,0.5,1,2")
    ap.add_argument("--eta", type=float, default=0.6)
    ap.add_argument("--epochs", type=int, default=50)
    args = ap.parse_args()

    b = BENCHMARK
    train, test, anchors = b.generate()

    def acc(kind):
        cfg = TrainConfig(loss=kind, epochs=args.epochs, noise=f"sym:{args.eta:g}",
                          seed=b.train_seed, mode=b.mode, scale=b.scale)
        return run_experiment(cfg, train, test, anchors).log.final_acc

    clip = {float(t): acc(LossKind("logitclip", float(t))) for t in args.taus.split(",")}
    for tau, a in clip.items():
        print(f"logitclip tau={tau:<5g} {a:.4f}")
    print(f"spread across tau: {max(clip.values()) - min(clip.values()):.4f}")
    print(f"dspt               {acc(LossKind('dspt')):.4f}")


if __name__ == "__main__":
    main()
