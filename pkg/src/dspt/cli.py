"""Command-line entry point: ``dspt gen-data | train | audit | verify | sweep``.

Exit codes: 0 ok, 2 usage, 3 data format, 4 numeric abort, 5 verification failure.
Outputs go to ``--out``; when it is omitted they go under ``$DSPT_OUTPUT_ROOT``
(default ``runs``).
"""

import argparse
import hashlib
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import verify as V
from .data import (BENCHMARK, Dataset, FormatError, gen_synthetic, load_csv, load_embeddings,
                   save_embeddings)
from .losses import LossKind
from .model import PrototypeModel, save_checkpoint, zero_shot_predict
from .noise import pairflip_matrix, parse_noise
from .numerics import InvalidInputError
from .trainer import (NumericAbort, TrainConfig, audit_csv, dumps, grad_audit, run_experiment)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4, 5
OUTPUT_ROOT_ENV = "DSPT_OUTPUT_ROOT"

TRAIN_KEYS = {"loss", "tau", "noise", "epochs", "batch", "lr", "mode", "scale", "selection",
              "seed", "data", "classes", "dim", "n_train", "n_test", "kappa",
              "anchor_perturb", "data_seed", "out"}


class UsageError(Exception):
    pass


def _hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def manifest(command: str, config: dict, seed, **extra) -> dict:
    return {"command": command, "config": config, "config_hash": _hash(config),
            "seed": seed, "version": __version__, **extra}


def _write(path: Path, text: str):
    path.write_text(text)


def _outdir(args, command) -> Path:
    out = Path(args.out) if args.out else Path(os.environ.get(OUTPUT_ROOT_ENV, "runs")) / command
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UsageError(f"cannot create output directory {out}: {e}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


# -- data sources ----------------------------------------------------------

def _add_data_flags(p):
    g = p.add_argument_group("data (synthetic defaults are the pinned benchmark)")
    g.add_argument("--data", help="directory written by gen-data")
    g.add_argument("--classes", type=int)
    g.add_argument("--dim", type=int)
    g.add_argument("--n-train", type=int)
    g.add_argument("--n-test", type=int)
    g.add_argument("--kappa", type=float)
    g.add_argument("--anchor-perturb", type=float)
    g.add_argument("--data-seed", type=int)


def _synthetic_params(args) -> dict:
    b = BENCHMARK
    pick = lambda v, d: d if v is None else v  # noqa: E731
    return {"C": pick(args.classes, b.C), "d": pick(args.dim, b.d),
            "n_train": pick(args.n_train, b.n_train), "n_test": pick(args.n_test, b.n_test),
            "kappa": pick(args.kappa, b.kappa),
            "anchor_perturb": pick(args.anchor_perturb, b.anchor_perturb),
            "seed": pick(args.data_seed, b.seed)}


def load_source(args):
    """``(train, test, anchors, description)`` from ``--data`` or synthetic flags."""
    if args.data:
        root = Path(args.data)
        for name in ("train.emb", "test.emb", "anchors.emb"):
            if not (root / name).exists():
                raise UsageError(f"{root / name} not found")
        train = load_embeddings(root / "train.emb", "train")
        test = load_embeddings(root / "test.emb", "test")
        anchors = load_embeddings(root / "anchors.emb", "test")
        if anchors.n != train.C or not np.array_equal(anchors.clean, np.arange(train.C)):
            raise FormatError("anchors.emb must hold one row per class, labelled 0..C-1")
        if test.C != train.C or test.d != train.d or anchors.d != train.d:
            raise FormatError("train/test/anchor dimensions disagree")
        return train, test, anchors.features, {"data": str(root)}
    params = _synthetic_params(args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        train, test, anchors = gen_synthetic(**params)
    desc = {"synthetic": params}
    if caught:
        desc["warnings"] = [str(w.message) for w in caught]
    return train, test, anchors, desc


# -- gen-data --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = _outdir(args, "data")
    csvs = [args.train_csv, args.test_csv, args.anchors_csv]
    warns = []
    if any(csvs):
        if not all(csvs):
            raise UsageError("--train-csv, --test-csv and --anchors-csv go together")
        anchors_ds = load_csv(args.anchors_csv, split="test")
        C = anchors_ds.n
        train = load_csv(args.train_csv, C, "train")
        test = load_csv(args.test_csv, C, "test")
        anchors = anchors_ds.features
        params = {"train_csv": args.train_csv, "test_csv": args.test_csv,
                  "anchors_csv": args.anchors_csv}
        seed = None
    else:
        params = _synthetic_params(args)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            train, test, anchors = gen_synthetic(**params)
        warns = [str(w.message) for w in caught]
        seed = params["seed"]
    save_embeddings(train, out / "train.emb")
    save_embeddings(test, out / "test.emb")
    save_embeddings(Dataset.clean_set(anchors, np.arange(train.C), train.C, "test"),
                    out / "anchors.emb")
    model = PrototypeModel(anchors)
    zs = float(np.mean(zero_shot_predict(model, test.features) == test.clean)) if test.n else None
    _write(out / "manifest.json", dumps(manifest(
        "gen-data", params, seed, zero_shot_acc=zs, warnings=warns,
        files=["train.emb", "test.emb", "anchors.emb"])))
    for w in warns:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {out}/{{train,test,anchors}}.emb; zero-shot accuracy {zs}")
    return EXIT_OK


# -- train -----------------------------------------------------------------

def _loss_from(loss: str, tau) -> LossKind:
    name = loss.strip().lower()
    if name.startswith("logitclip") and ":" not in name and tau is None:
        raise UsageError("--tau is required for logitclip")
    try:
        return LossKind.parse(name, tau)
    except InvalidInputError as e:
        raise UsageError(str(e)) from None


def _merge_config(args):
    """Explicit flags override config-file keys, which override defaults."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        unknown = set(cfg) - TRAIN_KEYS
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        if cfg.get("data") and not Path(cfg["data"]).is_dir():
            raise UsageError(f"data directory {cfg['data']} does not exist")
    for key in TRAIN_KEYS:
        v = getattr(args, key, None)
        if v is not None and v is not False:
            cfg[key] = v
        elif key in cfg:
            setattr(args, key, cfg[key])
    return args


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            loss=_loss_from(args.loss or "dspt", args.tau),
            epochs=args.epochs or 50, batch=args.batch or 32,
            lr0=args.lr if args.lr is not None else 0.002,
            seed=args.seed if args.seed is not None else 0,
            noise=args.noise or "none", mode=args.mode or "shared",
            scale=args.scale if args.scale is not None else 30.0,
            selection=bool(args.selection))
    except InvalidInputError as e:
        raise UsageError(str(e)) from None


def _run_one(config: TrainConfig, train, test, anchors, out: Path, source: dict):
    result = run_experiment(config, train, test, anchors)
    out.mkdir(parents=True, exist_ok=True)
    cfg = {**config.to_dict(), "source": source}
    _write(out / "metrics.csv", result.log.to_csv())
    _write(out / "metrics.json", dumps({**result.log.to_json(),
                                        "zero_shot_acc": result.zero_shot_acc,
                                        "noise": result.noise_report.to_dict()}))
    save_checkpoint(result.model, out / "model.ckpt")
    _write(out / "manifest.json", dumps(manifest(
        "train", cfg, config.seed,
        files=["metrics.csv", "metrics.json", "model.ckpt"])))
    return result


def cmd_train(args) -> int:
    _merge_config(args)
    config = _train_config(args)
    train, test, anchors, source = load_source(args)
    out = _outdir(args, "train")
    result = _run_one(config, train, test, anchors, out, source)
    print(f"loss={config.loss} noise={config.noise} zero-shot={result.zero_shot_acc:.4f} "
          f"final five-epoch accuracy={result.log.final_acc:.4f}")
    return EXIT_OK


# -- audit -----------------------------------------------------------------

def cmd_audit(args) -> int:
    train, _, anchors, source = load_source(args)
    T = parse_noise(args.noise, train.C)
    noisy, report = train.with_noise(T, args.seed)
    model = PrototypeModel(anchors, args.scale, args.mode or "shared")
    out = _outdir(args, "audit")
    losses = [_loss_from(name, args.tau) for name in args.losses.split(",")]
    summary = {}
    for kind in losses:
        rec = grad_audit(model, noisy, kind)
        _write(out / f"audit_{kind.tag}.csv", audit_csv(rec))
        g, m = rec["grad_l1"], rec["is_noisy"]
        summary[str(kind)] = {
            "clean_mean": float(g[~m].mean()) if (~m).any() else None,
            "noisy_mean": float(g[m].mean()) if m.any() else None,
            "n_clean": int((~m).sum()), "n_noisy": int(m.sum()),
        }
    ce, ds = summary.get("ce"), summary.get("dspt")
    factor = None
    if ce and ds and ce["noisy_mean"] is not None and ds["noisy_mean"]:
        factor = ce["noisy_mean"] / ds["noisy_mean"]
    cfg = {"losses": [str(k) for k in losses], "noise": args.noise, "scale": args.scale,
           "source": source}
    _write(out / "summary.json", dumps({
        **manifest("audit", cfg, args.seed), "losses": summary,
        "separation_factor": factor, "noise_report": report.to_dict()}))
    for name, s in summary.items():
        print(f"{name}: clean mean {s['clean_mean']}, noisy mean {s['noisy_mean']}")
    print(f"separation factor (CE/DSPT on mislabeled samples): {factor}")
    return EXIT_OK


# -- verify ----------------------------------------------------------------

def run_checks(names, seed: int, classes=None, eta=None, trials=None, grid=40):
    reports = []
    for name in names:
        if name == "prop31":
            reports.append(V.check_prop31(trials or 10_000, (classes, classes) if classes
                                          else (2, 50), seed))
        elif name == "thm32":
            reports.append(V.check_thm32(V.DEFAULT_DELTAS, classes, seed))
        elif name == "prop33":
            reports.append(V.check_prop33(trials or 100_000,
                                          (classes,) if classes else V.DEFAULT_CLASS_COUNTS, seed))
        elif name == "thm34":
            reports.append(V.check_thm34(classes or 3, 0.4 if eta is None else eta, 4, grid, seed))
        elif name == "thm35":
            C = classes or 3
            T = None if eta is None else pairflip_matrix(C, eta)
            reports.append(V.check_thm35(C, T, 4, grid, seed))
        elif name == "grad_separation":
            b = BENCHMARK
            train, _, anchors = b.generate()
            rate = b.noise if eta is None else f"sym:{eta}"
            noisy, _ = train.with_noise(parse_noise(rate, b.C), seed)
            reports.append(V.check_grad_suppression_separation(
                noisy, PrototypeModel(anchors, b.scale), seed))
    return reports


def cmd_verify(args) -> int:
    names = list(V.CHECKS) if args.all or not args.check else args.check
    reports = run_checks(names, args.seed, args.classes, args.eta, args.trials, args.grid)
    out = _outdir(args, "verify")
    cfg = {"checks": names, "classes": args.classes, "eta": args.eta, "trials": args.trials,
           "grid": args.grid}
    bundle = {**manifest("verify", cfg, args.seed), "reports": [r.to_dict() for r in reports]}
    _write(out / "reports.json", dumps(bundle))
    failed = False
    for r in reports:
        print(f"{r.name:16s} {r.status.upper():15s} worst={r.worst_violation:.3g} "
              f"tol={r.tolerance:.3g} {r.note}")
        if r.name == "prop33":
            for row in r.details["per_C"]:
                print(f"  C={row['C']}: bounds [{row['lower']:.5f}, {row['upper']:.5f}]")
        failed |= r.applicable and not r.passed
    return EXIT_VERIFY if failed else EXIT_OK


# -- sweep -----------------------------------------------------------------

def _sweep_job(job):
    config, data_args, out = job
    train, test, anchors, source = data_args
    row = {"noise": config.noise, "loss": str(config.loss), "selection": config.selection,
           "seed": config.seed}
    try:
        res = _run_one(config, train, test, anchors, out, source)
        row.update(status="ok", final_acc=res.log.final_acc, zero_shot_acc=res.zero_shot_acc,
                   error="")
    except (NumericAbort, InvalidInputError, ArithmeticError) as e:
        row.update(status="failed", final_acc=None, zero_shot_acc=None, error=str(e))
    return row


def cmd_sweep(args) -> int:
    train, test, anchors, source = load_source(args)
    rates = _floats(args.noise_rates)
    base_losses = [n.strip() for n in args.losses.split(",") if n.strip()]
    taus = _floats(args.taus) if args.taus else []
    kinds = []
    for name in base_losses:
        if name.lower() == "logitclip":
            if not taus:
                raise UsageError("--taus is required when sweeping logitclip")
            kinds += [LossKind("logitclip", t) for t in taus]
        else:
            kinds.append(_loss_from(name, None))
    out = _outdir(args, "sweep")
    jobs = []
    for rate in rates:
        for kind in kinds:
            noise = f"{args.noise_kind}:{rate:g}"
            cfg = TrainConfig(loss=kind, epochs=args.epochs, batch=args.batch, lr0=args.lr,
                              seed=args.seed, noise=noise, mode=args.mode, scale=args.scale,
                              selection=args.selection)
            sub = out / f"{args.noise_kind}{rate:g}_{str(kind).replace(':', '')}"
            jobs.append((cfg, (train, test, anchors, source), sub))
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            rows = list(ex.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(j) for j in jobs]
    cols = ["noise", "loss", "selection", "seed", "status", "final_acc", "zero_shot_acc", "error"]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join("" if r[c] is None else (repr(r[c]) if isinstance(r[c], float)
                                                        else str(r[c]).replace(",", ";"))
                              for c in cols))
    _write(out / "sweep.csv", "\n".join(lines) + "\n")
    cfg = {"noise_rates": rates, "noise_kind": args.noise_kind, "losses": [str(k) for k in kinds],
           "epochs": args.epochs, "mode": args.mode, "scale": args.scale, "source": source}
    _write(out / "manifest.json", dumps(manifest(
        "sweep", cfg, args.seed, files=["sweep.csv"],
        seed_rule="every run uses the base seed, so runs at one noise rate share labels and batch order")))
    for r in rows:
        acc = "-" if r["final_acc"] is None else f"{r['final_acc']:.4f}"
        print(f"{r['noise']:10s} {r['loss']:16s} {r['status']:7s} {acc}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dspt", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write synthetic or imported DSPT-EMB datasets")
    _add_data_flags(p)
    p.add_argument("--seed", type=int, dest="data_seed_alias")
    p.add_argument("--train-csv")
    p.add_argument("--test-csv")
    p.add_argument("--anchors-csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="prompt-tune the prototype model under label noise")
    _add_data_flags(p)
    p.add_argument("--config", help="JSON file whose keys mirror these flags")
    p.add_argument("--loss", help="ce, dspt, smoothing[:a], logitnorm[:t], logitclip, "
                                  "bootstrap[:b], nce, gce[:q], square, select")
    p.add_argument("--tau", type=float, help="logitclip threshold (required for logitclip)")
    p.add_argument("--noise", help="none | sym:<rate> | pair:<rate>[:mapping=cycle]")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mode", choices=["shared", "perclass"])
    p.add_argument("--scale", type=float)
    p.add_argument("--selection", action="store_true",
                   help="drop samples whose argmax disagrees with their label each epoch")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("audit", help="epoch-0 per-sample gradient audit")
    _add_data_flags(p)
    p.add_argument("--losses", default="ce,dspt")
    p.add_argument("--tau", type=float)
    p.add_argument("--noise", default="sym:0.6")
    p.add_argument("--mode", choices=["shared", "perclass"])
    p.add_argument("--scale", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("verify", help="numerically certify the DSPT gradient, loss-bound and risk-bound claims")
    p.add_argument("--all", action="store_true")
    p.add_argument("--check", action="append", choices=V.CHECKS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--grid", type=int, default=40)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="train over noise rates x losses x tau values")
    _add_data_flags(p)
    p.add_argument("--noise-rates", default="0.2,0.4,0.6,0.8")
    p.add_argument("--noise-kind", choices=["sym", "pair"], default="sym")
    p.add_argument("--losses", default="ce,dspt")
    p.add_argument("--taus", help="comma list of logitclip thresholds")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--mode", choices=["shared", "perclass"], default="shared")
    p.add_argument("--scale", type=float, default=30.0)
    p.add_argument("--selection", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gen-data" and args.data_seed_alias is not None:
        args.data_seed = args.data_seed_alias
    try:
        return args.func(args)
    except UsageError as e:
        print(f"dspt {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as e:
        print(f"dspt {args.command}: data format error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_DATA
    except ArithmeticError as e:
        # NumericAbort and collapsed prototype directions alike
        print(f"dspt {args.command}: numeric abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidInputError as e:
        print(f"dspt {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
