"""Command-line entry point: ``ex2vec <subcommand> ...``.

Every subcommand writes its outputs plus a ``<out>.manifest.json`` holding
the resolved arguments and the SHA-256 of each output file.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, data, evaluation, gradcheck, model, synth, trainer

log = logging.getLogger("ex2vec")


class CLIError(Exception):
    pass


def _sha256(path: Path) -> str:
    if path.is_dir():
        h = hashlib.sha256()
        for f in sorted(path.iterdir()):
            h.update(f.name.encode())
            h.update(f.read_bytes())
        return h.hexdigest()
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(anchor, args, outputs, extra=None) -> Path:
    anchor = Path(anchor)
    manifest = {
        "subcommand": args.command,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    path = anchor.with_name(anchor.name + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _load_events(path, time_unit="hours") -> data.Dataset:
    return data.read_canonical(path, time_unit=time_unit)


def _config(args) -> trainer.TrainConfig:
    overrides = {"seed": getattr(args, "seed", None), "dim": args.dim, "epochs": args.epochs}
    if args.config:
        return trainer.TrainConfig.load(args.config, **overrides)
    return trainer.TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def cmd_ingest(args):
    ds = data.parse_events(args.input, args.schema, args.time_unit)
    data.write_canonical(ds, args.out)
    print(f"{len(ds)} events, {ds.n_users} users, {ds.n_items} items -> {args.out}")
    write_manifest(args.out, args, [args.out])


def cmd_filter(args):
    ds = _load_events(args.input, args.time_unit)
    if args.window_fraction is not None:
        ds = data.window_trim(ds, args.window_fraction)
    ds = data.kcore_filter(ds, args.k_item, args.k_user)
    data.write_canonical(ds, args.out)
    print(f"{len(ds)} events, {ds.n_users} users, {ds.n_items} items -> {args.out}")
    write_manifest(args.out, args, [args.out])


def cmd_split(args):
    ds = _load_events(args.data, args.time_unit)
    split = data.holdout_split(ds, args.seed)
    data.write_split_manifest(split, args.out)
    outputs = [args.out]
    if args.train_out:
        data.write_canonical(split.train, args.train_out)
        outputs.append(args.train_out)
    write_manifest(args.out, args, outputs)


def cmd_train(args):
    ds = _load_events(args.data, args.time_unit)
    cfg = _config(args)
    split = data.holdout_split(ds, cfg.seed)
    result = trainer.train(split.train, ds.select_pairs(split.validation), cfg)
    out = Path(args.out)
    model.save_checkpoint(result.params, out, result.threshold)
    outputs = [out]
    if args.log:
        trainer.write_log(result.log, args.log)
        outputs.append(args.log)
    if args.interest_out:
        _write_interest(result.params, args.interest_user, args.interest_out)
        outputs.append(args.interest_out)
    for msg in result.events:
        print(msg, file=sys.stderr)
    print(f"best lr={result.lr!r} epoch={result.epoch} val_balanced_accuracy={result.val_balanced_accuracy:.4f} "
          f"threshold={result.threshold:.6f}")
    write_manifest(out, args, outputs, {"config": dataclasses.asdict(cfg)})


def _write_interest(params, user, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("item_idx", "kernel", "effective_distance", "interest"))
        for kern in (0.0, 1.0, 5.0):
            eff, inter = model.interest_profile(params, user, kern)
            for i, (e, x) in enumerate(zip(eff, inter)):
                w.writerow((i, kern, repr(float(e)), repr(float(x))))


def cmd_evaluate(args):
    ds = _load_events(args.data, args.time_unit)
    cfg = _config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    report = evaluation.evaluate_models(ds, seeds, cfg, threads=args.threads)
    report.write_csv(args.out)
    print(report.table())
    write_manifest(args.out, args, [args.out], {"config": dataclasses.asdict(cfg)})


def cmd_curves(args):
    ds = _load_events(args.data, args.time_unit)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "listen_fraction.csv": analysis.listen_fraction_curve(ds, popular_only=args.popular_only),
        "median_gap.csv": analysis.median_gap_curve(ds, seed=args.seed),
        "median_activation.csv": analysis.median_activation_curve(ds, d=args.decay, seed=args.seed),
    }
    for name, points in files.items():
        analysis.write_curve(points, out / name)
    write_manifest(out / "curves", args, [out / n for n in files])


def cmd_synth(args):
    base = synth.mee_spec if args.preset == "mee" else synth.SynthSpec
    fields = {f.name for f in dataclasses.fields(synth.SynthSpec)}
    overrides = {k: v for k, v in vars(args).items() if k in fields and v is not None}
    spec = base(**overrides)
    ds, params = synth.synth_generate(spec)
    data.write_canonical(ds, args.out)
    outputs = [args.out]
    if args.truth_out:
        model.save_checkpoint(params, args.truth_out)
        outputs.append(args.truth_out)
    print(f"{len(ds)} exposures, listen rate {ds.label.mean():.3f} -> {args.out}")
    write_manifest(args.out, args, outputs, {"spec": dataclasses.asdict(spec)})


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    total = gradcheck.GradCheckReport(tol=args.tol)
    for _ in range(args.configs):
        dim = int(rng.choice([2, 8, 64]))
        params, batch = gradcheck.random_problem(rng, dim)
        total.merge(gradcheck.finite_diff_check(params, batch, l2_weight=float(rng.uniform(0, 1e-3)),
                                                h=args.h, tol=args.tol, rng=rng))
    for name in model.TRAINABLE:
        if name in total.max_rel_error:
            flag = "FAIL" if total.max_rel_error[name] > args.tol else "ok"
            print(f"{name:<10} max_rel_error={total.max_rel_error[name]:.3e} checked={total.checked[name]} {flag}")
    print(f"skipped {total.skipped} coordinates near a clamp boundary")
    if not total.ok:
        raise CLIError(f"gradient check failed for {', '.join(total.failures)}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ex2vec", description="Ex2Vec repeat-consumption toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def cmd(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        return sp

    def time_unit(sp):
        sp.add_argument("--time-unit", choices=("hours", "seconds"), default="hours")

    def train_opts(sp):
        sp.add_argument("--data", required=True)
        sp.add_argument("--config")
        sp.add_argument("--dim", type=int)
        sp.add_argument("--epochs", type=int)
        time_unit(sp)

    sp = cmd("ingest", cmd_ingest, "raw CSV -> canonical events")
    sp.add_argument("--schema", choices=("labeled", "timed"), required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    time_unit(sp)

    sp = cmd("filter", cmd_filter, "window trim + k-core")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k-item", type=int, default=30)
    sp.add_argument("--k-user", type=int, default=30)
    sp.add_argument("--window-fraction", type=float)
    time_unit(sp)

    sp = cmd("split", cmd_split, "holdout split manifest")
    sp.add_argument("--data", required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--train-out")
    time_unit(sp)

    sp = cmd("train", cmd_train, "train Ex2Vec on one split")
    train_opts(sp)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--log")
    sp.add_argument("--interest-out")
    sp.add_argument("--interest-user", type=int, default=0)

    sp = cmd("evaluate", cmd_evaluate, "multi-split evaluation report")
    train_opts(sp)
    sp.add_argument("--seeds", default="0,1,2,3,4")
    sp.add_argument("--out", required=True)
    sp.add_argument("--threads", type=int, default=1)

    sp = cmd("curves", cmd_curves, "per-exposure curves")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--decay", type=float, default=0.5)
    sp.add_argument("--popular-only", action="store_true")
    time_unit(sp)

    sp = cmd("synth", cmd_synth, "generate synthetic events")
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth-out")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--preset", choices=("default", "mee"), default="mee")
    sp.add_argument("--n-users", type=int)
    sp.add_argument("--n-items", type=int)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--items-per-user", type=int)

    sp = cmd("gradcheck", cmd_gradcheck, "finite-difference gradient check")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--configs", type=int, default=100)
    sp.add_argument("--h", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except OSError as exc:
        print(f"ex2vec {args.command}: I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 1
    except (CLIError, ValueError, RuntimeError) as exc:
        print(f"ex2vec {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
