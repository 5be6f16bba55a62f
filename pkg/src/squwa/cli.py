"""Command-line entry points: data generation, training, ablation, evaluation, reports.

Failures exit non-zero and print one JSON object to stderr:
``{"error": {"kind": ..., "type": ..., "message": ...}}``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from squwa import config as cfgmod
from squwa.errors import ConfigError, DegenerateError, DivergenceError, SquwaError

log = logging.getLogger("squwa")

EXIT_IO = 2
EXIT_CONFIG = 3
EXIT_NOT_FOUND = 4
EXIT_RUNTIME = 5
EXIT_USAGE = 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_corpus(path):
    from squwa.synth import read_corpus

    if not (Path(path) / "manifest.json").is_file():
        raise FileNotFoundError(f"{path}: no corpus manifest")
    return read_corpus(path)


def _load_model(path, kind: str):
    from squwa.checkpoint import load_checkpoint
    from squwa.sq_model import SQModel

    if not Path(path).is_file():
        raise FileNotFoundError(f"{path}: no such checkpoint")
    model = load_checkpoint(path)
    if (kind == "sq") != isinstance(model, SQModel):
        raise ConfigError(f"{path}: expected a {'quality' if kind == 'sq' else 'full'} model checkpoint")
    return model


def _run_config(args) -> tuple[dict, int]:
    cfg = cfgmod.load_config(getattr(args, "config", None))
    return cfg, cfgmod.resolve_seed(args.seed, cfg)


def cmd_gen_data(args) -> int:
    from squwa.synth import flip_labels, generate_corpus, record_rng, write_corpus

    cfg, seed = _run_config(args)
    corpus = generate_corpus(cfgmod.synth_config(cfg, seed))
    noise = cfg["label_noise"]
    if noise["flip_rate"] > 0:
        corpus = flip_labels(corpus, noise["flip_rate"], record_rng(seed, 2**31 - 2), noise["splits"])
    manifest = write_corpus(corpus, args.out)
    _emit({"out": str(args.out), "counts": manifest["counts"], "flipped": len(manifest["flipped"])})
    return 0


def cmd_train_sq(args) -> int:
    from squwa.checkpoint import save_checkpoint
    from squwa.sq_model import train_sq

    cfg, seed = _run_config(args)
    corpus = _load_corpus(args.data)
    model_cfg, tc = cfgmod.sq_configs(cfg, seed)
    if args.epochs is not None:
        tc.epochs = args.epochs
    model, report = train_sq(corpus.split("train"), corpus.split("val"), tc, model_cfg)
    save_checkpoint(model, args.out)
    _emit({"val_accuracy": report.val_accuracy, "out": str(args.out)})
    return 0


def _write_history(history, path) -> None:
    keys = sorted({k for row in history for k in row}, key=lambda k: (k != "epoch", k))
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for row in history:
            w.writerow({k: f"{v:.6g}" if isinstance(v, float) else v for k, v in row.items()})


def _train_config(args, cfg, seed):
    tc = cfgmod.train_config(cfg, seed, getattr(args, "loss", None))
    if args.epochs is not None:
        tc.max_epochs = args.epochs
    if args.lr is not None:
        tc.lr = args.lr
    tc.__post_init__()
    return tc


def cmd_train(args) -> int:
    from squwa.checkpoint import save_checkpoint
    from squwa.plotting import plot_history
    from squwa.trainer import train
    from squwa.variants import build_variant

    cfg, seed = _run_config(args)
    corpus = _load_corpus(args.data)
    sq = _load_model(args.sq, "sq")
    tc = _train_config(args, cfg, seed)
    model = build_variant(args.variant, cfgmod.model_config(cfg), sq)
    result = train(model, corpus.split("train"), corpus.split("val"), tc)
    save_checkpoint(model, args.out)
    stem = Path(args.out).with_suffix("")
    _write_history(result.history, f"{stem}.history.csv")
    plot_history(result.history, f"{stem}.history.png")
    _emit({"variant": args.variant, "loss": tc.loss.name, "best_epoch": result.best_epoch,
           "best_val_loss": result.best_val_loss, "epochs": result.epochs_run, "out": str(args.out)})
    return 0


def cmd_ablate(args) -> int:
    from squwa.experiments import ablation, ablation_rows, write_ablation_csv
    from squwa.plotting import plot_ablation, plot_quality_curves
    from squwa.variants import VARIANTS

    cfg, seed = _run_config(args)
    corpus = _load_corpus(args.data)
    sq = _load_model(args.sq, "sq")
    tc = _train_config(args, cfg, seed)
    variants = args.variants.split(",") if args.variants else list(VARIANTS)
    results = ablation(corpus, sq, cfgmod.model_config(cfg), tc, variants)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation_rows(results)
    write_ablation_csv(rows, out / "ablation.csv")
    plot_ablation(rows, out / "ablation.png")
    with open(out / "quality_curves.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "threshold", "n_records", "aucpr"])
        for r in results:
            for row in r.test.curve:
                w.writerow([r.variant, f"{row['threshold']:.4f}", row["n_records"], f"{row['aucpr']:.6f}"])
    plot_quality_curves({r.variant: r.test.curve for r in results}, out / "quality_curves.png")
    _emit({"rows": len(rows), "out": str(out),
           "AUCPR": {row["variant"]: round(row["AUCPR"], 6) for row in rows}})
    return 0


def cmd_eval(args) -> int:
    from squwa.evaluate import write_curve_csv
    from squwa.experiments import evaluate_model
    from squwa.plotting import plot_quality_curves

    corpus = _load_corpus(args.data)
    model = _load_model(args.model, "squwa")
    ev = evaluate_model(model, corpus.split(args.split))
    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"variant": model.vc.variant, "split": args.split, "n_records": len(ev.labels), **ev.metrics}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    write_curve_csv(ev.curve, out / "quality_curve.csv")
    plot_quality_curves({model.vc.variant: ev.curve}, out / "quality_curve.png")
    _emit(summary)
    return 0


def cmd_viz(args) -> int:
    import torch

    from squwa.evaluate import attention_report, write_attention_report
    from squwa.plotting import plot_attention_report
    from squwa.signal import network_input

    corpus = _load_corpus(args.data)
    model = _load_model(args.model, "squwa")
    try:
        record = corpus.by_id(args.record)
    except KeyError:
        raise LookupError(f"record {args.record!r} not in {args.data}") from None
    x = torch.from_numpy(network_input(record, model.mc.normalize_channels)).unsqueeze(0)
    with torch.no_grad():
        out = model(x)
    if out.attention is None:
        raise ConfigError(f"variant {model.vc.variant} has no attention matrix to show")
    report = attention_report(record, out.attention[0].numpy(), out.sqi[0].numpy(),
                              composite=out.composite[0].numpy(), downsample=model.mc.downsample)
    summary = write_attention_report(report, args.out, float(out.probability[0]))
    plot_attention_report(report, Path(args.out) / f"{record.record_id}_attention.png", record.fs)
    _emit(summary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="squwa", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp, with_config=True):
        if with_config:
            sp.add_argument("--config", type=Path, help="JSON overrides for defaults.json")
        sp.add_argument("--seed", type=int, help=f"overrides ${cfgmod.SEED_ENV} and the config seed")

    def training(sp):
        sp.add_argument("--epochs", type=int, help="maximum epochs")
        sp.add_argument("--lr", type=float, help="learning rate")

    sp = sub.add_parser("gen-data", help="synthesize a corpus")
    seeded(sp)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train-sq", help="train the signal-quality model")
    seeded(sp)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train_sq)

    from squwa.losses import LOSSES
    from squwa.variants import VARIANTS

    sp = sub.add_parser("train", help="train one model variant")
    seeded(sp)
    training(sp)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--sq", type=Path, required=True, help="quality model checkpoint")
    sp.add_argument("--variant", choices=VARIANTS, default="SQUWA")
    sp.add_argument("--loss", choices=LOSSES, default="bce")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("ablate", help="train and compare all ablation variants")
    seeded(sp)
    training(sp)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--sq", type=Path, required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--variants", help="comma-separated subset (default: all nine)")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("eval", help="metrics and quality-stratified AUCPR curve")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--report", type=Path, required=True)
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("viz", help="attention report for one record")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--record", required=True)
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_viz)
    return p


def _error(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": {"kind": kind, "type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _error("UsageError", e, EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        return _error("ConfigError", e, EXIT_CONFIG)
    except OSError as e:
        return _error("IOError", e, EXIT_IO)
    except LookupError as e:
        return _error("NotFound", e, EXIT_NOT_FOUND)
    except (DivergenceError, DegenerateError, SquwaError) as e:
        return _error(type(e).__name__, e, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
