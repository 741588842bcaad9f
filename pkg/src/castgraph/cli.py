"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, config_from_dict, load_config
from .graph import dump_graphs, graph_stats
from .ingest import IngestError, load_dataset, validate_file
from .metrics import emit_curves
from .pipeline import ablation_table, evaluate_partition, fit, prepare_from_config, run_ablation
from .synth import config_dict, generate
from .training import CheckpointError, load_checkpoint, predict_links, save_checkpoint

log = logging.getLogger("castgraph")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_RUNTIME):
        super().__init__(message)
        self.code = code


def _config(args) -> RunConfig:
    return load_config(getattr(args, "config", None), getattr(args, "set", None) or ())


def _records(cfg: RunConfig, override=None):
    path = override or cfg.dataset
    if not path:
        raise CliError("no dataset given (set `dataset` in the config or pass --dataset)", EXIT_INVALID)
    if not Path(path).exists():
        raise CliError(f"dataset not found: {path}", EXIT_INVALID)
    return load_dataset(path)


def run_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output_dir) / f"run-{cfg.digest()}-seed{cfg.seed}"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_ingest(args) -> int:
    report = validate_file(args.dataset)
    print(report.render(args.max_errors))
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate(cfg.synth)
    corpus.write(out / "dataset.jsonl", out / "embeddings.jsonl")
    _write_json(out / "synth_config.json", config_dict(cfg.synth))
    pos = len(corpus.planted)
    pairs = sum(len(r.events) * (len(r.events) - 1) for r in corpus.records)
    print(f"tweets: {len(corpus.records)}")
    print(f"candidate pairs: {pairs} (positive {pos}, fraction {pos / max(pairs, 1):.4f})")
    print(f"wrote {out / 'dataset.jsonl'} and {out / 'embeddings.jsonl'}")
    return EXIT_OK


def cmd_build_graphs(args) -> int:
    cfg = _config(args)
    prep = prepare_from_config(_records(cfg, args.dataset), cfg)
    totals = {"windows": len(prep.graphs), "nodes": {}, "edges": {}, "positive_pairs": 0, "negative_pairs": 0}
    for g in prep.graphs:
        s = graph_stats(g)
        for sec in ("nodes", "edges"):
            for k, v in s[sec].items():
                totals[sec][k] = totals[sec].get(k, 0) + v
        totals["positive_pairs"] += s["positive_pairs"]
        totals["negative_pairs"] += s["negative_pairs"]
    print(json.dumps(totals, indent=2))
    if args.dump:
        dump_graphs(prep.graphs, args.dump)
        print(f"wrote {args.dump}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    prep = prepare_from_config(_records(cfg, args.dataset), cfg)
    out = run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    model, state = fit(prep, cfg.model)
    save_checkpoint(out / "checkpoint.json", model, state.history, cfg.to_dict())
    (out / "curves.csv").write_text(emit_curves(state.history), encoding="utf-8")
    metrics = {
        "test": evaluate_partition(model, prep, "test").to_dict(),
        "validation": evaluate_partition(model, prep, "validation").to_dict(),
        "epochs": len(state.history),
        "best_epoch": state.best_epoch,
        "best_val_loss": state.best_val_loss,
    }
    _write_json(out / "metrics.json", metrics)
    t = metrics["test"]
    print(f"run dir: {out}")
    print(f"test f1 {t['f1']:.4f} auc {t['auc']} after {len(state.history)} epochs (best {state.best_epoch})")
    return EXIT_OK


def _from_checkpoint(args):
    model, doc = load_checkpoint(args.checkpoint)
    if args.config:
        cfg = _config(args)
    elif doc.get("run_config"):
        cfg = config_from_dict(doc["run_config"])
    else:
        raise CliError("checkpoint carries no run config; pass --config", EXIT_INVALID)
    prep = prepare_from_config(_records(cfg, args.dataset), cfg)
    if prep.d_in != model.d_in:
        raise CheckpointError(f"checkpoint expects {model.d_in} input features, data has {prep.d_in}")
    return model, cfg, prep


def cmd_eval(args) -> int:
    model, _, prep = _from_checkpoint(args)
    report = evaluate_partition(model, prep, args.partition, threshold=args.threshold)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _, prep = _from_checkpoint(args)
    lines = []
    for g in prep.graphs:
        for a, b, score in predict_links(model, g, args.threshold):
            na, nb = g.nodes[a], g.nodes[b]
            lines.append(
                json.dumps({"tweet_id": na.tweet_id, "cause": na.event_id, "effect": nb.event_id, "score": score})
            )
    text = "".join(line + "\n" for line in lines)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"{len(lines)} causal links written to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = _config(args)
    prep = prepare_from_config(_records(cfg, args.dataset), cfg)
    results = run_ablation(prep, cfg.model, cfg.ablation_modes)
    table = ablation_table(results)
    out = run_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    (out / "ablation.csv").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="castgraph", description="Spatio-temporal event causality on tweet graphs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, dataset=True):
        sp.add_argument("-c", "--config", help="YAML or JSON run config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field, e.g. model.lr=0.01")
        if dataset:
            sp.add_argument("--dataset", help="dataset path (overrides the config)")

    sp = sub.add_parser("ingest", help="validate a JSON Lines dataset")
    sp.add_argument("dataset")
    sp.add_argument("--max-errors", type=int, default=10)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="generate a synthetic corpus and embeddings")
    with_config(sp, dataset=False)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("build-graphs", help="build window graphs and print statistics")
    with_config(sp)
    sp.add_argument("--dump", help="write graphs as JSON Lines")
    sp.set_defaults(func=cmd_build_graphs)

    sp = sub.add_parser("train", help="train and write checkpoint, curves and metrics")
    with_config(sp)
    sp.set_defaults(func=cmd_train)

    for name, func, helptext in (
        ("eval", cmd_eval, "evaluate a checkpoint on one partition"),
        ("predict", cmd_predict, "emit predicted causal links"),
    ):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("checkpoint")
        with_config(sp)
        sp.add_argument("--out")
        if name == "eval":
            sp.add_argument("--partition", choices=("train", "validation", "test"), default="test")
            sp.add_argument("--threshold", type=float, default=None)
        else:
            sp.add_argument("--threshold", type=float, default=0.5)
        sp.set_defaults(func=func)

    sp = sub.add_parser("ablation", help="train the four knockout variants and tabulate them")
    with_config(sp)
    sp.set_defaults(func=cmd_ablation)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (CheckpointError, FileNotFoundError, KeyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
