"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import geometry as geo
from .data import (LABELS, DataError, TempRelLabel, build_graph, event_vectors, label_counts,
                   load_pairs, load_split, make_split, select_docs)
from .embed import EmbedModel, EmbedTrainConfig, evaluate, norm_ordering_rate, train_embed, tune_threshold
from .metrics import ConfusionMatrix, EmptyEvaluation, compute_metrics, format_report, per_class_metrics
from .relnet import ABLATION_FLAGS, DISTANCE_MODES, RelNetConfig, RelNetModel, ablate, train_relnet
from .synth import SynthSpec, generate, write

log = logging.getLogger("hypertemp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
OUT_ENV = "HYPERTEMP_OUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_jsonl(records, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def _run_config(args) -> dict:
    # the output location is left out so reruns elsewhere give identical bytes
    cfg = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
           if k not in ("func", "out")}
    cfg["version"] = __version__
    return cfg


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV) or "runs"
    return Path(out)


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e.msg})") from None


def _splits(args, pairs):
    """(train, dev, test) example lists from a manifest or a seeded 80/20 split."""
    if args.split:
        sp = load_split(args.split)
    else:
        sp = make_split(sorted({p.doc_id for p in pairs}), seed=args.seed)
    return (select_docs(pairs, sp["train"]), select_docs(pairs, sp["dev"]),
            select_docs(pairs, sp["test"]))


def _metrics_line(name: str, cm: ConfusionMatrix) -> str:
    m = compute_metrics(cm)
    return (f"{name}: P={m['precision'] * 100:.1f} R={m['recall'] * 100:.1f} "
            f"Acc={m['accuracy'] * 100:.1f} F1={m['f1'] * 100:.1f}")


def _summary(cm: ConfusionMatrix) -> dict:
    return {"overall": compute_metrics(cm),
            "per_class": {lab.value: v for lab, v in per_class_metrics(cm).items()},
            "confusion": cm.to_json()}


def _load_checkpoint(path):
    ck = _read_json(path)
    kind = ck.get("kind") if isinstance(ck, dict) else None
    if kind == "embed":
        return kind, EmbedModel.from_checkpoint(ck)
    if kind == "relnet":
        return kind, RelNetModel.from_checkpoint(ck)
    raise DataError(f"{path}: unknown checkpoint kind {kind!r}")


# --- subcommands -------------------------------------------------------------


def cmd_validate(args) -> int:
    pairs = load_pairs(args.pairs)
    counts = label_counts(pairs)
    print(f"{'Class':<8} {'Count':>7}")
    for lab in LABELS:
        print(f"{lab.short:<8} {counts[lab]:>7}")
    print(f"{'Total':<8} {len(pairs):>7}")
    docs = len({p.doc_id for p in pairs})
    dim = pairs[0].dim if pairs else 0
    print(f"{docs} documents, embedding dimension {dim}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(docs=args.docs, depth=args.depth, noise=args.noise, seed=args.seed,
                         dim=args.dim, seq_len=args.seq_len, vague_frac=args.vague_frac,
                         knowledge_bins=args.knowledge_bins)
    except ValueError as e:
        raise UsageError(str(e)) from None
    paths = write(generate(spec), _out_dir(args))
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


def cmd_train_embed(args) -> int:
    pairs = load_pairs(args.pairs)
    train, dev, test = _splits(args, pairs)
    if not train:
        raise DataError("no training pairs")
    cfg = EmbedTrainConfig(alpha=args.alpha, negatives_per_positive=args.negatives, epochs=args.epochs,
                           lr=args.lr, batch_size=args.batch, seed=args.seed, dim_out=args.dim,
                           activation=args.activation, l1_denominator=args.l1_denominator,
                           epsilon=args.epsilon, weight_decay=args.weight_decay)
    geom = geo.GeometryConfig(args.ball_eps)
    tune_on = dev or train
    log_records = []

    def on_epoch(model, rec):
        model.rules = tune_threshold(tune_on, model)
        m = compute_metrics(evaluate(model, tune_on))
        log_records.append({"epoch": rec["epoch"], "train_loss": rec["train_loss"],
                            "dev_acc": m["accuracy"], "dev_f1": m["f1"],
                            "skipped_degenerate": rec["skipped_degenerate"]})

    model, _ = train_embed(train, build_graph(train), cfg, geom, callback=on_epoch)
    model.rules = tune_threshold(tune_on, model)
    out = _out_dir(args)
    run_config = _run_config(args)
    ck = model.to_checkpoint(alpha=cfg.alpha, seed=cfg.seed)
    ck["run_config"] = run_config
    _dump(ck, out / "checkpoint.json")
    _dump(run_config, out / "run_config.json")
    _write_jsonl(log_records, out / "metrics.jsonl")
    report = {"threshold_t": model.rules.threshold_t, "epsilon": model.rules.epsilon}
    for name, part in (("dev", dev), ("test", test)):
        if part:
            cm = evaluate(model, part)
            print(_metrics_line(name, cm))
            report[name] = _summary(cm)
            report[name]["norm_ordering_rate"] = _safe_ordering(model, part)
    report["run_config"] = run_config
    _dump(report, out / "report.json")
    print(f"threshold t={model.rules.threshold_t:.2f} epsilon={model.rules.epsilon}")
    print(f"checkpoint: {out / 'checkpoint.json'}")
    return EXIT_OK


def _safe_ordering(model, pairs):
    try:
        return norm_ordering_rate(model, pairs)
    except ValueError:
        return None


def cmd_train_relnet(args) -> int:
    pairs = load_pairs(args.pairs)
    train, dev, test = _splits(args, pairs)
    if not train:
        raise DataError("no training pairs")
    cfg = RelNetConfig(d2=args.d2, d3=args.d3, d4=args.d4, knowledge_bins=args.knowledge_bins,
                       distance_mode=args.distance_mode, epochs=args.epochs, lr=args.lr,
                       batch_size=args.batch, seed=args.seed, dropout=args.dropout,
                       weight_decay=args.weight_decay)
    try:
        cfg = ablate(cfg, args.ablate or [])
    except ValueError as e:
        raise UsageError(str(e)) from None
    geom = geo.GeometryConfig(args.ball_eps)
    model, hist = train_relnet(train, dev, cfg, geom)
    out = _out_dir(args)
    run_config = _run_config(args)
    ck = model.to_checkpoint()
    ck["run_config"] = run_config
    ck["flags"] = sorted(args.ablate or [])
    _dump(ck, out / "checkpoint.json")
    _dump(run_config, out / "run_config.json")
    _write_jsonl(hist.epochs, out / "metrics.jsonl")
    report = {"best_epoch": hist.best_epoch, "num_parameters": model.num_parameters()}
    for name, part in (("dev", dev), ("test", test)):
        if part:
            cm = model.evaluate(part)
            print(_metrics_line(name, cm))
            report[name] = _summary(cm)
    report["run_config"] = run_config
    _dump(report, out / "report.json")
    print(f"best epoch {hist.best_epoch}; checkpoint: {out / 'checkpoint.json'}")
    return EXIT_OK


def _read_predictions(path) -> ConfusionMatrix:
    gold, pred = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                gold.append(TempRelLabel(obj["gold"]))
                pred.append(TempRelLabel(obj["pred"]))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError):
                raise DataError(f"line {lineno}: expected {{'gold': LABEL, 'pred': LABEL}}") from None
    return ConfusionMatrix.from_labels(gold, pred)


def cmd_eval(args) -> int:
    if args.predictions:
        cm = _read_predictions(args.predictions)
    else:
        if not (args.checkpoint and args.pairs):
            raise UsageError("eval needs --checkpoint and --pairs, or --predictions")
        kind, model = _load_checkpoint(args.checkpoint)
        pairs = load_pairs(args.pairs)
        if pairs and pairs[0].dim != model.dim_in:
            raise DataError(f"checkpoint expects dimension {model.dim_in}, data has {pairs[0].dim}")
        cm = evaluate(model, pairs) if kind == "embed" else model.evaluate(pairs)
    print(format_report(cm))
    if args.json:
        _dump(_summary(cm), Path(args.json))
    return EXIT_OK


def cmd_predict(args) -> int:
    kind, model = _load_checkpoint(args.checkpoint)
    pairs = load_pairs(args.pairs)
    if pairs and pairs[0].dim != model.dim_in:
        raise DataError(f"checkpoint expects dimension {model.dim_in}, data has {pairs[0].dim}")
    records = []
    if kind == "embed":
        scores = model.scores(pairs) if pairs else np.zeros(0)
        for p, s, lab in zip(pairs, scores, model.predict(pairs) if pairs else []):
            records.append({"doc_id": p.doc_id, "pair_id": p.pair_id, "gold": p.label.value,
                            "pred": lab.value, "score": float(s)})
    else:
        probs = model.predict_proba(pairs)
        for p, pr in zip(pairs, probs):
            records.append({"doc_id": p.doc_id, "pair_id": p.pair_id, "gold": p.label.value,
                            "pred": LABELS[int(pr.argmax())].value,
                            "probs": {lab.value: float(v) for lab, v in zip(LABELS, pr)}})
    out = Path(args.out) if args.out else _out_dir(args) / "predictions.jsonl"
    _write_jsonl(records, out)
    print(f"{len(records)} predictions: {out}")
    return EXIT_OK


def cmd_viz(args) -> int:
    kind, model = _load_checkpoint(args.checkpoint)
    if kind != "embed" or model.dim_out != 2:
        raise UsageError("visualization requires 2-D")
    pairs = load_pairs(args.pairs)
    vecs = event_vectors(pairs)
    keys = sorted(vecs)
    coords = model.embed(np.stack([vecs[k] for k in keys])) if keys else np.zeros((0, 2))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("doc_id,event_id,x,y\n")
        for (doc, ev), (x, y) in zip(keys, coords):
            fh.write(f"{doc},{ev},{float(x)!r},{float(y)!r}\n")
    print(f"{len(keys)} events: {out}")
    if args.svg:
        where = {k: c for k, c in zip(keys, coords)}
        edges = []
        for g in build_graph(pairs).values():
            for u, v, lab in sorted(g.edges, key=lambda e: (e[0], e[1], e[2].value)):
                if lab is TempRelLabel.BEFORE:
                    edges.append((where[(g.doc_id, u)], where[(g.doc_id, v)]))
                elif lab is TempRelLabel.AFTER:
                    edges.append((where[(g.doc_id, v)], where[(g.doc_id, u)]))
        Path(args.svg).write_text(disk_svg(coords, edges), encoding="utf-8")
        print(f"figure: {args.svg}")
    return EXIT_OK


def disk_svg(points: np.ndarray, edges, size: int = 600) -> str:
    """Unit disk with event points and arrows from earlier to later events."""
    half = size / 2.0
    r = half - 10.0

    def px(p):
        return f"{half + r * p[0]:.3f}", f"{half - r * p[1]:.3f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="6" '
        'markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#555"/></marker></defs>',
        f'<circle cx="{half}" cy="{half}" r="{r}" fill="none" stroke="black" stroke-width="1"/>',
    ]
    for a, b in edges:
        (x1, y1), (x2, y2) = px(a), px(b)
        parts.append(f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#555" '
                     f'stroke-width="0.6" marker-end="url(#arrow)"/>')
    for p in points:
        x, y = px(p)
        parts.append(f'<circle cx="{x}" cy="{y}" r="2.5" fill="#c0392b"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# --- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hypertemp", description="Temporal relation extraction on the Poincaré ball.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("validate", help="check a pair file and print label counts")
    s.add_argument("pairs")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("synth", help="generate a synthetic corpus")
    s.add_argument("--docs", type=int, default=50)
    s.add_argument("--depth", type=int, default=6)
    s.add_argument("--noise", type=float, default=0.3)
    s.add_argument("--dim", type=int, default=16)
    s.add_argument("--seq-len", type=int, default=8)
    s.add_argument("--vague-frac", type=float, default=0.15)
    s.add_argument("--knowledge-bins", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    def common_train(s):
        s.add_argument("--pairs", required=True)
        s.add_argument("--split", help="JSON manifest with train/dev/test doc ids")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--lr", type=float, default=1e-3)
        s.add_argument("--batch", type=int, default=250)
        s.add_argument("--weight-decay", type=float, default=0.0)
        s.add_argument("--ball-eps", type=float, default=1e-5)
        s.add_argument("--out")

    s = sub.add_parser("train-embed", help="train Poincaré event embeddings")
    common_train(s)
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--dim", type=int, default=2)
    s.add_argument("--negatives", type=int, default=1)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--epsilon", type=float, default=0.05)
    s.add_argument("--activation", choices=("identity", "relu", "tanh"), default="identity")
    s.add_argument("--l1-denominator", choices=("with_positive", "negatives_only"),
                   default="with_positive")
    s.set_defaults(func=cmd_train_embed)

    s = sub.add_parser("train-relnet", help="train the hyperbolic GRU classifier")
    common_train(s)
    s.add_argument("--d2", type=int, default=128)
    s.add_argument("--d3", type=int, default=32)
    s.add_argument("--d4", type=int, default=64)
    s.add_argument("--knowledge-bins", type=int, default=16)
    s.add_argument("--epochs", type=int, default=15)
    s.add_argument("--dropout", type=float, default=0.0)
    s.add_argument("--distance-mode", choices=DISTANCE_MODES, default="exp0")
    s.add_argument("--ablate", action="append", choices=ABLATION_FLAGS)
    s.set_defaults(func=cmd_train_relnet)

    s = sub.add_parser("eval", help="metrics for a checkpoint or a predictions file")
    s.add_argument("--checkpoint")
    s.add_argument("--pairs")
    s.add_argument("--predictions", help="JSON-lines with gold and pred labels")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="label pairs with a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("viz", help="export 2-D embedding coordinates")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--pairs", required=True)
    s.add_argument("--out", required=True, help="CSV path")
    s.add_argument("--svg", help="optional vector figure path")
    s.set_defaults(func=cmd_viz)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, EmptyEvaluation, FileNotFoundError, IsADirectoryError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (KeyError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
