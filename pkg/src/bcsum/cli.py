"""``bcs`` command-line entry point."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .errors import ConfigError, ValidationError

log = logging.getLogger("bcsum")

EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------- manifests

def _digest_path(path):
    h = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                h.update(os.path.relpath(full, path).encode())
                with open(full, "rb") as fh:
                    h.update(hashlib.sha256(fh.read()).digest())
    else:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    return h.hexdigest()


def write_manifest(where, args, inputs, started, extra=None):
    """One RunManifest JSON beside the run's outputs."""
    snapshot = {k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")}
    manifest = {
        "command": args.command + (f" {args.action}" if getattr(args, "action", None) else ""),
        "argv": sys.argv[1:],
        "config": snapshot,
        "inputs": {p: _digest_path(p) for p in inputs if p and os.path.exists(p)},
        "tool_version": __version__,
        "seed": getattr(args, "seed", None),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        manifest.update(extra)
    if os.path.isdir(where):
        path = os.path.join(where, "manifest.json" if args.command != "train" else "run_manifest.json")
    else:
        path = where + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, default=str)
    return path


def _emit(obj, fmt, out=None):
    if fmt == "json":
        text = json.dumps(obj, indent=1, default=str)
    else:
        text = "\n".join(f"{k}: {v}" for k, v in obj.items() if not isinstance(v, (list, dict))) \
            if isinstance(obj, dict) else str(obj)
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _read_jsonl(path):
    from .listing import iter_jsonl
    return [rec for _, rec in iter_jsonl(path)]


def _write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def _refiner(args):
    from .pseudo import Refiner, RefinerSpec, parse_duration
    mode = getattr(args, "refine_mode", None) or getattr(args, "mode", None)
    if not mode:
        return None
    spec = RefinerSpec(mode, getattr(args, "map", None), getattr(args, "endpoint", None),
                       parse_duration(getattr(args, "timeout", "10s")), getattr(args, "max_connections", 4))
    return Refiner(spec)


# ------------------------------------------------------------------ commands

def cmd_dataset(args):
    from .dataset import (extract_summaries, make_pairs, parse_ratios, split_dataset, split_sizes,
                          write_dataset)
    from .listing import parse_listing
    ratios = parse_ratios(args.ratios)
    split_sizes(0, ratios)  # validates
    stripped = parse_listing(args.stripped, args.arch)
    named = parse_listing(args.named, args.arch)
    summaries = extract_summaries(args.src)
    samples, counts = make_pairs(stripped, named, summaries, args.opt, args.binary)
    group_of = None
    if args.split_by_project:
        root = os.path.abspath(args.src)
        group_of = lambda s: os.path.relpath(os.path.abspath(s.source_path), root).split(os.sep)[0]
    split_dataset(samples, ratios, args.seed, group_of)
    path = write_dataset(samples, args.output, split_strings=not args.no_split_strings)
    sizes = {k: sum(1 for s in samples if s.split.value == k) for k in ("TRAIN", "VALID", "TEST")}
    write_manifest(args.output, args, [args.stripped, args.named, args.src], args._started,
                   {"counts": counts, "split_sizes": sizes})
    _emit({"output": path, **counts, "split_sizes": sizes}, args.format)
    return EXIT_OK


def cmd_normalize(args):
    from .listing import function_from_record
    from .normalize import new_counters, normalize_function
    counters = new_counters()
    out = []
    for lineno, rec in enumerate(_read_jsonl(args.input), 1):
        inner = rec.get("function", rec)
        f = function_from_record(inner, args.arch, line=lineno, path=args.input)
        rec["tokens_asm"] = normalize_function(f, split_strings=not args.no_split_strings, counters=counters).tokens
        out.append(rec)
    _write_jsonl(out, args.output)
    write_manifest(args.output, args, [args.input], args._started, {"counters": dict(counters)})
    _emit({"records": len(out), "output": args.output, **dict(counters)}, args.format)
    return EXIT_OK


def cmd_cfg(args):
    from .bicfg import build_bicfg, graph_to_record, to_dot
    from .listing import function_from_record
    graphs = []
    for lineno, rec in enumerate(_read_jsonl(args.input), 1):
        graphs.append(build_bicfg(function_from_record(rec.get("function", rec), args.arch, lineno, args.input)))
    _write_jsonl([graph_to_record(g) for g in graphs], args.output)
    if args.dot:
        with open(args.dot, "w", encoding="utf-8") as fh:
            fh.write("".join(to_dot(g) for g in graphs))
    write_manifest(args.output, args, [args.input], args._started)
    nodes = [g.q for g in graphs]
    pairs = [g.edge_counts()[0] for g in graphs]
    _emit({"graphs": len(graphs), "avg_nodes": float(np.mean(nodes)) if nodes else 0.0,
           "avg_edges": float(np.mean(pairs)) if pairs else 0.0, "output": args.output}, args.format)
    return EXIT_OK


def cmd_refine(args):
    refiner = _refiner(args)
    records = _read_jsonl(args.input)
    texts = [r.get("pseudo") or (r.get("function") or {}).get("pseudo") for r in records]
    refined = refiner.many([t or "" for t in texts])
    for r, t, new in zip(records, texts, refined):
        if t is None:
            continue
        r["pseudo"] = new
        if isinstance(r.get("function"), dict) and "pseudo" in r["function"]:
            r["function"]["pseudo"] = new
    _write_jsonl(records, args.output)
    write_manifest(args.output, args, [args.input, args.map], args._started, {"warnings": refiner.warnings})
    _emit({"records": len(records), "warnings": len(refiner.warnings), "output": args.output}, args.format)
    return EXIT_OK


def _model_config(args):
    from .model import ModelConfig
    cfg = ModelConfig.from_json(args.config) if args.config else ModelConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args):
    from .data import fit_config, load_examples, to_example
    from .train import TrainConfig, save_checkpoint, train
    cfg = _model_config(args)
    splits, vocabs = load_examples(args.data, cfg, None, args.min_freq, _refiner(args),
                                   args.shared_pseudo_summary_vocab)
    fit_config(cfg, vocabs)
    tcfg = TrainConfig(batch_size=args.batch_size, lr=args.lr, max_epochs=args.max_epochs,
                       patience=min(args.patience, args.max_epochs), beam_width=args.beam_width,
                       seed=args.seed or 0, clip_norm=args.clip_norm, checkpoint_dir=args.output,
                       stop_loss=args.stop_loss)
    train_ex = [to_example(p, vocabs, cfg) for p in splits["TRAIN"]]
    valid_ex = [to_example(p, vocabs, cfg) for p in splits["VALID"]]
    os.makedirs(args.output, exist_ok=True)
    fmt = args.format

    def log_epoch(rec):
        if fmt == "text":
            print(f"epoch {rec['epoch']:3d}  loss {rec['loss']:.4f}  valid BLEU {rec['valid_bleu']:.2f}"
                  + ("  *" if rec["improved"] else ""), flush=True)
    result = train(train_ex, valid_ex, cfg, tcfg, vocabs, log_fn=log_epoch)
    if not os.path.exists(os.path.join(args.output, "best", "manifest.json")):
        save_checkpoint(result.model, vocabs, os.path.join(args.output, "best"))
    write_manifest(args.output, args, [args.data, args.config], args._started,
                   {"stop_reason": result.stop_reason, "best_epoch": result.best_epoch})
    _emit({"best_valid_bleu": result.best_bleu, "best_epoch": result.best_epoch, "epochs": len(result.history),
           "stop_reason": result.stop_reason, "checkpoint": os.path.join(args.output, "best")}, fmt)
    return EXIT_OK


def cmd_eval(args):
    from .data import load_examples, to_example
    from .train import evaluate, load_checkpoint
    model, vocabs, _ = load_checkpoint(args.ckpt)
    splits, _ = load_examples(args.data, model.cfg, vocabs, refiner=_refiner(args))
    split = args.split.upper()
    examples = [to_example(p, vocabs, model.cfg) for p in splits.get(split, [])]
    if not examples:
        raise ValidationError(f"split {split} is empty in {args.data}")
    report = evaluate(model, examples, vocabs, args.beam_width, args.alpha, args.max_len)
    report["split"] = split
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
        write_manifest(args.output, args, [args.ckpt, args.data], args._started)
    summary = {k: report[k] for k in ("bleu", "rouge_l", "meteor", "n", "split", "note")}
    _emit(summary if args.format == "text" or args.output else report, args.format)
    return EXIT_OK


def cmd_summarize(args):
    from .data import prepare, to_example
    from .train import beam_decode, greedy_decode, load_checkpoint
    model, vocabs, _ = load_checkpoint(args.ckpt)
    refiner = _refiner(args)
    lines = []
    for rec in _read_jsonl(args.input):
        ex = to_example(prepare(rec, refiner), vocabs, model.cfg)
        ids = beam_decode(model, ex, args.beam_width, args.max_len, args.alpha) if args.beam_width > 1 \
            else greedy_decode(model, ex, args.max_len)
        lines.append(" ".join(vocabs.summary.decode(ids)))
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_metrics(args):
    from . import metrics
    with open(args.cand, encoding="utf-8") as fh:
        cands = [l.rstrip("\n").lower().split() for l in fh]
    with open(args.ref, encoding="utf-8") as fh:
        refs = [l.rstrip("\n").lower().split() for l in fh]
    if len(cands) != len(refs):
        raise ValidationError(f"{args.cand} has {len(cands)} lines but {args.ref} has {len(refs)}")
    rep = metrics.report(cands, refs).to_dict()
    if args.no_smooth:
        rep["bleu"] = metrics.bleu(cands, refs, smooth=False)
    rep["note"] = metrics.METEOR_NOTE
    _emit(rep, args.format, args.output)
    if args.output:
        write_manifest(args.output, args, [args.cand, args.ref], args._started)
    return EXIT_OK


def dataset_stats(records) -> dict:
    """Table-1 style statistics over dataset records."""
    from .data import prepare
    rows = {}
    for rec in records:
        p = prepare(rec)
        key = f"{rec.get('arch', '?')}/{rec.get('opt', '?')}"
        rows.setdefault(key, []).append((p, rec.get("split")))
    out = {}
    for key, items in sorted(rows.items()):
        ps = [p for p, _ in items]
        pairs = [p.graph.edge_counts() for p in ps]
        out[key] = {
            "functions": len(ps),
            "train": sum(1 for _, s in items if s == "TRAIN"),
            "valid": sum(1 for _, s in items if s == "VALID"),
            "test": sum(1 for _, s in items if s == "TEST"),
            "asm_avg_tokens": float(np.mean([len(p.asm.tokens) for p in ps])),
            "pseudo_avg_tokens": float(np.mean([len(p.pseudo.tokens) for p in ps])),
            "bicfg_avg_nodes": float(np.mean([p.graph.q for p in ps])),
            "bicfg_avg_edges": float(np.mean([a for a, _ in pairs])),
            "bicfg_avg_directed_edges": float(np.mean([b for _, b in pairs])),
            "summary_avg_tokens": float(np.mean([len(p.summary.tokens) for p in ps])),
        }
    return out


def cmd_stats(args):
    from .data import read_dataset
    stats = dataset_stats(read_dataset(args.data))
    if args.format == "json":
        _emit(stats, "json")
    else:
        for key, row in stats.items():
            print(key)
            for k, v in row.items():
                print(f"  {k:26s} {v:.2f}" if isinstance(v, float) else f"  {k:26s} {v}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--format", choices=("json", "text"), default="text", help="report format")


def _refine_args(p, prefix=True):
    mode = "--refine-mode" if prefix else "--mode"
    p.add_argument(mode, dest="refine_mode" if prefix else "mode", choices=("passthrough", "mapping", "remote"),
                   default=None if prefix else None, required=not prefix, help="pseudo-code refiner")
    p.add_argument("--map", help="placeholder<TAB>name mapping file")
    p.add_argument("--endpoint", help="remote refiner URL")
    p.add_argument("--timeout", default="10s", help="remote timeout, e.g. 10s or 500ms")
    p.add_argument("--max-connections", type=int, default=4)


def build_parser():
    ap = _Parser(prog="bcs", description="Binary code summarization toolkit.")
    ap.add_argument("--version", action="version", version=f"bcs {__version__}")
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("dataset", help="build {stripped function, summary} pairs")
    dsub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    dsub.required = True
    m = dsub.add_parser("make", help="join listings and doc comments into a split dataset")
    m.add_argument("--stripped", required=True)
    m.add_argument("--named", required=True)
    m.add_argument("--src", required=True, help="C source directory")
    m.add_argument("--ratios", default="0.8,0.1,0.1")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--arch", default=None)
    m.add_argument("--opt", default="O1", choices=("O1", "O2", "O3"))
    m.add_argument("--binary", default=None, help="prefix for sample ids")
    m.add_argument("--split-by-project", action="store_true",
                   help="keep each top-level source directory within one split")
    m.add_argument("--no-split-strings", action="store_true")
    m.add_argument("-o", "--output", required=True)
    _common(m)
    m.set_defaults(func=cmd_dataset)

    p = sub.add_parser("normalize", help="add normalized tokens_asm to listing records")
    p.add_argument("input")
    p.add_argument("--arch", default=None)
    p.add_argument("--no-split-strings", action="store_true")
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("cfg", help="instruction-level bidirectional CFGs")
    csub = p.add_subparsers(dest="action", metavar="ACTION", parser_class=_Parser)
    csub.required = True
    b = csub.add_parser("build", help="build one graph per listing record")
    b.add_argument("input")
    b.add_argument("--arch", default=None)
    b.add_argument("--dot", help="also write Graphviz text here")
    b.add_argument("-o", "--output", required=True)
    _common(b)
    b.set_defaults(func=cmd_cfg)

    p = sub.add_parser("refine", help="refine pseudo code in records")
    p.add_argument("input")
    _refine_args(p, prefix=False)
    p.add_argument("-o", "--output", required=True)
    _common(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="model config JSON")
    p.add_argument("--data", required=True)
    p.add_argument("-o", "--output", required=True, help="checkpoint directory")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--beam-width", type=int, default=4)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--stop-loss", type=float, default=None)
    p.add_argument("--min-freq", type=int, default=2)
    p.add_argument("--shared-pseudo-summary-vocab", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    _refine_args(p)
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="beam-decode a split and score it")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--beam-width", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--max-len", type=int, default=None)
    p.add_argument("-o", "--output")
    _refine_args(p)
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="print one summary per function")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--beam-width", type=int, default=4)
    p.add_argument("--alpha", type=float, default=0.7)
    p.add_argument("--max-len", type=int, default=None)
    _refine_args(p)
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("metrics", help="BLEU / ROUGE-L / METEOR for line-aligned files")
    p.add_argument("--cand", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--no-smooth", action="store_true", help="unsmoothed BLEU")
    p.add_argument("-o", "--output")
    _common(p)
    p.set_defaults(func=cmd_metrics, format="json")

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data", required=True)
    _common(p)
    p.set_defaults(func=cmd_stats)
    return ap


def dispatch(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:  # --help, --version and usage errors
        return e.code if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args._started = datetime.now(timezone.utc).isoformat()
    try:
        return args.func(args) or EXIT_OK
    except ConfigError as e:
        print(f"bcs: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, ValueError) as e:
        print(f"bcs: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"bcs: {e}", file=sys.stderr)
        return EXIT_VALIDATION


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
