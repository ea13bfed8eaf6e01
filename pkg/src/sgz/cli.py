"""``sgz`` command line: synth, train, compress, decompress, eval, verify.

Exit codes: 0 ok, 2 usage, 3 data error, 4 verification failure.
``SGZ_SEED`` in the environment overrides every seed flag.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import __version__
from .coder import CodecError, deframe, frame
from .entropy_model import DISTRIBUTIONS
from .graph_model import DataError, Dataset, load_json, save_json, dataset_to_dict
from .pipeline import (Checkpoint, TrainingError, checkpoint_bytes, compress, decompress,
                       deflate_ratio, evaluate, load_checkpoint, save_checkpoint, split_indices,
                       summarize, train, verify)
from .predictors import CONTEXTS, ORDERS, PredictorConfig
from .preprocess import PREPROCESSORS
from .synth import SynthConfig, synth_generate

log = logging.getLogger("sgz")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 2, 3, 4
TRAIN_KEYS = ("epochs", "lr", "batch_size", "preproc")


class UsageError(Exception):
    pass


def _seed(value: int) -> int:
    env = os.environ.get("SGZ_SEED")
    if env is None:
        return value
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"SGZ_SEED must be an integer, got {env!r}") from None


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def _dataset_hash(ds: Dataset) -> str:
    blob = json.dumps(dataset_to_dict(ds), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(path: Path, command: str, config: dict, seed: int | None,
                    metrics: dict | None = None, ckpt: Checkpoint | None = None,
                    dataset: Dataset | None = None, started: float = 0.0) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "version": __version__,
        "config": config,
        "seed": seed,
        "checkpoint_sha256": hashlib.sha256(checkpoint_bytes(ckpt)).hexdigest() if ckpt else None,
        "dataset_sha256": _dataset_hash(dataset) if dataset is not None else None,
        "metrics": metrics,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")


def _manifest_path(out: str) -> Path:
    return Path(str(out) + ".manifest.json")


# --- commands -----------------------------------------------------------


def cmd_synth(args) -> int:
    started = time.time()
    raw = _read_json(args.config) if args.config else {}
    known = {f.name for f in fields(SynthConfig)}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown synth config keys: {sorted(unknown)}")
    if args.seed is not None:
        raw["seed"] = args.seed
    raw["seed"] = _seed(raw.get("seed", 7))
    try:
        cfg = SynthConfig.from_dict(raw)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    ds = synth_generate(cfg)
    save_json(ds, args.out)
    _write_manifest(_manifest_path(args.out), "synth", cfg.to_dict(), cfg.seed,
                    {"graphs": len(ds.graphs)}, dataset=ds, started=started)
    print(f"wrote {len(ds.graphs)} graphs to {args.out}")
    return EXIT_OK


def _model_config(raw: dict, ds: Dataset) -> tuple[PredictorConfig, dict]:
    known = {f.name for f in fields(PredictorConfig)} - {"num_object_types", "num_relation_types"}
    unknown = set(raw) - known - set(TRAIN_KEYS)
    if unknown:
        raise UsageError(f"unknown model config keys: {sorted(unknown)}")
    model = {k: v for k, v in raw.items() if k in known}
    if "context" in model:
        model["context"] = tuple(model["context"])
    weights = any(g.has_weights for g in ds.graphs)
    model.setdefault("weights", weights)
    try:
        cfg = PredictorConfig(ds.num_object_types, ds.num_relation_types, **model)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad model config: {exc}") from None
    return cfg, {k: raw[k] for k in TRAIN_KEYS if k in raw}


def cmd_train(args) -> int:
    started = time.time()
    ds = load_json(args.data)
    raw = _read_json(args.config) if args.config else {}
    for key in ("dist", "order"):
        if getattr(args, key):
            raw[key] = getattr(args, key)
    if args.ablate is not None:
        raw["context"] = [c for c in CONTEXTS if c not in args.ablate]
    seed = _seed(args.seed)
    raw["seed"] = seed
    cfg, opts = _model_config(raw, ds)
    epochs = args.epochs if args.epochs is not None else int(opts.get("epochs", 30))
    lr = args.lr if args.lr is not None else float(opts.get("lr", 1e-3))
    batch = int(opts.get("batch_size", 8))
    preproc = args.preproc or opts.get("preproc", "scc")
    tr, _ = split_indices(len(ds.graphs), seed)
    ckpt = train(ds, cfg, epochs=epochs, lr=lr, seed=seed, batch_size=batch, preproc=preproc,
                 indices=tr, on_epoch=lambda e, loss: print(f"epoch {e:3d}  loss {loss:.4f}",
                                                            flush=True))
    digest = save_checkpoint(ckpt, args.out)
    snapshot = {"model": cfg.to_dict(), "epochs": epochs, "lr": lr, "batch_size": batch,
                "preproc": preproc, "train_graphs": len(tr)}
    _write_manifest(_manifest_path(args.out), "train", snapshot, seed,
                    {"loss_history": ckpt.history}, ckpt=ckpt, dataset=ds, started=started)
    print(f"wrote checkpoint {args.out} (sha256 {digest[:16]})")
    return EXIT_OK


def cmd_compress(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    ds = load_json(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    total = 0
    for i, g in enumerate(ds.graphs):
        data = frame(compress(g, ckpt, args.preproc, args.keep_order))
        (out / f"graph_{i:06d}.sgz1").write_bytes(data)
        total += len(data)
    print(f"compressed {len(ds.graphs)} graphs into {total} bytes under {out}")
    return EXIT_OK


def cmd_decompress(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    src = Path(args.input)
    files = sorted(src.glob("*.sgz1")) if src.is_dir() else [src]
    if not files:
        raise DataError(f"no .sgz1 files under {src}")
    graphs = []
    for f in files:
        try:
            graphs.append(decompress(deframe(f.read_bytes()), ckpt))
        except CodecError as exc:
            raise CodecError(f"{f}: {exc}") from None
    save_json(Dataset(ckpt.object_vocab, ckpt.relation_vocab, graphs), args.out)
    print(f"decompressed {len(graphs)} graphs to {args.out}")
    return EXIT_OK


def _select_checkpoint(ckpts: list[Checkpoint], context: tuple[str, ...] | None,
                       dist: str | None, order: str | None) -> Checkpoint:
    for ck in ckpts:
        cfg = ck.config
        if context is not None and cfg.context != context:
            continue
        if dist is not None and cfg.dist != dist:
            continue
        if order is not None and cfg.order != order:
            continue
        return ck
    want = {"context": context, "dist": dist, "order": order}
    raise UsageError(f"no checkpoint was trained for {want}; train one with matching flags")


def cmd_eval(args) -> int:
    started = time.time()
    ds = load_json(args.data)
    ckpts = [load_checkpoint(p) for p in args.ckpt]
    context = None
    if args.ablate is not None:
        context = tuple(c for c in CONTEXTS if c not in args.ablate)
    ckpt = _select_checkpoint(ckpts, context, args.dist, args.order)
    if args.split == "all":
        idx = list(range(len(ds.graphs)))
    else:
        idx = split_indices(len(ds.graphs), ckpt.config.seed)[1]
    graphs = [ds.graphs[i] for i in idx]
    if args.limit:
        graphs = graphs[:args.limit]
    metrics = evaluate(graphs, ckpt, args.preproc, jobs=args.jobs)
    summary = summarize(metrics)
    if args.baseline == "deflate":
        summary["deflate_ratio"] = deflate_ratio(graphs)
    flags = {"context": "+".join(ckpt.config.context) or "none", "dist": ckpt.config.dist,
             "order": ckpt.config.order, "preproc": args.preproc or ckpt.preproc}
    rows = [{"dataset": Path(args.data).stem, "graph": i, **flags, **m.row()}
            for i, m in zip(idx, metrics)]
    if args.report:
        with open(args.report, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["dataset"])
            writer.writeheader()
            writer.writerows(rows)
        _write_manifest(_manifest_path(args.report), "eval", {**flags, "split": args.split},
                        ckpt.config.seed, summary, ckpt=ckpt, dataset=ds, started=started)
    if args.json:
        Path(args.json).write_text(json.dumps({"flags": flags, "summary": summary, "graphs": rows},
                                              indent=2), encoding="utf-8")
    for key in ("graphs", "ratio", "bits_per_node", "cir", "deflate_ratio", "lossless"):
        if key in summary:
            print(f"{key:14s} {summary[key]}")
    return EXIT_OK if summary.get("lossless", True) else EXIT_VERIFY


def cmd_verify(args) -> int:
    ds = load_json(args.data)
    ckpt = load_checkpoint(args.ckpt)
    graphs = ds.graphs[:args.limit] if args.limit else ds.graphs
    rep = verify(graphs, ckpt, mutations=args.mutations, seed=_seed(args.seed),
                 preproc=args.preproc)
    for line in rep.lines():
        print(line)
    print("PASS" if rep.ok else "FAIL")
    return EXIT_OK if rep.ok else EXIT_VERIFY


# --- argument parsing ---------------------------------------------------


def _contexts(text: str) -> tuple[str, ...]:
    if text.startswith("context="):
        text = text[len("context="):]
    parts = tuple(p for p in text.split(",") if p)
    bad = [p for p in parts if p not in CONTEXTS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown context {bad}; choose from {CONTEXTS}")
    return parts


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgz", description="Learned lossless scene graph codec.")
    ap.add_argument("--version", action="version", version=f"sgz {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on the 80%% split")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="model config JSON (plus epochs, lr, batch_size, preproc)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dist", choices=DISTRIBUTIONS)
    p.add_argument("--order", choices=ORDERS)
    p.add_argument("--ablate", type=_contexts, help="contexts to disable, e.g. node,edge")
    p.add_argument("--preproc", choices=PREPROCESSORS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compress", help="write one .sgz1 file per graph")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preproc", choices=PREPROCESSORS)
    p.add_argument("--keep-order", action="store_true", help="also transmit the node permutation")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode .sgz1 files back to a dataset JSON")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True, help=".sgz1 file or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="metrics table for one configuration")
    p.add_argument("--ckpt", required=True, action="append",
                   help="checkpoint; repeat to offer several for ablation matching")
    p.add_argument("--data", required=True)
    p.add_argument("--ablate", type=_contexts)
    p.add_argument("--dist", choices=DISTRIBUTIONS)
    p.add_argument("--order", choices=ORDERS)
    p.add_argument("--preproc", choices=PREPROCESSORS)
    p.add_argument("--baseline", choices=("deflate", "none"), default="deflate")
    p.add_argument("--split", choices=("test", "all"), default="test")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--report", help="per-graph CSV (a manifest is written next to it)")
    p.add_argument("--json", help="summary plus rows as JSON")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="roundtrip and context-condition harness")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--mutations", type=int, default=8, help="mutated positions per graph")
    p.add_argument("--preproc", choices=PREPROCESSORS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sgz: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CodecError, TrainingError, OSError) as exc:
        print(f"sgz: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
