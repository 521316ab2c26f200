"""Command-line entry point: ``timemkg <command> ...``.

Every command prints a one-line JSON summary on stdout. Failures print
``{"error", "module", "message"}`` on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkernel as nk
from .config import RunConfig, parse_overrides
from .errors import ConfigError, ShapeMismatch, TimeMKGError
from .kgstore import Mkg, load_mkg, save_mkg
from .model import TimeMKG
from .pipeline import PromptBank, build_prompts
from .promptembed import (
    EmbedderSpec,
    Token2VectorParams,
    Vocabulary,
    build_prompt_store,
    load_prompt_store,
)
from .training import (
    NormStats,
    SyntheticSpec,
    WindowedDataset,
    evaluate,
    gen_synthetic,
    gen_synthetic_classification,
    make_classification_set,
    make_windows,
    predict,
    read_classification_csv,
    read_series_csv,
    train,
    write_classification_csv,
    write_series_csv,
)

CHECKPOINT_FORMAT = "timemkg-checkpoint"


def _err(cls, message):
    exc = cls(message)
    exc.module = "cli"
    return exc


# ----------------------------------------------------------------------------
# shared plumbing


@dataclass
class Run:
    config: RunConfig
    names: list[str]
    dataset: WindowedDataset
    graph: Mkg
    bank: PromptBank
    model: TimeMKG


def _embedder(cfg: RunConfig) -> EmbedderSpec:
    return EmbedderSpec(dim=cfg.model.token_dim, seed=cfg.model.embed_seed)


def _load_data(cfg: RunConfig):
    if cfg.data.task == "forecast":
        names, _, values = read_series_csv(cfg.data.path)
        dataset = make_windows(values, cfg.data.history, cfg.data.horizon, cfg.data.splits, names)
    else:
        names, samples, labels = read_classification_csv(cfg.data.path)
        if samples.shape[1] != cfg.data.history:
            raise _err(ShapeMismatch, f"samples hold {samples.shape[1]} steps but data.history is {cfg.data.history}")
        if labels.min() < 0 or labels.max() >= cfg.data.n_classes:
            raise _err(ConfigError, f"labels span {labels.min()}..{labels.max()} but data.n_classes is {cfg.data.n_classes}")
        dataset = make_classification_set(samples, labels, cfg.data.splits, names)
    return names, dataset


def _prepare(cfg: RunConfig, vocab: Vocabulary | None = None) -> Run:
    cfg.validate()
    names, dataset = _load_data(cfg)
    graph = load_mkg(cfg.graph.path)
    model = TimeMKG(cfg.model_config(len(names)))
    records = build_prompts(graph, names, cfg.graph.template, cfg.graph.hops, model.config.uses_mkg)
    bank = PromptBank.build(records, _embedder(cfg), cfg.model.l_max, vocab)
    return Run(cfg, names, dataset, graph, bank, model)


def _manifest(run: Run, extra: dict) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "run_config": run.config.to_ini(),
        "model_config": run.model.config.to_dict(),
        "names": run.names,
        "norm_stats": run.dataset.norm_stats.to_dict(),
        "vocab": run.bank.vocab.tokens(),
        "prompt_hashes": {r.variable_id: r.hash for r in run.bank.records},
        **extra,
    }


def _read_checkpoint(path):
    tensors, manifest = nk.load_checkpoint(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise _err(ConfigError, f"{path} is not a model checkpoint")
    return tensors, manifest


def _config_for(args, manifest: dict | None = None) -> RunConfig:
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "config", None):
        return RunConfig.load(args.config, overrides)
    if manifest is None:
        raise _err(ConfigError, "--config is required")
    return RunConfig.from_ini(manifest["run_config"], overrides)


def _restore(args) -> tuple[Run, dict]:
    """Rebuild the run from config + checkpoint, checking the two agree."""
    tensors, manifest = _read_checkpoint(args.checkpoint)
    cfg = _config_for(args, manifest)
    vocab = Vocabulary(manifest["vocab"], frozen=True)
    run = _prepare(cfg, vocab)
    saved = manifest["model_config"]
    current = run.model.config.to_dict()
    diff = [k for k in current if k != "seed" and saved.get(k) != current[k]]
    if diff:
        detail = ", ".join(f"{k}: checkpoint {saved.get(k)!r} vs config {current[k]!r}" for k in diff)
        raise _err(ShapeMismatch, f"checkpoint incompatible with config ({detail})")
    if manifest["names"] != run.names:
        raise _err(ShapeMismatch, f"checkpoint variables {manifest['names']} differ from data header {run.names}")
    run.model.load_state_dict(tensors)
    # the checkpoint's statistics are authoritative for new inputs
    run.dataset.norm_stats = NormStats.from_dict(manifest["norm_stats"])
    return run, manifest


def _prompt_vectors(run: Run, store_path) -> np.ndarray | None:
    if not store_path:
        return None
    store = load_prompt_store(store_path, run.bank.records, expected_dim=run.model.config.d)
    return np.stack([store.vector(r.variable_id) for r in run.bank.records])


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_matrix(path, names, matrix):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query"] + list(names))
        for name, row in zip(names, matrix):
            w.writerow([name] + [repr(float(v)) for v in row])


# ----------------------------------------------------------------------------
# commands


def cmd_build_kg(args) -> dict:
    graph = load_mkg(args.triplets)
    for name in args.variables or ():
        graph.add_node(name)
    if args.data:
        names, _, _ = read_series_csv(args.data)
        for name in names:
            graph.add_node(name)
    save_mkg(graph, args.out)
    return {"command": "build-kg", "nodes": len(graph.nodes), "edges": len(graph.edges),
            "relations": sorted(graph.relation_vocab), "out": str(args.out)}


def cmd_embed(args) -> dict:
    if args.checkpoint:
        tensors, manifest = _read_checkpoint(args.checkpoint)
        cfg = _config_for(args, manifest)
        names = manifest["names"]
        vocab = Vocabulary(manifest["vocab"], frozen=True)
        params = Token2VectorParams(*(nk.Tensor(tensors[f"t2v.{k}"]) for k in ("w_pool", "b_pool", "w_proj", "b_proj")))
        graph_path = args.graph or cfg.graph.path
    else:
        cfg = _config_for(args) if args.config else RunConfig()
        for item, value in (("graph.template", args.template), ("graph.hops", args.hops)):
            if value is not None:
                cfg.set(item, str(value))
        graph_path = args.graph or cfg.graph.path
        if not graph_path:
            raise _err(ConfigError, "--graph is required without a checkpoint")
        vocab = Vocabulary()
        m = cfg.model
        params = Token2VectorParams.init(m.l_max, m.token_dim, m.d, np.random.default_rng(cfg.train.seed))
        names = None
    graph = load_mkg(graph_path)
    if names is None:
        names = read_series_csv(args.data)[0] if args.data else sorted(graph.nodes)
    with_triplets = cfg.model.variant != "wo_mkg"
    records = build_prompts(graph, names, cfg.graph.template, cfg.graph.hops, with_triplets)
    store = build_prompt_store(records, _embedder(cfg), params, args.out, vocab, cfg.model.t2v_activation)
    return {"command": "embed", "variables": len(store.variable_ids), "dim": int(store.matrix.shape[1]),
            "trained": bool(args.checkpoint), "out": str(args.out)}


def cmd_train(args) -> dict:
    cfg = _config_for(args)
    run = _prepare(cfg)
    result = train(run.model, run.dataset, run.bank.tokens, cfg.train_config())
    m = cfg.data.seasonal_period
    val = evaluate(run.model, run.dataset, "val", run.bank.tokens, m=m).to_dict() if len(run.dataset["val"]) else None
    manifest = _manifest(run, {"val_metrics": val, "best_step": result.best_step, "steps_run": result.steps_run})
    nk.save_checkpoint(args.out, run.model.state_dict(), manifest)
    out = {"command": "train", "checkpoint": str(args.out), "steps_run": result.steps_run,
           "best_step": result.best_step, "best_val_loss": result.best_val,
           "final_train_loss": result.losses[-1], "val_metrics": val}
    if args.loss_curve:
        val_at = dict(result.val_curve)
        with open(args.loss_curve, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_loss", "val_loss"])
            for step, loss in enumerate(result.losses, start=1):
                w.writerow([step, repr(loss), repr(val_at[step]) if step in val_at else ""])
        out["loss_curve"] = str(args.loss_curve)
    if args.metrics:
        _write_json(args.metrics, {"val": val, "best_step": result.best_step, "steps_run": result.steps_run,
                                   "stopped_early": result.stopped_early})
        out["metrics"] = str(args.metrics)
    if args.store:
        t2v = run.model.t2v
        build_prompt_store(run.bank.records, _embedder(cfg), t2v, args.store,
                           Vocabulary(run.bank.vocab.tokens(), frozen=True), cfg.model.t2v_activation)
        out["store"] = str(args.store)
    return out


def cmd_eval(args) -> dict:
    run, _ = _restore(args)
    vectors = _prompt_vectors(run, args.store)
    report = evaluate(run.model, run.dataset, args.split, run.bank.tokens, vectors,
                      m=run.config.data.seasonal_period).to_dict()
    if args.out:
        _write_json(args.out, {args.split: report})
    return {"command": "eval", "split": args.split, "metrics": report}


def cmd_forecast(args) -> dict:
    run, _ = _restore(args)
    if run.model.config.task != "forecast":
        raise _err(ConfigError, "checkpoint is a classifier; use classify")
    names, stamps, values = read_series_csv(args.history)
    if names != run.names:
        raise _err(ShapeMismatch, f"history columns {names} differ from training columns {run.names}")
    t = run.model.config.history
    if values.shape[0] < t:
        raise _err(ShapeMismatch, f"history has {values.shape[0]} rows, need at least {t}")
    stats = run.dataset.norm_stats
    z = stats.normalize(values[-t:])[None]
    pred = stats.denormalize(predict(run.model, z, run.bank.tokens, _prompt_vectors(run, args.store))[0])
    write_series_csv(args.out, run.names, pred)
    return {"command": "forecast", "rows": int(pred.shape[0]), "columns": run.names, "out": str(args.out)}


def cmd_classify(args) -> dict:
    run, _ = _restore(args)
    if run.model.config.task != "classify":
        raise _err(ConfigError, "checkpoint is a forecaster; use forecast")
    names, samples, labels = read_classification_csv(args.samples)
    if names != run.names:
        raise _err(ShapeMismatch, f"sample columns {names} differ from training columns {run.names}")
    if samples.shape[1] != run.model.config.history:
        raise _err(ShapeMismatch, f"samples hold {samples.shape[1]} steps, model expects {run.model.config.history}")
    logits = predict(run.model, run.dataset.norm_stats.normalize(samples), run.bank.tokens,
                     _prompt_vectors(run, args.store))
    pred = np.argmax(logits, axis=-1)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample", "predicted"] + [f"logit_{c}" for c in range(logits.shape[1])])
        for i, (p, row) in enumerate(zip(pred, logits)):
            w.writerow([i, int(p)] + [repr(float(v)) for v in row])
    return {"command": "classify", "samples": int(len(pred)), "accuracy_vs_file_labels": float(np.mean(pred == labels)),
            "out": str(args.out)}


def cmd_export_attention(args) -> dict:
    run, _ = _restore(args)
    part = run.dataset[args.split]
    if not 0 <= args.sample < len(part):
        raise _err(ConfigError, f"sample {args.sample} outside split {args.split!r} of size {len(part)}")
    with nk.no_grad():
        res = run.model(part.history[args.sample:args.sample + 1], run.bank.tokens)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for branch, scores in sorted(res.scores.items()):
        layers = scores if isinstance(scores, list) else [scores]
        for i, s in enumerate(layers):
            path = out_dir / (f"{branch}.csv" if branch == "cma" else f"{branch}_layer{i}.csv")
            s = np.asarray(s)
            _write_matrix(path, run.names, s[0] if s.ndim == 3 else s)
            written.append(path.name)
    return {"command": "export-attention", "split": args.split, "sample": args.sample, "files": written,
            "out_dir": str(out_dir)}


def cmd_synth(args) -> dict:
    spec_data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
    if args.seed is not None:
        spec_data["seed"] = args.seed
    if "classes" in spec_data:
        base = {k: v for k, v in spec_data.items() if k not in ("classes", "per_class")}
        specs = [SyntheticSpec.from_dict({**base, **c}) for c in spec_data["classes"]]
        names, samples, labels = gen_synthetic_classification(specs, int(spec_data.get("per_class", 20)),
                                                              int(spec_data.get("seed", 0)))
        write_classification_csv(args.out_csv, names, samples, labels)
        graph = gen_synthetic(specs[0]).graph
        summary = {"samples": int(len(labels)), "classes": len(specs)}
    else:
        data = gen_synthetic(SyntheticSpec.from_dict(spec_data))
        names, graph = data.names, data.graph
        write_series_csv(args.out_csv, names, data.series)
        summary = {"rows": int(data.series.shape[0])}
    save_mkg(graph, args.out_triplets)
    return {"command": "synth", "variables": names, "edges": len(graph.edges), **summary,
            "out_csv": str(args.out_csv), "out_triplets": str(args.out_triplets)}


# ----------------------------------------------------------------------------
# argument parsing


def _config_args(p, required=True):
    p.add_argument("--config", required=required, help="run config file (INI sections data/graph/model/train)")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value; repeatable; wins over the file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timemkg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kg", help="validate and normalize a triplet JSONL graph")
    p.add_argument("--triplets", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variables", nargs="*", help="extra variable nodes to register")
    p.add_argument("--data", help="series CSV whose header names are registered as nodes")
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("embed", help="write a prompt embedding store")
    _config_args(p, required=False)
    p.add_argument("--graph")
    p.add_argument("--template")
    p.add_argument("--hops", type=int)
    p.add_argument("--data", help="series CSV naming the variables (default: every graph node)")
    p.add_argument("--checkpoint", help="use trained Token2Vector weights, vocabulary and config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _config_args(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-curve", help="CSV of per-step training loss")
    p.add_argument("--metrics", help="JSON of validation metrics")
    p.add_argument("--store", help="also write the trained prompt store")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on one split")
    _config_args(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--store")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("forecast", help="forecast the next L steps after a history CSV")
    _config_args(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", required=True)
    p.add_argument("--store")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("classify", help="classify samples from a long-format CSV")
    _config_args(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--samples", required=True)
    p.add_argument("--store")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("export-attention", help="write N x N score matrices for one sample")
    _config_args(p, required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", type=int, default=0)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_attention)

    p = sub.add_parser("synth", help="generate synthetic series and their causal graph")
    p.add_argument("--spec", required=True, help="JSON synthetic spec")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-triplets", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except TimeMKGError as exc:
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "module": "cli", "message": str(exc)}, sort_keys=True),
              file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
