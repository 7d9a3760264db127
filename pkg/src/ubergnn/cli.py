"""Command-line driver: ``ubergnn <command> [options]``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import shutil
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (ItemVocabulary, Session, SyntheticConfig, filter_dataset,
                   gen_synthetic, load_interactions, load_portraits, load_schema, split_dataset)
from .errors import (ConfigurationError, EmptyDatasetError, GradientCheckFailed, InvalidArgumentError,
                     UberGNNError)
from .gradcheck import grad_check
from .metrics import DEFAULT_K
from .model import PRESETS, TrainConfig, preset
from .session_graph import build_graph
from .training import PairSet, evaluate, recommend, train

log = logging.getLogger("ubergnn")

EXIT_CODES = """exit codes:
  0  success
  1  unexpected I/O or internal error
  2  command-line usage error
  3  invalid configuration or argument
  4  input schema / lookup error
  5  empty dataset after filtering
  6  checkpoint version or integrity error
  7  training diverged (non-finite loss or gradient)
  8  gradient check above tolerance
  9  recommendation impossible (no known item in the prefix)
"""

PATH_KEYS = ("interactions", "portraits", "schema", "data_dir", "output_dir")
RUN_KEYS = {"preset", "split_ratio", *PATH_KEYS}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_sessions(sessions, vocab: ItemVocabulary, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in sessions:
            fh.write(json.dumps({"user_id": s.user_id,
                                 "items": [vocab.item_id(i) for i in s.items]}) + "\n")


def _read_sessions(path: Path, vocab: ItemVocabulary) -> list[Session]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(Session(obj["user_id"], tuple(vocab.index(i) for i in obj["items"])))
    return out


def load_run_config(path) -> dict:
    """Read a JSON run config; unknown keys are rejected."""
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigurationError(f"config {path} must be a JSON object")
    unknown = set(cfg) - RUN_KEYS - TRAIN_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def _resolve(args, defaults: dict | None = None) -> dict:
    """Merge config file values with explicit flags (flags win)."""
    merged = dict(defaults or {})
    if getattr(args, "config", None):
        merged.update(load_run_config(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command", "func", "verbose") or value is None:
            continue
        merged[key] = value
    for key in PATH_KEYS:
        if key in merged and merged[key] is not None:
            merged[key] = Path(merged[key])
    return merged


def _train_config(run: dict) -> TrainConfig:
    return preset(run.get("preset", "desk"), **{k: v for k, v in run.items() if k in TRAIN_KEYS})


def _require(run: dict, *keys: str) -> None:
    for key in keys:
        if run.get(key) is None:
            raise ConfigurationError(f"missing required setting {key!r}")
        path = run[key]
        if key != "output_dir" and isinstance(path, Path) and not path.exists():
            raise InvalidArgumentError(f"{key}: {path} does not exist")


# ---------------------------------------------------------------------------
# commands

def prepare_dataset(interactions: Path, portraits: Path, schema: Path, out: Path,
                    ratio: float, seed: int) -> dict:
    records, rejected = load_interactions(interactions)
    if not records:
        raise EmptyDatasetError("empty dataset: no valid interaction rows")
    vocab, sessions = filter_dataset(records)
    load_schema(schema)          # validate before copying
    load_portraits(portraits)
    split = split_dataset(sessions, ratio, seed)
    out.mkdir(parents=True, exist_ok=True)
    _json_dump(vocab.items, out / "vocabulary.json")
    for name in ("train", "validation", "test"):
        _write_sessions(getattr(split, name), vocab, out / f"{name}.jsonl")
    shutil.copyfile(portraits, out / "portraits.csv")
    shutil.copyfile(schema, out / "schema.json")
    lengths = [len(s) for s in sessions]
    manifest = {
        "seed": seed,
        "split_ratio": ratio,
        "n_records": len(records),
        "n_rejected_rows": rejected,
        "n_items": len(vocab),
        "n_users": len({s.user_id for s in sessions}),
        "n_sessions": len(sessions),
        "n_pairs": sum(n - 1 for n in lengths),
        "avg_session_length": round(sum(lengths) / len(lengths), 6),
        "split_sessions": {n: len(getattr(split, n)) for n in ("train", "validation", "test")},
        "split_pairs": {n: sum(len(s) - 1 for s in getattr(split, n))
                        for n in ("train", "validation", "test")},
    }
    _json_dump(manifest, out / "manifest.json")
    return manifest


class PreparedData:
    def __init__(self, root: Path):
        self.root = root
        self.vocab = ItemVocabulary(json.loads((root / "vocabulary.json").read_text(encoding="utf-8")))
        self.schema = load_schema(root / "schema.json")
        self.portraits = load_portraits(root / "portraits.csv")

    def sessions(self, split: str) -> list[Session]:
        return _read_sessions(self.root / f"{split}.jsonl", self.vocab)


def _prepared(run: dict, scratch: Path) -> PreparedData:
    if run.get("data_dir") is not None:
        _require(run, "data_dir")
        return PreparedData(run["data_dir"])
    _require(run, "interactions", "portraits", "schema")
    prepare_dataset(run["interactions"], run["portraits"], run["schema"], scratch,
                    run.get("split_ratio", 0.8), run.get("seed", 1))
    return PreparedData(scratch)


def cmd_prepare(args) -> int:
    run = _resolve(args)
    _require(run, "interactions", "portraits", "schema", "output_dir")
    manifest = prepare_dataset(run["interactions"], run["portraits"], run["schema"],
                               run["output_dir"], run.get("split_ratio", 0.8), run.get("seed", 1))
    print(json.dumps(manifest, sort_keys=True))
    return 0


def cmd_gen_synthetic(args) -> int:
    cfg = SyntheticConfig()
    if args.config:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(SyntheticConfig)}
        if set(overrides) - known:
            raise ConfigurationError(f"unknown synthetic config keys: {sorted(set(overrides) - known)}")
        if "session_len_range" in overrides:
            overrides["session_len_range"] = tuple(overrides["session_len_range"])
        cfg = dataclasses.replace(cfg, **overrides)
    for flag in ("n_items", "n_users", "n_clusters", "sessions_per_user"):
        if getattr(args, flag) is not None:
            cfg = dataclasses.replace(cfg, **{flag: getattr(args, flag)})
    files, _ = gen_synthetic(cfg, args.seed, args.out)
    print(f"wrote {files.interactions}, {files.portraits}, {files.schema} (seed {args.seed})")
    return 0


def cmd_train(args) -> int:
    run = _resolve(args)
    _require(run, "output_dir")
    config = _train_config(run)
    out: Path = run["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    data = _prepared(run, out / "prepared")
    metrics_log = out / "metrics.jsonl"
    metrics_log.unlink(missing_ok=True)
    result = train(data.sessions("train"), data.sessions("validation"), data.vocab, data.schema,
                   data.portraits, config, metrics_log)
    test = data.sessions("test")
    if test:
        res = evaluate(result.model.params, config, PairSet(test, data.portraits, data.schema))
        result.model.metrics["test_p20"] = res.p_at_k
        result.model.metrics["test_mrr20"] = res.mrr_at_k
    save_checkpoint(result.model, out / "model.ckpt")
    print(json.dumps({"seed": config.seed, "variant": config.variant, "best_epoch": result.model.epoch,
                      "parameters": result.model.params.count(), **result.model.metrics}, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    model = load_checkpoint(args.checkpoint)
    data = PreparedData(Path(args.data_dir))
    if data.vocab != model.vocab:
        raise ConfigurationError("prepared data vocabulary does not match the checkpoint")
    pairs = PairSet(data.sessions(args.split), data.portraits, data.schema)
    res = evaluate(model.params, model.config, pairs, k=args.k)
    report = {"k": res.k, "p_at_k": res.p_at_k, "mrr_at_k": res.mrr_at_k, "n_cases": res.n_cases,
              "seed": model.config.seed}
    if args.out:
        _json_dump(report, Path(args.out))
    print(res.table())
    return 0


def cmd_recommend(args) -> int:
    model = load_checkpoint(args.checkpoint)
    items = [i for i in args.items.split(",") if i]
    if args.dump_graph:
        known = [model.vocab.index(i) for i in items if i in model.vocab]
        if known:
            print("src,dst,weight,direction", file=sys.stderr)
            for src, dst, w, direction in build_graph(known).edges():
                print(f"{model.vocab.item_id(src)},{model.vocab.item_id(dst)},{w!r},{direction}",
                      file=sys.stderr)
    for item, prob in recommend(model, args.user, items, args.k):
        print(f"{item} {prob:.6g}")
    return 0


def cmd_grad_check(args) -> int:
    cfg = preset(args.preset, variant=args.variant, seed=args.seed)
    report = grad_check(cfg, epsilon=args.epsilon)
    width = max(len(n) for n in report)
    for name, err in report.items():
        flag = "ok" if err <= args.tol else "FAIL"
        print(f"{name:<{width}}  {err:.3e}  {flag}")
    worst = max(report.values())
    print(f"max relative error {worst:.3e} (tolerance {args.tol:g})")
    if worst > args.tol:
        raise GradientCheckFailed(f"gradient check failed: {worst:.3e} > {args.tol:g}")
    return 0


def cmd_ablation(args) -> int:
    run = _resolve(args)
    _require(run, "output_dir")
    out: Path = run["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    data = _prepared(run, out / "prepared")
    test_pairs = PairSet(data.sessions("test"), data.portraits, data.schema)
    rows = []
    for variant in ("v1", "v2", "v3", "v4"):
        config = _train_config({**run, "variant": variant})
        result = train(data.sessions("train"), data.sessions("validation"), data.vocab,
                       data.schema, data.portraits, config)
        res = evaluate(result.model.params, config, test_pairs)
        rows.append({"variant": variant, "p20": res.p_at_k, "mrr20": res.mrr_at_k,
                     "best_epoch": result.model.epoch})
    _json_dump({"seed": run.get("seed", 1), "rows": rows}, out / "ablation.json")
    print(format_ablation(rows))
    return 0


def format_ablation(rows) -> str:
    lines = [f"{'variant':<8} {'P@20(%)':>8} {'MRR@20(%)':>10}"]
    for r in rows:
        lines.append(f"{r['variant'].upper():<8} {100 * r['p20']:>8.2f} {100 * r['mrr20']:>10.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; explicit flags override its keys")
    p.add_argument("--preset", choices=sorted(PRESETS), help="hyperparameter preset (default desk)")
    p.add_argument("--data", dest="data_dir", help="directory written by 'prepare'")
    p.add_argument("--interactions", help="interactions CSV/JSONL (when --data is not given)")
    p.add_argument("--portraits", help="user portraits CSV (when --data is not given)")
    p.add_argument("--schema", help="portrait schema JSON (when --data is not given)")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int, help="seed for splitting, init and shuffling")
    p.add_argument("--variant", choices=["v1", "v2", "v3", "v4"], help="session readout variant")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="mini-batch size")
    p.add_argument("--hidden-size", dest="d", type=int, help="item embedding size d")
    p.add_argument("--user-dim", dest="M", type=int, help="user embedding size M")
    p.add_argument("--steps", type=int, help="gated propagation steps T")
    p.add_argument("--loss", choices=["paper_bce", "categorical_ce"], help="training loss")
    p.add_argument("--lr-scale", dest="lr_scale", type=float, help="multiplier on the LR schedule")
    p.add_argument("--l2", type=float, help="L2 penalty")
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs (0 = off)")
    p.add_argument("--split-ratio", dest="split_ratio", type=float, help="train fraction (default 0.8)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ubergnn", description="Session-based recommender with user-portrait attention.",
        epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, epilog=EXIT_CODES,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.set_defaults(func=func)
        return p

    p = add("prepare", cmd_prepare, "filter, index and split raw interaction data")
    p.add_argument("--config", help="JSON run config; explicit flags override its keys")
    p.add_argument("--interactions", help="interactions CSV/JSONL")
    p.add_argument("--portraits", help="user portraits CSV")
    p.add_argument("--schema", help="portrait schema JSON")
    p.add_argument("--out", dest="output_dir", help="output directory")
    p.add_argument("--seed", type=int, help="split seed (default 1)")
    p.add_argument("--split-ratio", dest="split_ratio", type=float, help="train fraction (default 0.8)")

    p = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic interactions/portraits/schema triple")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=1, help="generator seed (default 1)")
    p.add_argument("--config", help="JSON file overriding generator settings")
    p.add_argument("--n-items", dest="n_items", type=int, help="number of items (default 500)")
    p.add_argument("--n-users", dest="n_users", type=int, help="number of users (default 200)")
    p.add_argument("--n-clusters", dest="n_clusters", type=int, help="latent user clusters (default 5)")
    p.add_argument("--sessions-per-user", dest="sessions_per_user", type=int,
                   help="sessions per user (default 10)")

    _add_train_flags(add("train", cmd_train, "train a model and write model.ckpt + metrics.jsonl"))

    p = add("evaluate", cmd_evaluate, "compute P@k and MRR@k of a checkpoint on prepared data")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", dest="data_dir", required=True, help="directory written by 'prepare'")
    p.add_argument("--split", default="test", choices=["train", "validation", "test"],
                   help="which split to score (default test)")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="cut-off (default 20)")
    p.add_argument("--out", help="write the JSON report here")

    p = add("recommend", cmd_recommend, "print top-k 'item_id probability' lines for one session")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--user", help="user id (unknown or omitted users use the unknown portrait)")
    p.add_argument("--items", required=True, help="comma-separated item ids of the session prefix")
    p.add_argument("--k", type=int, default=DEFAULT_K, help="number of items (default 20)")
    p.add_argument("--dump-graph", action="store_true",
                   help="also print the session graph as src,dst,weight,direction to stderr")

    p = add("grad-check", cmd_grad_check, "compare analytic and finite-difference gradients")
    p.add_argument("--preset", default="micro", choices=sorted(PRESETS), help="model size (default micro)")
    p.add_argument("--variant", default="v4", choices=["v1", "v2", "v3", "v4"], help="readout variant")
    p.add_argument("--seed", type=int, default=1, help="parameter seed (default 1)")
    p.add_argument("--epsilon", type=float, default=1e-5, help="central-difference step (default 1e-5)")
    p.add_argument("--tol", type=float, default=1e-4, help="max relative error (default 1e-4)")

    _add_train_flags(add("ablation", cmd_ablation, "train v1..v4 under one seed and tabulate test metrics"))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UberGNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
