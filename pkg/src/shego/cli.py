"""Command-line entry points: pretrain, train, eval, ablate, sweep, graph-info.

Exit codes: 0 success, 2 usage/config/data-availability error, 3 data/checkpoint incompatibility.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import subprocess
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, config_from_dict, load_config, set_seed
from .data.schema import DataFormatError, UnknownReferenceError, load_schema
from .data.dialogues import load_dialogues
from .graph import build_graph, export_edge_list
from .model import ShegoModel
from .numerics import CheckpointError
from .pipeline import (
    CompatibilityError,
    build_model,
    build_vocabulary,
    check_compatibility,
    load_backbone,
    load_corpus,
    pretrain_backbone,
    resolve_backbone_path,
    save_backbone,
)
from .trainer import ABLATIONS, evaluate, metrics_csv, train, with_ablation

logger = logging.getLogger("shego")

EXIT_OK, EXIT_CONFIG, EXIT_INCOMPATIBLE = 0, 2, 3


class UsageError(Exception):
    pass


def _source_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"shego-{__version__}"


class RunManifest:
    """JSON record of a command: resolved config, seed, revision, timestamps, artifacts."""

    def __init__(self, command: str, cfg: RunConfig | None, seed: int | None, out_dir: Path, argv: list[str]):
        self.path = out_dir / "manifest.json"
        self.data = {
            "command": command,
            "argv": argv,
            "config": cfg.to_dict() if cfg is not None else None,
            "seed": seed,
            "source_revision": _source_revision(),
            "started": datetime.now(timezone.utc).isoformat(),
            "finished": None,
            "out_dir": str(out_dir),
            "artifacts": {},
        }
        self.write()

    def add(self, name: str, path) -> None:
        self.data["artifacts"][name] = str(path)

    def write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def finish(self, **extra) -> None:
        missing = [p for p in self.data["artifacts"].values() if not Path(p).exists()]
        if missing:
            raise RuntimeError(f"manifest lists missing artifacts: {missing}")
        self.data.update(extra)
        self.data["finished"] = datetime.now(timezone.utc).isoformat()
        self.write()


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else config_from_dict({})
    if getattr(args, "seed", None) is not None:
        set_seed(cfg, args.seed)
    if getattr(args, "ablation", None):
        cfg.train = with_ablation(cfg.train, args.ablation)
    return cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out_dir or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_splits(data, *names) -> None:
    for n in names:
        if not data.splits.get(n):
            raise UsageError(f"the {n} split is empty")


def _load_backbone_for(cfg: RunConfig, args, data):
    backbone, vocab = load_backbone(resolve_backbone_path(cfg, getattr(args, "backbone", None)))
    examples = [ex for exs in data.splits.values() for ex in exs]
    check_compatibility(examples, data.schema, vocab)
    return backbone, vocab


def _train_once(cfg: RunConfig, data, backbone, vocab, out: Path):
    model = build_model(cfg, data.schema, vocab, backbone)
    state = train(cfg.train, model, data.splits["train"], data.splits["dev"], out_dir=out)
    test = evaluate(model, data.splits["test"], cfg.train.eval_batch_size) if data.splits["test"] else None
    return model, state, test


# -- commands -------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "runs/pretrain")
    manifest = RunManifest("pretrain", cfg, cfg.seed, out, sys.argv)
    data = load_corpus(cfg)
    _require_splits(data, "train")
    vocab = build_vocabulary(data, cfg.data.num_sentinels)
    backbone, losses = pretrain_backbone(cfg, data, vocab)
    ckpt = out / "backbone.ckpt"
    digest = save_backbone(ckpt, backbone, vocab, {"seed": cfg.seed, "mode": cfg.pretrain.mode})
    loss_path = out / "pretrain_losses.csv"
    loss_path.write_text("step,loss\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(losses)), encoding="utf-8")
    manifest.add("backbone", ckpt)
    manifest.add("pretrain_losses", loss_path)
    manifest.finish(manifest_hash=digest)
    print(f"backbone checkpoint: {ckpt} (manifest sha256 {digest[:16]})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "runs/train")
    data = load_corpus(cfg)
    _require_splits(data, "train", "dev")
    backbone, vocab = _load_backbone_for(cfg, args, data)
    seeds = [cfg.seed + i for i in range(args.seeds)]
    rows = []
    for seed in seeds:
        run_cfg = set_seed(replace(cfg, train=replace(cfg.train)), seed)
        run_out = out if len(seeds) == 1 else out / f"seed{seed}"
        run_out.mkdir(parents=True, exist_ok=True)
        manifest = RunManifest("train", run_cfg, seed, run_out, sys.argv)
        _, state, test = _train_once(run_cfg, data, backbone, vocab, run_out)
        manifest.add("metrics", run_out / "metrics.csv")
        manifest.add("checkpoint", state.checkpoint_path)
        if test is not None:
            (run_out / "test_report.csv").write_text(test.to_csv(), encoding="utf-8")
            manifest.add("test_report", run_out / "test_report.csv")
        manifest.finish(best_epoch=state.best_epoch, best_dev_avg_jga=state.best_metric)
        rows.append((seed, state.best_metric, test.avg_jga if test else None))
        print(f"seed {seed}: best dev Avg. JGA {state.best_metric:.4f} at epoch {state.best_epoch}"
              + (f", test Avg. JGA {test.avg_jga:.4f}" if test else ""))
    if len(seeds) > 1:
        _print_mean_std("dev Avg. JGA", [r[1] for r in rows])
        if all(r[2] is not None for r in rows):
            _print_mean_std("test Avg. JGA", [r[2] for r in rows])
    return EXIT_OK


def _print_mean_std(label: str, values: list[float]) -> None:
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    print(f"{label}: {statistics.mean(values):.4f} ± {sd:.4f} over {len(values)} seeds")


def cmd_eval(args) -> int:
    try:
        model = ShegoModel.load(args.checkpoint)
    except FileNotFoundError:
        raise UsageError(f"checkpoint {args.checkpoint} does not exist") from None
    except ValueError as exc:
        raise CompatibilityError(str(exc)) from None
    data_path = Path(args.data)
    if data_path.is_dir():
        schema = load_schema(data_path / "schema.json")
        target = data_path / f"dialogues_{args.split}.json"
        if not target.exists():
            raise UsageError(f"{data_path} has no dialogues_{args.split}.json")
    else:
        schema = load_schema(Path(args.schema) if args.schema else data_path.parent / "schema.json")
        target = data_path
    if target.stat().st_size == 0:
        raise UsageError(f"{target} is empty")
    examples = load_dialogues(target, schema)
    if not examples:
        raise UsageError(f"{target} contains no evaluable turns")
    check_compatibility(examples, schema, model.vocab, model.schema)
    rep = evaluate(model, examples)
    out = _out_dir(args, "runs/eval")
    manifest = RunManifest("eval", None, None, out, sys.argv)
    (out / "report.csv").write_text(rep.to_csv(), encoding="utf-8")
    slot_path = out / "slot_accuracy.json"
    slot_path.write_text(json.dumps(rep.slot_accuracy, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    manifest.add("report", out / "report.csv")
    manifest.add("slot_accuracy", slot_path)
    manifest.finish(checkpoint=str(args.checkpoint), data=str(target))
    print(rep.table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "runs/ablate")
    manifest = RunManifest("ablate", cfg, cfg.seed, out, sys.argv)
    data = load_corpus(cfg)
    _require_splits(data, "train", "dev", "test")
    backbone, vocab = _load_backbone_for(cfg, args, data)
    variants = args.variants or list(ABLATIONS)
    rows = []
    for name in variants:
        for k in range(args.seeds):
            seed = cfg.seed + k
            run_cfg = set_seed(replace(cfg, train=with_ablation(cfg.train, name)), seed)
            run_out = out / _slug(name) / f"seed{seed}"
            _, state, test = _train_once(run_cfg, data, backbone, vocab, run_out)
            rows.append({"variant": name, "seed": seed, "best_epoch": state.best_epoch,
                         "dev_avg_jga": state.best_metric, "test_jga": test.overall_jga,
                         "test_avg_jga": test.avg_jga})
            print(f"{name:<16} seed {seed}: test Avg. JGA {test.avg_jga:.4f}")
    path = out / "ablation.csv"
    _write_rows(path, rows)
    summary = out / "ablation_summary.csv"
    _write_rows(summary, _summarise(rows, "variant", "test_avg_jga"))
    for r in _summarise(rows, "variant", "test_avg_jga"):
        print(f"{r['variant']:<16} {float(r['mean']):.4f} ± {float(r['std']):.4f}")
    manifest.add("ablation", path)
    manifest.add("summary", summary)
    manifest.finish()
    return EXIT_OK


def _slug(name: str) -> str:
    return name.replace("/", "_").replace("&", "and")


def _summarise(rows, key, metric):
    out = []
    for name in dict.fromkeys(r[key] for r in rows):
        vals = [r[metric] for r in rows if r[key] == name]
        sd = statistics.stdev(vals) if len(vals) > 1 else 0.0
        out.append({key: name, "n": len(vals), "mean": f"{statistics.mean(vals):.6f}", "std": f"{sd:.6f}"})
    return out


def _write_rows(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: f"{v:.6f}" if isinstance(v, float) else v for k, v in r.items()})
    path.write_text(buf.getvalue(), encoding="utf-8")


def sweep_grid(cfg: RunConfig) -> list[tuple[str, int, int]]:
    s = cfg.sweep
    for key in ("propagation", "num_levels", "hidden_dim"):
        if not getattr(s, key):
            raise ConfigError(f"sweep.{key} must list at least one value")
    return [(p, n, h) for p in s.propagation for n in s.num_levels for h in s.hidden_dim]


def cmd_sweep(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "runs/sweep")
    manifest = RunManifest("sweep", cfg, cfg.seed, out, sys.argv)
    grid = sweep_grid(cfg)
    data = load_corpus(cfg)
    _require_splits(data, "train", "dev")
    backbone, vocab = _load_backbone_for(cfg, args, data)
    rows = []
    for prop, levels, hidden in grid:
        cell_cfg = replace(cfg, encoder=replace(cfg.encoder, propagation=prop, num_levels=levels, hidden_dim=hidden))
        cell_out = out / f"{prop}_l{levels}_h{hidden}"
        _, state, test = _train_once(cell_cfg, data, backbone, vocab, cell_out)
        rows.append({"propagation": prop, "num_levels": levels, "hidden_dim": hidden,
                     "dev_avg_jga": state.best_metric,
                     "test_avg_jga": test.avg_jga if test else float("nan")})
        print(f"{prop} levels={levels} hidden={hidden}: dev Avg. JGA {state.best_metric:.4f}")
    path = out / "sweep.csv"
    _write_rows(path, rows)
    manifest.add("sweep", path)
    manifest.finish(cells=len(rows))
    return EXIT_OK


def cmd_graph_info(args) -> int:
    if args.schema:
        schema = load_schema(args.schema)
    else:
        schema = load_corpus(_config(args)).schema
    graph = build_graph(schema, link_same_domain=args.link_same_domain)
    print(f"services: {len(schema.services)}")
    print(f"slots (nodes): {graph.num_nodes}")
    print(f"undirected edges: {graph.num_edges()}")
    for svc in schema.services:
        idx = schema.slot_indices(svc.name)
        print(f"  {svc.name}: {len(idx)} slots, nodes {idx[0] if idx else '-'}..{idx[-1] if idx else '-'}")
    if args.export:
        export_edge_list(graph, args.export)
        print(f"edge list written to {args.export}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shego", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"shego {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=False, ablation=False, backbone=False):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out-dir", help="output directory")
        if seeds:
            sp.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
        if ablation:
            sp.add_argument("--ablation", choices=list(ABLATIONS), help="ablation variant")
        if backbone:
            sp.add_argument("--backbone", help="backbone checkpoint (overrides backbone.checkpoint)")

    common(sub.add_parser("pretrain", help="pretrain and freeze the toy backbone"))
    common(sub.add_parser("train", help="train prompts and graph encoder"), seeds=True, ablation=True, backbone=True)
    ev = sub.add_parser("eval", help="decode a split with a trained checkpoint and report metrics")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="dialogue file, or directory with schema.json")
    ev.add_argument("--split", default="test")
    ev.add_argument("--schema", help="schema.json when --data is a file outside its corpus directory")
    ev.add_argument("--out-dir")
    ab = sub.add_parser("ablate", help="train every ablation variant over several seeds")
    common(ab, seeds=True, backbone=True)
    ab.add_argument("--variants", nargs="+", choices=list(ABLATIONS))
    ab.set_defaults(seeds=3)
    common(sub.add_parser("sweep", help="grid over propagation, depth and hidden size"), backbone=True)
    gi = sub.add_parser("graph-info", help="summarise the schema graph")
    gi.add_argument("--config")
    gi.add_argument("--schema", help="schema.json (instead of the configured corpus)")
    gi.add_argument("--link-same-domain", action="store_true", help="also connect slots of same-domain services")
    gi.add_argument("--export", help="write the edge list, one \"u v\" pair per line")
    return p


COMMANDS = {
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "graph-info": cmd_graph_info,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seeds", 1) < 1:
        print("error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError, DataFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CompatibilityError, UnknownReferenceError, CheckpointError) as exc:
        print(f"incompatible input: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


if __name__ == "__main__":
    sys.exit(main())
