"""Data loading, vocabulary, backbone checkpoints and model construction from a RunConfig."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .backbone import Backbone, BackboneConfig, pretrain_and_freeze
from .config import ConfigError, RunConfig
from .data.dialogues import DialogueExample, history_tokens, load_dialogues
from .data.schema import Schema, load_schema
from .data.synthetic import (
    CorpusSpec,
    corpus_spec_from_dict,
    corpus_texts,
    default_corpus_spec,
    generate_synthetic_dialogues,
    load_corpus_spec,
)
from .data.dialogues import examples_from_dialogues
from .data.vocab import Vocabulary, segment
from .model import ShegoModel, pretraining_texts
from .numerics import Tensor, load_checkpoint, save_checkpoint
from .prompts import build_query, build_target
from .trainer import apply_ablation

logger = logging.getLogger(__name__)
SPLITS = ("train", "dev", "test")


class CompatibilityError(ValueError):
    """Checkpoint and data disagree on vocabulary or schema."""


@dataclass
class CorpusData:
    schema: Schema
    splits: dict[str, list[DialogueExample]]
    texts: list[str]


def corpus_spec(cfg: RunConfig) -> CorpusSpec:
    d = cfg.data
    if d.spec_file:
        return load_corpus_spec(cfg.resolve(d.spec_file))
    if d.synthetic:
        return corpus_spec_from_dict(d.synthetic, base_dir=cfg.base_dir)
    return default_corpus_spec()


def load_corpus(cfg: RunConfig) -> CorpusData:
    """Synthetic corpus from the config, or an on-disk directory with schema.json + dialogues_<split>.json."""
    d = cfg.data
    if d.path:
        root = cfg.resolve(d.path)
        schema_path = root / "schema.json"
        if not schema_path.exists():
            raise ConfigError(f"data directory {root} has no schema.json")
        schema = load_schema(schema_path)
        splits = {}
        for name in SPLITS:
            p = root / f"dialogues_{name}.json"
            splits[name] = load_dialogues(p, schema, d.history_budget) if p.exists() else []
        texts = [u for exs in splits.values() for ex in exs for _, u in ex.history]
    else:
        spec = corpus_spec(cfg)
        schema, raw = generate_synthetic_dialogues(spec)
        splits = {name: examples_from_dialogues(raw[name], schema, d.history_budget, source=f"synthetic:{name}")
                  for name in SPLITS}
        texts = corpus_texts(raw)
    return CorpusData(schema, splits, texts)


def schema_texts(schema: Schema) -> list[str]:
    out = []
    for svc in schema.services:
        for s in svc.slots:
            out.append(s.description)
            out.extend(s.possible_values)
    return out


def build_vocabulary(data: CorpusData, num_sentinels: int) -> Vocabulary:
    needed = data.schema.max_slots_per_service
    if num_sentinels < needed:
        raise ConfigError(f"num_sentinels={num_sentinels} is below the largest service's slot count {needed}")
    return Vocabulary.build(data.texts + schema_texts(data.schema), num_sentinels)


def backbone_config(cfg: RunConfig, vocab: Vocabulary) -> BackboneConfig:
    b = cfg.backbone
    return BackboneConfig(vocab_size=vocab.text_size, d_model=b.d_model, num_heads=b.num_heads,
                          encoder_layers=b.encoder_layers, decoder_layers=b.decoder_layers,
                          d_ff=b.d_ff, max_positions=b.max_positions)


def pretrain_backbone(cfg: RunConfig, data: CorpusData, vocab: Vocabulary) -> tuple[Backbone, list[float]]:
    texts = pretraining_texts(data.splits["train"], data.schema)
    return pretrain_and_freeze(texts, backbone_config(cfg, vocab), vocab, cfg.seed, cfg.pretrain)


def save_backbone(path, backbone: Backbone, vocab: Vocabulary, meta: dict | None = None) -> str:
    tensors = {k: t.data for k, t in backbone.params.items()}
    info = {"kind": "shego-backbone", "vocab": vocab.to_dict(), "config": asdict(backbone.config),
            "checksums": backbone.checksums}
    info.update(meta or {})
    return save_checkpoint(path, tensors, {k: True for k in tensors}, 0, info)


def load_backbone(path) -> tuple[Backbone, Vocabulary]:
    ck = load_checkpoint(path)
    if ck.meta.get("kind") != "shego-backbone":
        raise CompatibilityError(f"{path} is not a backbone checkpoint")
    backbone = Backbone(BackboneConfig(**ck.meta["config"]), {k: Tensor(v) for k, v in ck.tensors.items()})
    backbone.freeze()
    if backbone.checksums != ck.meta["checksums"]:
        raise CompatibilityError(f"{path}: tensors do not match their recorded checksums")
    return backbone, Vocabulary.from_dict(ck.meta["vocab"])


def check_compatibility(examples, schema: Schema, vocab: Vocabulary, model_schema: Schema | None = None) -> None:
    """Raise CompatibilityError when ``vocab`` cannot represent the data or the schemas differ."""
    if model_schema is not None and model_schema.to_json() != schema.to_json():
        raise CompatibilityError("data schema differs from the checkpoint schema")
    if schema.max_slots_per_service > vocab.num_sentinels:
        raise CompatibilityError(f"vocabulary has {vocab.num_sentinels} sentinels; schema needs "
                                 f"{schema.max_slots_per_service}")
    missing = set()
    for ex in examples:
        for tok in history_tokens(ex.history):
            if tok not in vocab:
                missing.add(tok)
        q = build_query(schema, ex.service)
        for tok in build_target(ex, q).tokens + q.tokens:
            if not tok.startswith("<M") and tok not in vocab:
                missing.add(tok)
    for text in schema_texts(schema):
        missing.update(t for t in segment(text) if t not in vocab)
    if missing:
        sample = ", ".join(sorted(missing)[:8])
        raise CompatibilityError(f"{len(missing)} token(s) missing from the checkpoint vocabulary: {sample}")


def build_model(cfg: RunConfig, schema: Schema, vocab: Vocabulary, backbone: Backbone,
                ablation=None, seed: int | None = None) -> ShegoModel:
    mcfg = apply_ablation(ablation if ablation is not None else cfg.train, cfg.model)
    return ShegoModel(schema, vocab, backbone, replace(cfg.encoder), mcfg,
                      seed=cfg.train.seed if seed is None else seed)


def resolve_backbone_path(cfg: RunConfig, override: str | None = None) -> Path:
    p = Path(override) if override else cfg.resolve(cfg.backbone.checkpoint)
    if p is None:
        raise ConfigError("no backbone checkpoint given; run `shego pretrain` and set backbone.checkpoint or pass --backbone")
    if not p.exists():
        raise ConfigError(f"backbone checkpoint {p} does not exist; run `shego pretrain` first")
    return p
