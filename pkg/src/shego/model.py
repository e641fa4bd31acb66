"""Schema-graph prompted DST model: frozen backbone + graph encoder + prompt bank."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .backbone import Backbone, BackboneConfig, pad_batch
from .data.dialogues import DialogueExample, history_tokens
from .data.schema import Schema
from .data.vocab import Vocabulary
from .encoder import GraphEncoder, GraphEncoderConfig, init_graph_encoder
from .evaluator import TurnPrediction, parse_decoded
from .graph import active_vector, build_graph
from .numerics import F, ParamGroup, Tensor, load_checkpoint, save_checkpoint
from .prompts import (
    SEGMENT_ORDERS,
    PromptBank,
    assemble_input,
    build_query,
    build_target,
    history_budget,
    history_ids,
    init_prompt_banks,
)

INFERENCE_MASKS = ("all", "previous", "gold")


@dataclass
class ModelConfig:
    num_prompts: int = 100
    segment_order: str = "gphq"
    use_gnn: bool = True
    use_graph_prompts: bool = True
    use_active_mask: bool = True
    inference_mask: str = "all"
    link_same_domain: bool = False
    max_decode: int = 100
    slot_init_std: float = 0.02
    shared_graph_token: str | None = None
    mask_dropout: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.mask_dropout <= 1.0:
            raise ValueError("mask_dropout must lie in [0, 1]")
        if self.segment_order not in SEGMENT_ORDERS:
            raise ValueError(f"segment_order must be one of {sorted(SEGMENT_ORDERS)}")
        if self.inference_mask not in INFERENCE_MASKS:
            raise ValueError(f"inference_mask must be one of {INFERENCE_MASKS}")


class ShegoModel:
    def __init__(self, schema: Schema, vocab: Vocabulary, backbone: Backbone,
                 encoder_config: GraphEncoderConfig | None = None,
                 config: ModelConfig | None = None, seed: int = 0):
        if not backbone.frozen:
            raise ValueError("the backbone must be frozen before building the prompt model")
        self.schema = schema
        self.vocab = vocab
        self.backbone = backbone
        self.config = config or ModelConfig()
        d = backbone.config.d_model
        enc_cfg = encoder_config or GraphEncoderConfig()
        enc_cfg.input_dim = d
        enc_cfg.output_dim = d
        self.encoder_config = enc_cfg
        self.graph = build_graph(schema, self.config.link_same_domain)
        self.bank = init_prompt_banks(vocab, schema, self.config.num_prompts, seed,
                                      backbone.params["embed"].data, slot_std=self.config.slot_init_std)
        rng = np.random.default_rng(seed + 7919)
        self.graph_params = init_graph_encoder(enc_cfg, rng, backbone.params["embed"].dtype)
        self.encoder = GraphEncoder(enc_cfg, self.graph, self.graph_params)
        self.queries = {svc: build_query(schema, svc) for svc in schema.service_names}
        self._mask_rng = np.random.default_rng(seed + 104729)
        tok = self.config.shared_graph_token
        self.shared_graph_token_id = vocab.id(tok) if tok else vocab.base_range.start + len(_specials())

    # -- parameters ------------------------------------------------------------
    def param_groups(self, graph_lr=0.01, graph_wd=5e-4, prompt_lr=0.5, prompt_wd=0.0) -> list[ParamGroup]:
        groups = []
        if self.config.use_gnn:
            groups.append(ParamGroup("graph", self.graph_params, lr=graph_lr, weight_decay=graph_wd))
        groups.append(ParamGroup("prompt", self.bank.tensors(), lr=prompt_lr, weight_decay=prompt_wd))
        groups.append(ParamGroup("backbone", self.backbone.params, frozen=True))
        return groups

    def trainable(self) -> dict[str, Tensor]:
        out = {f"bank.{k}": v for k, v in self.bank.tensors().items()}
        if self.config.use_gnn:
            out.update({f"graph.{k}": v for k, v in self.graph_params.items()})
        return out

    # -- forward pieces --------------------------------------------------------
    def active_masks(self, examples: Sequence[DialogueExample], training: bool,
                     previous: Sequence[frozenset] | None = None) -> np.ndarray | None:
        """(B, m) bool masks, or None for "no masking".

        In training each row is the gold active set, except that with
        probability ``mask_dropout`` it is replaced by the all-ones mask used
        at inference, so the unmasked condition is not out of distribution.
        """
        m = self.schema.num_slots
        if not self.config.use_active_mask:
            return None
        if training or self.config.inference_mask == "gold":
            masks = np.stack([active_vector(ex.active_slots, m) for ex in examples])
            if training and self.config.mask_dropout > 0:
                drop = self._mask_rng.random(len(examples)) < self.config.mask_dropout
                masks[drop] = True
            return masks
        if self.config.inference_mask == "previous" and previous is not None:
            return np.stack([active_vector(a, m) for a in previous])
        return None

    def node_inputs(self) -> Tensor:
        """(m, d) per-slot inputs to the graph stage: slot embeddings, or one shared token's embedding."""
        if self.config.use_graph_prompts:
            return self.bank.slot_embeddings
        row = F.embedding(self.bank.token_embeddings, [self.shared_graph_token_id])
        return F.broadcast_to(row, (self.schema.num_slots, self.backbone.config.d_model))

    def graph_prompts(self, batch_size: int, active: np.ndarray | None) -> Tensor:
        """(B, m, d) graph prompts."""
        m, d = self.schema.num_slots, self.backbone.config.d_model
        if m == 0:
            return Tensor(np.zeros((batch_size, 0, d), dtype=self.bank.shared.dtype))
        nodes = self.node_inputs()
        if not self.config.use_gnn:
            g = F.reshape(nodes, (1, m, d))
            if active is not None:
                g = g * active[:, :, None].astype(g.dtype)
            return g if g.shape[0] == batch_size else F.broadcast_to(g, (batch_size, m, d))
        if active is None:
            g = self.encoder.encode(F.reshape(nodes, (1, m, d))).prompts
            return F.broadcast_to(g, (batch_size, m, d))
        b = active.shape[0]
        return self.encoder.encode(F.broadcast_to(F.reshape(nodes, (1, m, d)), (b, m, d)), active).prompts

    def encoder_inputs(self, examples: Sequence[DialogueExample], active: np.ndarray | None):
        """Embedded encoder input (B, L, d) and key mask (B, L)."""
        b = len(examples)
        d = self.backbone.config.d_model
        g = self.graph_prompts(b, active)
        m, p = g.shape[1], self.config.num_prompts
        order = SEGMENT_ORDERS[self.config.segment_order]
        table = self.bank.token_embeddings
        max_pos = self.backbone.config.max_positions
        if order[:2] == ("graph", "prompt"):
            tok_seqs = []
            for ex in examples:
                q_ids = self.queries[ex.service].ids(self.vocab)
                budget = history_budget(max_pos, m, p, len(q_ids))
                tok_seqs.append(history_ids(ex, self.vocab, budget) + q_ids)
            ids, tok_mask = pad_batch(tok_seqs, self.vocab.pad_id)
            shared = F.broadcast_to(F.reshape(self.bank.shared, (1, p, d)), (b, p, d))
            x = F.concat([g, shared, F.embedding(table, ids)], axis=1)
            mask = np.concatenate([np.ones((b, m + p), dtype=bool), tok_mask], axis=1)
            return x, mask
        rows = [assemble_input(ex, self.queries[ex.service], g[i], self.bank.shared, table, self.vocab,
                               max_pos, order).embedded for i, ex in enumerate(examples)]
        width = max(r.shape[0] for r in rows)
        mask = np.zeros((b, width), dtype=bool)
        padded = []
        for i, r in enumerate(rows):
            mask[i, :r.shape[0]] = True
            extra = width - r.shape[0]
            padded.append(F.concat([r, np.zeros((extra, d), dtype=r.dtype)], axis=0) if extra else r)
        return F.stack(padded, axis=0), mask

    def target_ids(self, examples: Sequence[DialogueExample]) -> tuple[np.ndarray, np.ndarray]:
        seqs = [build_target(ex, self.queries[ex.service]).ids(self.vocab) for ex in examples]
        return pad_batch(seqs, self.vocab.pad_id)

    def example_losses(self, examples: Sequence[DialogueExample]) -> Tensor:
        """Per-example mean token NLL of the target, shape (B,)."""
        active = self.active_masks(examples, training=True)
        x, mask = self.encoder_inputs(examples, active)
        tgt, tmask = self.target_ids(examples)
        logits = self.backbone.forward_teacher_forced(x, mask, tgt, self.vocab.pad_id, self.bank.token_embeddings)
        nll = F.cross_entropy(logits, tgt, ignore_index=self.vocab.pad_id)
        return F.tsum(nll, axis=1) * (1.0 / tmask.sum(axis=1)).astype(nll.dtype)

    def loss(self, examples: Sequence[DialogueExample]) -> Tensor:
        if not examples:
            raise ValueError("loss of an empty batch")
        return F.mean(self.example_losses(examples))

    def decode(self, examples: Sequence[DialogueExample], previous=None, max_len: int | None = None) -> list[list[str]]:
        active = self.active_masks(examples, training=False, previous=previous)
        x, mask = self.encoder_inputs(examples, active)
        ids = self.backbone.greedy_decode(x, mask, max_len or self.config.max_decode, self.vocab.eos_id,
                                          self.vocab.pad_id, self.bank.token_embeddings)
        return [[self.vocab.token(i) for i in row] for row in ids]

    def predict(self, examples: Sequence[DialogueExample], batch_size: int = 64) -> list[TurnPrediction]:
        from .numerics import no_grad

        examples = list(examples)
        preds: list[TurnPrediction | None] = [None] * len(examples)
        with no_grad():
            if self.config.use_active_mask and self.config.inference_mask == "previous":
                self._predict_with_previous(examples, preds)
            else:
                for s in range(0, len(examples), batch_size):
                    chunk = examples[s:s + batch_size]
                    for k, (ex, toks) in enumerate(zip(chunk, self.decode(chunk))):
                        preds[s + k] = self._prediction(ex, toks)
        return preds

    def _prediction(self, ex: DialogueExample, toks: list[str]) -> TurnPrediction:
        state = parse_decoded(toks, self.queries[ex.service])
        return TurnPrediction(ex.dialogue_id, ex.turn_index, ex.service, state, dict(ex.gold_state))

    def _predict_with_previous(self, examples, preds) -> None:
        """Turn-by-turn decoding; each turn is masked by the previous turn's predicted state."""
        by_turn: dict[int, list[int]] = {}
        for i, ex in enumerate(examples):
            by_turn.setdefault(ex.turn_index, []).append(i)
        last_active: dict[str, frozenset] = {}
        for t in sorted(by_turn):
            idx = by_turn[t]
            chunk = [examples[i] for i in idx]
            prev = [last_active.get(ex.dialogue_id, frozenset()) for ex in chunk]
            for i, ex, toks in zip(idx, chunk, self.decode(chunk, previous=prev)):
                preds[i] = self._prediction(ex, toks)
                index = self.schema.slot_index
                last_active[ex.dialogue_id] = frozenset(
                    index[(ex.service, s)] for s, v in preds[i].predicted.items() if v != "none")

    # -- persistence ------------------------------------------------------------
    def state_tensors(self) -> tuple[dict[str, np.ndarray], dict[str, bool]]:
        tensors, frozen = {}, {}
        for k, t in self.backbone.params.items():
            tensors[f"backbone.{k}"] = t.data
            frozen[f"backbone.{k}"] = True
        for k, t in self.bank.tensors().items():
            tensors[f"bank.{k}"] = t.data
        for k, t in self.graph_params.items():
            tensors[f"graph.{k}"] = t.data
        return tensors, frozen

    def save(self, path, step: int = 0, extra_meta: dict | None = None) -> str:
        tensors, frozen = self.state_tensors()
        meta = {
            "kind": "shego-model",
            "vocab": self.vocab.to_dict(),
            "schema": self.schema.to_json(),
            "backbone_config": asdict(self.backbone.config),
            "backbone_checksums": self.backbone.checksums,
            "encoder_config": asdict(self.encoder_config),
            "model_config": asdict(self.config),
        }
        meta.update(extra_meta or {})
        return save_checkpoint(path, tensors, frozen, step, meta)

    @classmethod
    def load(cls, path) -> "ShegoModel":
        ck = load_checkpoint(path)
        meta = ck.meta
        if meta.get("kind") != "shego-model":
            raise ValueError(f"{path} is not a trained model checkpoint")
        vocab = Vocabulary.from_dict(meta["vocab"])
        schema = Schema.from_json(meta["schema"])
        backbone = Backbone(BackboneConfig(**meta["backbone_config"]),
                            {k[len("backbone."):]: Tensor(v) for k, v in ck.tensors.items() if k.startswith("backbone.")})
        backbone.freeze()
        if backbone.checksums != meta["backbone_checksums"]:
            raise ValueError(f"{path}: backbone tensors do not match their freeze-time checksums")
        model = cls(schema, vocab, backbone, GraphEncoderConfig(**meta["encoder_config"]),
                    ModelConfig(**meta["model_config"]))
        for k, t in model.bank.tensors().items():
            t.data = ck.tensors[f"bank.{k}"].copy()
        for k, t in model.graph_params.items():
            t.data = ck.tensors[f"graph.{k}"].copy()
        return model


def _specials() -> tuple[str, ...]:
    from .data.vocab import SPECIALS

    return SPECIALS


def pretraining_texts(examples: Sequence[DialogueExample], schema: Schema) -> list[str]:
    """Longest history per dialogue plus slot descriptions, as flat strings."""
    longest: dict[str, DialogueExample] = {}
    for ex in examples:
        cur = longest.get(ex.dialogue_id)
        if cur is None or ex.turn_index > cur.turn_index:
            longest[ex.dialogue_id] = ex
    texts = [" ".join(history_tokens(ex.history)[1:]).replace("<sys>", ".").replace("<usr>", ".")
             for _, ex in sorted(longest.items())]
    texts.extend(s.description for svc in schema.services for s in svc.slots)
    return texts
