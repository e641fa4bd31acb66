"""Masked-slot-filling query/target construction and input assembly.

A query renders each slot of a service as ``description : <Mj>``; the target
lists ``<Mj> value`` for every slot in the same order, with ``none`` for
inactive slots. The encoder input concatenates graph prompts G, shared soft
prompts P, history tokens H and query tokens Q.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.dialogues import DialogueExample, history_tokens, truncate_history
from .data.schema import Schema
from .data.vocab import COLON, NONE_VALUE, Vocabulary, segment, sentinel
from .numerics import F, ShapeError, Tensor

PROMPTS_FIRST = ("graph", "prompt", "history", "query")
PROMPTS_LAST = ("history", "query", "graph", "prompt")
SEGMENT_ORDERS = {"gphq": PROMPTS_FIRST, "hqgp": PROMPTS_LAST}


class PromptConfigError(ValueError):
    pass


@dataclass(frozen=True)
class QuerySpec:
    service: str
    slot_indices: tuple[int, ...]
    slot_names: tuple[str, ...]
    tokens: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    @property
    def sentinels(self) -> tuple[str, ...]:
        return tuple(sentinel(j) for j in range(1, len(self.slot_names) + 1))

    def ids(self, vocab: Vocabulary) -> list[int]:
        return [_token_id(t, vocab) for t in self.tokens]


@dataclass(frozen=True)
class TargetSpec:
    tokens: tuple[str, ...]

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def ids(self, vocab: Vocabulary, eos: bool = True) -> list[int]:
        out = [_token_id(t, vocab) for t in self.tokens]
        return out + [vocab.eos_id] if eos else out


def _token_id(tok: str, vocab: Vocabulary) -> int:
    if tok.startswith("<M") and tok.endswith(">") and tok[2:-1].isdigit():
        return vocab.sentinel_id(int(tok[2:-1]))
    return vocab.id(tok)


def build_query(schema: Schema, service: str, delimiter: str = COLON) -> QuerySpec:
    svc = schema.service(service)
    tokens: list[str] = []
    for j, slot in enumerate(svc.slots, start=1):
        tokens.extend(segment(slot.description))
        tokens.append(delimiter)
        tokens.append(sentinel(j))
    return QuerySpec(service, tuple(schema.slot_indices(service)), tuple(s.name for s in svc.slots), tuple(tokens))


def build_target(example: DialogueExample, query: QuerySpec) -> TargetSpec:
    if example.service != query.service:
        raise ValueError(f"query for {query.service!r} used with an example of {example.service!r}")
    return target_from_state(example.gold_state, query)


def target_from_state(state: dict[str, str], query: QuerySpec) -> TargetSpec:
    tokens: list[str] = []
    for j, name in enumerate(query.slot_names, start=1):
        tokens.append(sentinel(j))
        value = state.get(name, NONE_VALUE)
        words = segment(value)
        tokens.extend(words if words else [NONE_VALUE])
    return TargetSpec(tuple(tokens))


@dataclass
class AssembledInput:
    embedded: Tensor
    segments: dict[str, tuple[int, int]]
    token_ids: dict[str, list[int]]

    @property
    def length(self) -> int:
        return self.embedded.shape[0]

    def segment(self, name: str) -> Tensor:
        start, stop = self.segments[name]
        return self.embedded[start:stop]


def history_budget(max_positions: int, m: int, p: int, query_len: int) -> int:
    budget = max_positions - m - p - query_len
    if budget < 0:
        raise PromptConfigError(
            f"position budget {max_positions} cannot hold {m} graph prompts, {p} shared prompts "
            f"and a {query_len}-token query")
    return budget


def history_ids(example: DialogueExample, vocab: Vocabulary, budget: int) -> list[int]:
    if budget <= 0:
        return []
    try:
        hist = truncate_history(example.history, budget)
    except ValueError:
        return []
    return vocab.encode(history_tokens(hist))


def assemble_input(example: DialogueExample, query: QuerySpec, graph_prompts, shared_prompts,
                   embeddings: Tensor, vocab: Vocabulary, max_positions: int = 512,
                   order: tuple[str, ...] = PROMPTS_FIRST) -> AssembledInput:
    """Concatenate the four input segments in ``order``; only the history is truncated."""
    g = F.as_tensor(graph_prompts)
    p = F.as_tensor(shared_prompts)
    width = embeddings.shape[1]
    for name, t in (("graph", g), ("prompt", p)):
        if t.ndim != 2 or (t.shape[0] and t.shape[1] != width):
            raise ShapeError(f"assemble_input: {name} prompts {t.shape} do not match embedding width {width}")
    q_ids = query.ids(vocab)
    budget = history_budget(max_positions, g.shape[0], p.shape[0], len(q_ids))
    ids = {"history": history_ids(example, vocab, budget), "query": q_ids}
    pieces = {
        "graph": g.reshape((g.shape[0], width)),
        "prompt": p.reshape((p.shape[0], width)),
        "history": F.embedding(embeddings, ids["history"]).reshape((len(ids["history"]), width)),
        "query": F.embedding(embeddings, q_ids).reshape((len(q_ids), width)),
    }
    segments = {}
    start = 0
    for name in order:
        n = pieces[name].shape[0]
        segments[name] = (start, start + n)
        start += n
    return AssembledInput(F.concat([pieces[n] for n in order], axis=0), segments, ids)


@dataclass
class PromptBank:
    """Trainable prompt-side embeddings: slot tokens, shared prompts, token table."""

    slot_embeddings: Tensor
    shared: Tensor
    token_embeddings: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {"slot_embeddings": self.slot_embeddings, "shared": self.shared,
                "token_embeddings": self.token_embeddings}


def init_prompt_banks(vocab: Vocabulary, schema: Schema, p: int, seed: int,
                      base_embeddings: np.ndarray, width: int | None = None,
                      slot_std: float = 0.02) -> PromptBank:
    """Slot rows ~ N(0, slot_std); shared row i copies base-vocabulary embedding row i."""
    base_embeddings = np.asarray(base_embeddings)
    width = width or base_embeddings.shape[1]
    if p < 0:
        raise PromptConfigError("number of shared prompts must be >= 0")
    if p > len(vocab.base_range):
        raise PromptConfigError(f"{p} shared prompts exceed the base vocabulary size {len(vocab.base_range)}")
    dtype = base_embeddings.dtype
    rng = np.random.default_rng(seed)
    slots = rng.normal(0.0, slot_std, (schema.num_slots, width)).astype(dtype)
    shared = base_embeddings[:p].copy()
    return PromptBank(
        Tensor(slots, requires_grad=True, name="bank.slot_embeddings"),
        Tensor(shared.reshape(p, width), requires_grad=True, name="bank.shared"),
        Tensor(base_embeddings.copy(), requires_grad=True, name="bank.token_embeddings"),
    )


def dump_rendered(path, examples, schema: Schema) -> None:
    """JSON lines with the rendered query/target of each example."""
    with open(Path(path), "w", encoding="utf-8") as fh:
        for ex in examples:
            q = build_query(schema, ex.service)
            rec = {"dialogue_id": ex.dialogue_id, "turn_index": ex.turn_index, "service": ex.service,
                   "query": q.text, "target": build_target(ex, q).text}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
