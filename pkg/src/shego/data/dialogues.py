"""Per-turn DST examples from SGD-layout dialogue files."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .schema import DataFormatError, Schema, UnknownReferenceError
from .vocab import NONE_VALUE, SYS, USR, segment

logger = logging.getLogger(__name__)

DEFAULT_HISTORY_BUDGET = 256

SYSTEM, USER = "system", "user"


@dataclass(frozen=True)
class DialogueExample:
    dialogue_id: str
    service: str
    turn_index: int
    history: tuple[tuple[str, str], ...]
    gold_state: dict[str, str]
    active_slots: frozenset[int]

    def __hash__(self):
        return hash((self.dialogue_id, self.service, self.turn_index))


def history_tokens(history: Sequence[tuple[str, str]]) -> list[str]:
    """Flat token view of a history: a speaker tag before each utterance."""
    out: list[str] = []
    for speaker, utt in history:
        out.append(SYS if speaker == SYSTEM else USR)
        out.extend(segment(utt))
    return out


def truncate_history(history: Sequence[tuple[str, str]], budget: int) -> tuple[tuple[str, str], ...]:
    """Keep the newest (system, user) pairs whose tokens fit in ``budget``.

    If even the final pair is too long, words are dropped from its front.
    """
    pairs = [tuple(history[i:i + 2]) for i in range(0, len(history), 2)]
    kept: list[tuple] = []
    used = 0
    for pair in reversed(pairs):
        cost = len(history_tokens(pair))
        if kept and used + cost > budget:
            break
        kept.append(pair)
        used += cost
    kept.reverse()
    flat = [turn for pair in kept for turn in pair]
    if used > budget:
        flat = _clip_front(flat, budget)
    return tuple(flat)


def _clip_front(turns: list[tuple[str, str]], budget: int) -> list[tuple[str, str]]:
    excess = len(history_tokens(turns)) - budget
    out = []
    for speaker, utt in turns:
        words = segment(utt)
        # the speaker tag always stays so the history keeps its alternation
        drop = min(excess, len(words))
        excess -= drop
        out.append((speaker, " ".join(words[drop:])))
    if excess > 0:
        raise ValueError(f"history budget {budget} cannot hold the speaker tags of the last turn pair")
    return out


def _user_states(turns, service: str, where: str):
    """Yield (history_so_far, slot_values) at each user turn."""
    history: list[tuple[str, str]] = []
    for k, turn in enumerate(turns):
        try:
            speaker = turn["speaker"].lower()
            utt = turn["utterance"]
        except (KeyError, TypeError, AttributeError):
            raise DataFormatError(f"{where}: turns[{k}] lacks speaker/utterance") from None
        if speaker not in (SYSTEM, USER):
            raise DataFormatError(f"{where}: turns[{k}] has unknown speaker {turn['speaker']!r}")
        if speaker == USER:
            if not history or history[-1][0] == USER:
                history.append((SYSTEM, ""))
            history.append((USER, utt))
            values = {}
            for frame in turn.get("frames", []):
                if frame.get("service") != service:
                    continue
                for slot, vals in frame.get("state", {}).get("slot_values", {}).items():
                    if isinstance(vals, str):
                        vals = [vals]
                    if vals:
                        values[slot] = vals[0]
            yield list(history), values
        else:
            if history and history[-1][0] == SYSTEM:
                # consecutive system turns are merged into one utterance
                history[-1] = (SYSTEM, (history[-1][1] + " " + utt).strip())
            else:
                history.append((SYSTEM, utt))


def examples_from_dialogues(dialogues: Iterable[dict], schema: Schema,
                            history_budget: int = DEFAULT_HISTORY_BUDGET,
                            source: str = "<dialogues>") -> list[DialogueExample]:
    examples: list[DialogueExample] = []
    skipped = 0
    for d_i, dialogue in enumerate(dialogues):
        where = f"{source}: dialogues[{d_i}]"
        if not isinstance(dialogue, dict) or "dialogue_id" not in dialogue or "turns" not in dialogue:
            raise DataFormatError(f"{where}: missing dialogue_id or turns")
        services = dialogue.get("services") or []
        if len(services) != 1:
            skipped += 1
            continue
        service = services[0]
        slot_names = [s.name for s in schema.service(service).slots]
        slot_set = set(slot_names)
        index = schema.slot_index
        turn_no = 0
        for history, values in _user_states(dialogue["turns"], service, where):
            unknown = set(values) - slot_set
            if unknown:
                raise UnknownReferenceError(f"{where}: service {service!r} has no slot(s) {sorted(unknown)}")
            state = {s: values.get(s, NONE_VALUE) for s in slot_names}
            active = frozenset(index[(service, s)] for s in slot_names if state[s] != NONE_VALUE)
            examples.append(DialogueExample(
                dialogue_id=str(dialogue["dialogue_id"]),
                service=service,
                turn_index=turn_no,
                history=truncate_history(history, history_budget),
                gold_state=state,
                active_slots=active,
            ))
            turn_no += 1
    if skipped:
        logger.warning("%s: skipped %d multi-service dialogue(s)", source, skipped)
    return examples


def load_dialogues(path, schema: Schema, history_budget: int = DEFAULT_HISTORY_BUDGET) -> list[DialogueExample]:
    """One example per user turn from an SGD ``dialogues_*.json`` file (or a directory of them)."""
    path = Path(path)
    files = sorted(path.glob("dialogues_*.json")) if path.is_dir() else [path]
    examples = []
    for f in files:
        with open(f, encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, list):
            raise DataFormatError(f"{f}: expected a JSON array of dialogues")
        examples.extend(examples_from_dialogues(data, schema, history_budget, source=str(f)))
    return examples
