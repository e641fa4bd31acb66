"""Templated multi-service dialogues for desk-scale experiments.

Each generated dialogue talks to one service. The user reveals 0-2 new slot
values per turn, either with an explicit phrase ("the destination city is
lax") or as a bare answer to the system's preceding question. Gold states are
cumulative. Output uses the SGD dialogue layout so the regular loader builds
the examples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dialogues import DEFAULT_HISTORY_BUDGET, DialogueExample, examples_from_dialogues
from .schema import Schema, Service, SlotDef


class CorpusSpecError(ValueError):
    pass


# {d} = slot description, {v} = value
EXPLICIT_TEMPLATES = (
    "i want the {d} to be {v}",
    "the {d} is {v}",
    "set {d} to {v}",
    "{v} for the {d} please",
)
ANSWER_TEMPLATES = (
    "{v}",
    "{v} please",
    "make it {v}",
)
ASK_TEMPLATE = "what {d} do you want ?"
OPENING = "hello , how can i help you ?"
FILLERS = ("i am not sure yet", "let me think about it", "hmm , give me a moment")
JOINER = " and "


@dataclass
class SlotSpec:
    name: str
    description: str
    values: list[str]


@dataclass
class ServiceSpec:
    name: str
    description: str
    slots: list[SlotSpec]


@dataclass
class CorpusSpec:
    services: list[ServiceSpec]
    dialogues: int = 50
    min_turns: int = 2
    max_turns: int = 4
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    @property
    def num_slots(self) -> int:
        return sum(len(s.slots) for s in self.services)


_CITIES = ["lax", "new york", "seattle", "chicago", "boston", "denver", "miami", "austin"]
_DATES = ["next wednesday", "today", "tomorrow", "march 3rd", "friday", "the 12th"]

DEFAULT_SERVICES = [
    ServiceSpec("Flights_1", "find and book flights", [
        SlotSpec("OriginCity", "origin city", _CITIES),
        SlotSpec("DestinationCity", "destination city", _CITIES),
        SlotSpec("DepartureDate", "date of departure", _DATES),
    ]),
    ServiceSpec("Hotels_1", "reserve hotel rooms", [
        SlotSpec("Location", "hotel city", _CITIES),
        SlotSpec("CheckInDate", "check in date", _DATES),
        SlotSpec("NumberOfRooms", "number of rooms", ["1", "2", "3", "4"]),
    ]),
    ServiceSpec("Restaurants_1", "reserve a table at a restaurant", [
        SlotSpec("City", "restaurant city", _CITIES),
        SlotSpec("Cuisine", "type of cuisine", ["italian", "mexican", "thai", "indian", "sushi"]),
        SlotSpec("PartySize", "party size", ["2", "4", "6", "8"]),
        SlotSpec("Time", "reservation time", ["6 pm", "7:30 pm", "noon", "8 pm"]),
    ]),
]


def default_corpus_spec(dialogues: int = 50, seed: int = 0) -> CorpusSpec:
    """Three services with {3, 3, 4} slots (m = 10)."""
    return CorpusSpec(services=DEFAULT_SERVICES, dialogues=dialogues, seed=seed)


def load_corpus_spec(path) -> CorpusSpec:
    """Read a YAML corpus spec. Slot values come inline or from a lexicon file (one per line)."""
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return corpus_spec_from_dict(raw, base_dir=path.parent)


def corpus_spec_from_dict(raw: dict, base_dir=".") -> CorpusSpec:
    if "services" not in raw:
        return default_corpus_spec(raw.get("dialogues", 50), raw.get("seed", 0))
    services = []
    for s in raw["services"]:
        slots = []
        for sl in s.get("slots", []):
            if "lexicon" in sl:
                values = [v.strip() for v in (Path(base_dir) / sl["lexicon"]).read_text().splitlines() if v.strip()]
            else:
                values = list(sl.get("values", []))
            slots.append(SlotSpec(sl["name"], sl.get("description", sl["name"]), values))
        services.append(ServiceSpec(s["name"], s.get("description", s["name"]), slots))
    return CorpusSpec(
        services=services,
        dialogues=int(raw.get("dialogues", 50)),
        min_turns=int(raw.get("min_turns", 2)),
        max_turns=int(raw.get("max_turns", 4)),
        split=tuple(raw.get("split", (0.8, 0.1, 0.1))),
        seed=int(raw.get("seed", 0)),
    )


def _validate(spec: CorpusSpec) -> None:
    if not spec.services:
        raise CorpusSpecError("corpus spec lists no services")
    for svc in spec.services:
        if not svc.slots:
            raise CorpusSpecError(f"service {svc.name!r} has zero slots")
        for sl in svc.slots:
            if not sl.values:
                raise CorpusSpecError(f"slot {svc.name}/{sl.name} has an empty value lexicon")
    if not 1 <= spec.min_turns <= spec.max_turns:
        raise CorpusSpecError("need 1 <= min_turns <= max_turns")


def spec_schema(spec: CorpusSpec) -> Schema:
    return Schema(tuple(
        Service(svc.name, svc.description,
                tuple(SlotDef(sl.name, sl.description) for sl in svc.slots))
        for svc in spec.services
    ))


def _generate_dialogue(rng: np.random.Generator, svc: ServiceSpec, dialogue_id: str,
                       min_turns: int, max_turns: int) -> dict:
    n_turns = int(rng.integers(min_turns, max_turns + 1))
    # how many values each user turn reveals (0, 1 or 2), capped by slot count
    order = [int(i) for i in rng.permutation(len(svc.slots))]
    reveal = []
    left = len(order)
    for _ in range(n_turns):
        k = int(rng.integers(0, 3))
        k = min(k, left)
        reveal.append(k)
        left -= k
    turns = []
    state: dict[str, str] = {}
    asked: int | None = None
    cursor = 0
    for t in range(n_turns):
        if t == 0:
            sys_utt = OPENING
            asked = None
        elif cursor < len(order) and rng.random() < 0.5:
            asked = order[cursor]
            sys_utt = ASK_TEMPLATE.format(d=svc.slots[asked].description)
        else:
            asked = None
            sys_utt = "anything else ?"
        turns.append({"speaker": "SYSTEM", "utterance": sys_utt, "frames": []})
        new = order[cursor:cursor + reveal[t]]
        cursor += reveal[t]
        phrases = []
        for j in new:
            sl = svc.slots[j]
            value = sl.values[int(rng.integers(len(sl.values)))]
            if j == asked:
                tpl = ANSWER_TEMPLATES[int(rng.integers(len(ANSWER_TEMPLATES)))]
            else:
                tpl = EXPLICIT_TEMPLATES[int(rng.integers(len(EXPLICIT_TEMPLATES)))]
            phrases.append(tpl.format(d=sl.description, v=value))
            state[sl.name] = value
        if not phrases:
            phrases.append(FILLERS[int(rng.integers(len(FILLERS)))])
        turns.append({
            "speaker": "USER",
            "utterance": JOINER.join(phrases),
            "frames": [{"service": svc.name,
                        "state": {"slot_values": {k: [v] for k, v in state.items()}}}],
        })
    return {"dialogue_id": dialogue_id, "services": [svc.name], "turns": turns}


@dataclass
class SyntheticCorpus:
    schema: Schema
    dialogues: dict[str, list[dict]]
    train: list[DialogueExample] = field(default_factory=list)
    dev: list[DialogueExample] = field(default_factory=list)
    test: list[DialogueExample] = field(default_factory=list)

    def split(self, name: str) -> list[DialogueExample]:
        return {"train": self.train, "dev": self.dev, "test": self.test}[name]


def generate_synthetic_dialogues(spec: CorpusSpec, seed: int | None = None) -> tuple[Schema, dict[str, list[dict]]]:
    _validate(spec)
    seed = spec.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    dialogues = []
    for i in range(spec.dialogues):
        svc = spec.services[int(rng.integers(len(spec.services)))]
        dialogues.append(_generate_dialogue(rng, svc, f"syn_{i:05d}", spec.min_turns, spec.max_turns))
    n = len(dialogues)
    n_train = int(round(spec.split[0] * n))
    n_dev = int(round(spec.split[1] * n))
    splits = {
        "train": dialogues[:n_train],
        "dev": dialogues[n_train:n_train + n_dev],
        "test": dialogues[n_train + n_dev:],
    }
    return spec_schema(spec), splits


def generate_synthetic_corpus(spec: CorpusSpec, seed: int | None = None,
                              history_budget: int = DEFAULT_HISTORY_BUDGET) -> SyntheticCorpus:
    schema, splits = generate_synthetic_dialogues(spec, seed)
    corpus = SyntheticCorpus(schema, splits)
    for name, dialogues in splits.items():
        setattr(corpus, name, examples_from_dialogues(dialogues, schema, history_budget, source=f"synthetic:{name}"))
    return corpus


def write_sgd_corpus(out_dir, schema: Schema, splits: dict[str, list[dict]]) -> dict[str, Path]:
    """Dump a schema plus split dialogues as SGD-layout JSON; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"schema": out / "schema.json"}
    paths["schema"].write_text(json.dumps(schema.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for name, dialogues in splits.items():
        p = out / f"dialogues_{name}.json"
        p.write_text(json.dumps(dialogues, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        paths[name] = p
    return paths


def corpus_texts(splits: dict[str, list[dict]]) -> list[str]:
    return [turn["utterance"] for dialogues in splits.values() for d in dialogues for turn in d["turns"]]


__all__ = [
    "ANSWER_TEMPLATES",
    "ASK_TEMPLATE",
    "CorpusSpec",
    "CorpusSpecError",
    "EXPLICIT_TEMPLATES",
    "FILLERS",
    "JOINER",
    "OPENING",
    "ServiceSpec",
    "SlotSpec",
    "SyntheticCorpus",
    "corpus_spec_from_dict",
    "corpus_texts",
    "default_corpus_spec",
    "generate_synthetic_corpus",
    "generate_synthetic_dialogues",
    "load_corpus_spec",
    "spec_schema",
    "write_sgd_corpus",
]
