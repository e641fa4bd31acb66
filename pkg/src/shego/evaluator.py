"""Decoded-output parsing and DST metrics (JGA, AGA, per-domain and averaged JGA)."""

from __future__ import annotations

import csv
import io
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .data.schema import UnknownReferenceError, service_domain
from .data.vocab import NONE_VALUE, normalize_text
from .prompts import QuerySpec

_SENTINEL_RE = re.compile(r"^<M(\d+)>$")
EOS_TOKEN = "<eos>"
IGNORED_TOKENS = {"<pad>"}


def parse_decoded(tokens: Sequence[str], query: QuerySpec) -> dict[str, str]:
    """Split a decoded token sequence at sentinels into a slot -> value map.

    Text after ``<Mj>`` up to the next sentinel (or EOS) is slot j's value.
    Missing, empty or unknown sentinels leave the slot at ``none``; when a
    sentinel repeats, its first occurrence wins.
    """
    if isinstance(tokens, str):
        tokens = tokens.split()
    names = query.slot_names
    found: dict[int, list[str]] = {}
    current: int | None = None
    for tok in tokens:
        if tok == EOS_TOKEN:
            break
        if tok in IGNORED_TOKENS:
            continue
        m = _SENTINEL_RE.match(tok)
        if m:
            j = int(m.group(1))
            if 1 <= j <= len(names) and j not in found:
                found[j] = []
                current = j
            else:
                current = None
            continue
        if current is not None:
            found[current].append(tok)
    state = {}
    for j, name in enumerate(names, start=1):
        words = found.get(j)
        state[name] = " ".join(words) if words else NONE_VALUE
    return state


def normalize_value(value: str) -> str:
    """Lowercase and collapse whitespace (punctuation is split off as its own token)."""
    out = normalize_text(value)
    return out if out else NONE_VALUE


@dataclass
class TurnPrediction:
    dialogue_id: str
    turn_index: int
    service: str
    predicted: dict[str, str]
    gold: dict[str, str]

    def __post_init__(self):
        slots = set(self.gold) | set(self.predicted)
        self.predicted = {s: self.predicted.get(s, NONE_VALUE) for s in sorted(slots)}
        self.gold = {s: self.gold.get(s, NONE_VALUE) for s in sorted(slots)}

    def slot_correct(self, slot: str) -> bool:
        return normalize_value(self.predicted[slot]) == normalize_value(self.gold[slot])

    def joint_correct(self) -> bool:
        return all(self.slot_correct(s) for s in self.gold)

    def active_slots(self) -> list[str]:
        return [s for s, v in self.gold.items() if normalize_value(v) != NONE_VALUE]


class UndefinedMetricError(ValueError):
    pass


def joint_goal_accuracy(preds: Sequence[TurnPrediction]) -> float:
    if not preds:
        raise ValueError("joint_goal_accuracy of an empty prediction set")
    return sum(p.joint_correct() for p in preds) / len(preds)


def average_goal_accuracy(preds: Sequence[TurnPrediction]) -> float:
    total = correct = 0
    for p in preds:
        for s in p.active_slots():
            total += 1
            correct += p.slot_correct(s)
    if total == 0:
        raise UndefinedMetricError("average goal accuracy needs at least one active gold slot")
    return correct / total


@dataclass
class DomainMetrics:
    jga: float
    aga: float | None
    count: int


@dataclass
class MetricsReport:
    domains: dict[str, DomainMetrics]
    overall_jga: float
    overall_aga: float | None
    avg_jga: float
    slot_accuracy: dict[str, float] = field(default_factory=dict)

    CSV_COLUMNS = ("domain", "count", "jga", "aga")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for name in sorted(self.domains):
            d = self.domains[name]
            w.writerow([name, d.count, f"{d.jga:.6f}", "" if d.aga is None else f"{d.aga:.6f}"])
        n = sum(d.count for d in self.domains.values())
        w.writerow(["__overall__", n, f"{self.overall_jga:.6f}",
                    "" if self.overall_aga is None else f"{self.overall_aga:.6f}"])
        w.writerow(["__avg_jga__", n, f"{self.avg_jga:.6f}", ""])
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'domain':<16}{'n':>6}{'JGA':>9}{'AGA':>9}"]
        for name in sorted(self.domains):
            d = self.domains[name]
            aga = "-" if d.aga is None else f"{d.aga:.3f}"
            lines.append(f"{name:<16}{d.count:>6}{d.jga:>9.3f}{aga:>9}")
        aga = "-" if self.overall_aga is None else f"{self.overall_aga:.3f}"
        lines.append(f"{'overall':<16}{sum(d.count for d in self.domains.values()):>6}{self.overall_jga:>9.3f}{aga:>9}")
        lines.append(f"{'Avg. JGA':<16}{'':>6}{self.avg_jga:>9.3f}")
        return "\n".join(lines)


def _aga_or_none(preds) -> float | None:
    try:
        return average_goal_accuracy(preds)
    except UndefinedMetricError:
        return None


def report(preds: Sequence[TurnPrediction],
           domain_map: Mapping[str, str] | Callable[[str], str] | None = None) -> MetricsReport:
    """Per-domain JGA/AGA, pooled JGA, and the unweighted mean of per-domain JGA."""
    if not preds:
        raise ValueError("report of an empty prediction set")
    if domain_map is None:
        domain_of = service_domain
    elif callable(domain_map):
        domain_of = domain_map
    else:
        def domain_of(service):
            try:
                return domain_map[service]
            except KeyError:
                raise UnknownReferenceError(f"service {service!r} has no domain mapping") from None
    groups: dict[str, list[TurnPrediction]] = defaultdict(list)
    for p in preds:
        groups[domain_of(p.service)].append(p)
    domains = {d: DomainMetrics(joint_goal_accuracy(ps), _aga_or_none(ps), len(ps)) for d, ps in groups.items()}
    slot_hits: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for p in preds:
        for s in p.gold:
            key = f"{p.service}/{s}"
            slot_hits[key][0] += p.slot_correct(s)
            slot_hits[key][1] += 1
    return MetricsReport(
        domains=domains,
        overall_jga=joint_goal_accuracy(preds),
        overall_aga=_aga_or_none(preds),
        avg_jga=sum(d.jga for d in domains.values()) / len(domains),
        slot_accuracy={k: c / n for k, (c, n) in sorted(slot_hits.items())},
    )


def predictions_from_decoded(examples: Iterable, decoded: Iterable[Sequence[str]],
                             queries: Mapping[str, QuerySpec]) -> list[TurnPrediction]:
    out = []
    for ex, toks in zip(examples, decoded):
        out.append(TurnPrediction(ex.dialogue_id, ex.turn_index, ex.service,
                                  parse_decoded(toks, queries[ex.service]), dict(ex.gold_state)))
    return out
