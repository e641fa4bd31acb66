"""Multi-domain ontology loaded from SGD-layout ``schema.json`` files."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path


class DataFormatError(ValueError):
    """Input file is missing a required field or is malformed."""


class DuplicateDefinitionError(DataFormatError):
    pass


class UnknownReferenceError(LookupError):
    """A dialogue or query names a service or slot absent from the schema."""


@dataclass(frozen=True)
class SlotDef:
    name: str
    description: str
    is_categorical: bool = False
    possible_values: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.description.strip():
            raise DataFormatError(f"slot {self.name!r} has an empty description")
        if self.is_categorical and not self.possible_values:
            raise DataFormatError(f"categorical slot {self.name!r} lists no possible values")


@dataclass(frozen=True)
class Service:
    name: str
    description: str
    slots: tuple[SlotDef, ...]


def service_domain(service: str) -> str:
    """``Flights_1`` -> ``Flights``; names without a numeric suffix map to themselves."""
    return re.sub(r"_\d+$", "", service)


@dataclass(frozen=True)
class Schema:
    """Services in file order; slot ``j`` of service ``l`` gets a contiguous global index."""

    services: tuple[Service, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for svc in self.services:
            for slot in svc.slots:
                key = (svc.name, slot.name)
                if key in seen:
                    raise DuplicateDefinitionError(f"duplicate slot definition {svc.name}/{slot.name}")
                seen.add(key)

    @cached_property
    def slot_index(self) -> dict[tuple[str, str], int]:
        index = {}
        for svc in self.services:
            for slot in svc.slots:
                index[(svc.name, slot.name)] = len(index)
        return index

    @cached_property
    def slot_keys(self) -> list[tuple[str, str]]:
        return list(self.slot_index)

    @cached_property
    def _by_name(self) -> dict[str, Service]:
        return {svc.name: svc for svc in self.services}

    @property
    def num_slots(self) -> int:
        return len(self.slot_index)

    @property
    def service_names(self) -> list[str]:
        return [svc.name for svc in self.services]

    @property
    def max_slots_per_service(self) -> int:
        return max((len(s.slots) for s in self.services), default=0)

    def service(self, name: str) -> Service:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownReferenceError(f"unknown service {name!r}") from None

    def slot_indices(self, service: str) -> list[int]:
        svc = self.service(service)
        return [self.slot_index[(svc.name, s.name)] for s in svc.slots]

    def node_services(self) -> list[str]:
        return [svc for svc, _ in self.slot_keys]

    def to_json(self) -> list[dict]:
        return [
            {
                "service_name": svc.name,
                "description": svc.description,
                "slots": [
                    {
                        "name": s.name,
                        "description": s.description,
                        "is_categorical": s.is_categorical,
                        "possible_values": list(s.possible_values),
                    }
                    for s in svc.slots
                ],
            }
            for svc in self.services
        ]

    @classmethod
    def from_json(cls, records, source: str = "<schema>") -> "Schema":
        if not isinstance(records, list):
            raise DataFormatError(f"{source}: expected a JSON array of service records")
        services = []
        names = set()
        for i, rec in enumerate(records):
            where = f"{source}: services[{i}]"
            name = _require(rec, "service_name", where)
            if name in names:
                raise DuplicateDefinitionError(f"{where}: duplicate service {name!r}")
            names.add(name)
            slots = []
            for j, s in enumerate(_require(rec, "slots", where)):
                swhere = f"{where}.slots[{j}]"
                slots.append(SlotDef(
                    name=_require(s, "name", swhere),
                    description=_require(s, "description", swhere),
                    is_categorical=bool(s.get("is_categorical", False)),
                    possible_values=tuple(s.get("possible_values") or ()),
                ))
            services.append(Service(name, rec.get("description", ""), tuple(slots)))
        return cls(tuple(services))


def _require(record, key: str, where: str):
    if not isinstance(record, dict) or key not in record:
        raise DataFormatError(f"{where}: missing field {key!r}")
    return record[key]


def load_schema(path) -> Schema:
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    return Schema.from_json(records, source=str(Path(path)))
