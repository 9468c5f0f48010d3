"""Per-node costs from profile files, and batch-size memory scaling."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from fractions import Fraction

from .graph import CompGraph, GraphError, NodeInfo, _number, as_fraction

UNITS = ("ms", "flop")
MAX_BYTES = 2**63 - 1


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ProfileTable:
    entries: dict
    batch_size: int = 1
    unit: str = "ms"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ProfileError("batch_size must be >= 1")
        if self.unit not in UNITS:
            raise ProfileError(f"unknown cost unit {self.unit!r}; expected one of {UNITS}")
        costs = {}
        for name, c in self.entries.items():
            c = as_fraction(c)
            if c < 0:
                raise ProfileError(f"negative cost {c} for node {name!r}")
            costs[str(name)] = c
        object.__setattr__(self, "entries", costs)

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileTable":
        meta = {k: str(v) for k, v in data.items() if k not in ("batch_size", "unit", "costs")}
        return cls(
            entries=dict(data["costs"]),
            batch_size=int(data.get("batch_size", 1)),
            unit=data.get("unit", "ms"),
            metadata=meta,
        )

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "unit": self.unit,
            "costs": {k: _number(v) for k, v in sorted(self.entries.items())},
        }


def load_profile(path) -> ProfileTable:
    with open(path) as fh:
        return ProfileTable.from_dict(json.load(fh))


def apply_profile(g: CompGraph, p: ProfileTable) -> CompGraph:
    """Copy of ``g`` with every node cost taken from the profile.

    Costs already tagged with a different unit are rejected, so a single run
    never mixes FLOPs and milliseconds.
    """
    if g.cost_unit is not None and g.cost_unit != p.unit:
        raise ProfileError(f"graph costs are in {g.cost_unit!r}, profile is in {p.unit!r}")
    missing = [v.name for v in g.nodes if v.name not in p.entries]
    if missing:
        raise ProfileError(f"profile has no entry for node(s): {', '.join(missing)}")
    nodes = [replace(v, cost=p.entries[v.name]) for v in g.nodes]
    return g.with_nodes(nodes, cost_unit=p.unit)


def scale_memory(g: CompGraph, batch: int) -> CompGraph:
    """Multiply activation sizes by the batch size. Constant overhead is unchanged."""
    if int(batch) != batch or batch < 1:
        raise GraphError(f"batch must be a positive integer, got {batch}")
    batch = int(batch)
    if batch == 1:
        return g
    nodes = []
    for v in g.nodes:
        m = v.mem * batch
        if m > MAX_BYTES:
            raise OverflowError(f"node {v.name!r}: {v.mem} bytes x batch {batch} exceeds 64-bit range")
        nodes.append(NodeInfo(v.name, v.cost, m, v.is_forward))
    return g.with_nodes(nodes)


def flop_costs(g: CompGraph, flops: dict) -> CompGraph:
    """Static FLOP counts as costs; nodes absent from ``flops`` keep their cost."""
    p = ProfileTable({v.name: Fraction(flops.get(v.name, v.cost)) for v in g.nodes}, unit="flop")
    return apply_profile(g, p)
