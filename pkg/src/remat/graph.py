"""Computation graphs: data model, JSON I/O, ordering and synthetic generators.

Nodes are stored in topological order and addressed by their 0-based
position. Every edge ``(i, j)`` satisfies ``i < j``.
"""
from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence


class GraphError(ValueError):
    """Raised for malformed or inconsistent graphs."""


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        # decimal reading of the float, not its binary expansion
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class NodeInfo:
    name: str
    cost: Fraction
    mem: int
    is_forward: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cost", as_fraction(self.cost))
        if self.cost < 0:
            raise GraphError(f"node {self.name!r}: negative cost {self.cost}")
        if int(self.mem) != self.mem or self.mem < 0:
            raise GraphError(f"node {self.name!r}: memory must be a nonnegative integer, got {self.mem}")
        object.__setattr__(self, "mem", int(self.mem))


@dataclass(frozen=True)
class CompGraph:
    """Immutable data-flow DAG with per-node cost and memory.

    Parameters
    ----------
    nodes : tuple of NodeInfo
        Nodes in topological order.
    edges : tuple of (int, int)
        Dependency edges ``(i, j)``, meaning node ``j`` consumes the output of ``i``.
    forward_count : int
        Number of leading nodes that belong to the forward pass.
    constant_overhead : int
        Bytes that are always resident (inputs, parameters, parameter gradients).
    cost_unit : str, optional
        Unit tag of the node costs once a profile has been applied.
    """

    nodes: tuple
    edges: tuple
    forward_count: int
    constant_overhead: int = 0
    cost_unit: str | None = field(default=None, compare=True)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        edges = tuple(sorted({(int(i), int(j)) for i, j in self.edges}))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        n = len(nodes)
        if n == 0:
            raise GraphError("graph has no nodes")
        names = [v.name for v in nodes]
        if len(set(names)) != n:
            dup = sorted({x for x in names if names.count(x) > 1})
            raise GraphError(f"duplicate node names: {dup}")
        for i, j in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise GraphError(f"edge ({i}, {j}) references an unknown node")
            if i >= j:
                raise GraphError(f"edge ({names[i]} -> {names[j]}) violates topological order")
        if not 0 <= self.forward_count <= n:
            raise GraphError("forward_count out of range")
        for idx, v in enumerate(nodes):
            if v.is_forward != (idx < self.forward_count):
                raise GraphError("forward nodes must form a prefix of the topological order")
        if self.constant_overhead < 0:
            raise GraphError("constant_overhead must be nonnegative")
        sinks = [i for i in range(n) if not self.users[i]]
        if sinks != [n - 1]:
            raise GraphError(
                f"graph must have exactly one terminal node (the last); found sinks {[names[s] for s in sinks]}"
            )

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def deps(self) -> tuple:
        out = [[] for _ in self.nodes]
        for i, j in self.edges:
            out[j].append(i)
        return tuple(tuple(x) for x in out)

    @cached_property
    def users(self) -> tuple:
        out = [[] for _ in self.nodes]
        for i, j in self.edges:
            out[i].append(j)
        return tuple(tuple(x) for x in out)

    @cached_property
    def edge_index(self) -> dict:
        return {e: k for k, e in enumerate(self.edges)}

    @cached_property
    def name_index(self) -> dict:
        return {v.name: k for k, v in enumerate(self.nodes)}

    @property
    def costs(self) -> list:
        return [v.cost for v in self.nodes]

    @property
    def mems(self) -> list:
        return [v.mem for v in self.nodes]

    @property
    def terminal(self) -> int:
        return self.n - 1

    def forward_edges(self) -> list:
        fc = self.forward_count
        return [(i, j) for i, j in self.edges if j < fc]

    def with_nodes(self, nodes: Sequence[NodeInfo], **kw) -> "CompGraph":
        return replace(self, nodes=tuple(nodes), **kw)

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "nodes": [
                {"name": v.name, "cost": _number(v.cost), "mem": v.mem, "forward": v.is_forward}
                for v in self.nodes
            ],
            "edges": [[self.nodes[i].name, self.nodes[j].name] for i, j in self.edges],
            "constant_overhead_bytes": self.constant_overhead,
        }
        if self.cost_unit is not None:
            out["cost_unit"] = self.cost_unit
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"


def _number(x: Fraction):
    if x.denominator == 1:
        return int(x)
    f = float(x)
    if Fraction(repr(f)) == x:
        return f
    return str(x)


def _parse_cost(x) -> Fraction:
    if isinstance(x, bool):
        raise GraphError(f"invalid cost {x!r}")
    if isinstance(x, str):
        return Fraction(x)
    return as_fraction(x)


def topological_order(names: Sequence[str], edges: Iterable[tuple], priority: Sequence = None) -> list:
    """Kahn's algorithm, smallest ``(priority, declared position, name)`` first.

    Returns the list of declared positions in topological order.
    Raises GraphError on a cycle.
    """
    n = len(names)
    prio = priority if priority is not None else [0] * n
    succ = [[] for _ in range(n)]
    indeg = [0] * n
    for i, j in edges:
        succ[i].append(j)
        indeg[j] += 1
    heap = [(prio[i], i, names[i]) for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    order = []
    while heap:
        _, i, _ = heapq.heappop(heap)
        order.append(i)
        for j in succ[i]:
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(heap, (prio[j], j, names[j]))
    if len(order) != n:
        stuck = sorted(names[i] for i in range(n) if indeg[i] > 0)
        raise GraphError(f"cycle detected among nodes {stuck}")
    return order


def graph_from_dict(data: dict) -> CompGraph:
    try:
        raw_nodes = data["nodes"]
        raw_edges = data.get("edges", [])
    except (KeyError, TypeError) as exc:
        raise GraphError(f"malformed graph document: {exc}") from None
    names = [str(v["name"]) for v in raw_nodes]
    if len(set(names)) != len(names):
        dup = sorted({x for x in names if names.count(x) > 1})
        raise GraphError(f"duplicate node names: {dup}")
    pos = {name: k for k, name in enumerate(names)}
    edges = []
    for e in raw_edges:
        a, b = e
        if a not in pos or b not in pos:
            raise GraphError(f"edge {a!r} -> {b!r} references unknown node")
        edges.append((pos[a], pos[b]))
    fwd = [bool(v.get("forward", True)) for v in raw_nodes]
    order = topological_order(names, edges, priority=[0 if f else 1 for f in fwd])
    new_index = {old: new for new, old in enumerate(order)}
    nodes = []
    for old in order:
        v = raw_nodes[old]
        mem = v.get("mem", 0)
        if isinstance(mem, float) and mem.is_integer():
            mem = int(mem)
        if not isinstance(mem, int) or isinstance(mem, bool):
            raise GraphError(f"node {names[old]!r}: mem must be an integer")
        nodes.append(NodeInfo(names[old], _parse_cost(v.get("cost", 0)), mem, fwd[old]))
    return CompGraph(
        nodes=tuple(nodes),
        edges=tuple((new_index[i], new_index[j]) for i, j in edges),
        forward_count=sum(fwd),
        constant_overhead=int(data.get("constant_overhead_bytes", 0)),
        cost_unit=data.get("cost_unit"),
    )


def load_graph(path) -> CompGraph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))


def save_graph(g: CompGraph, path) -> None:
    Path(path).write_text(g.to_json())


# analysis ----------------------------------------------------------------

def articulation_points(g: CompGraph) -> list:
    """Cut vertices of the undirected forward subgraph, in topological order.

    Iterative DFS with low-link values, O(V + E).
    """
    n = g.forward_count
    adj = [[] for _ in range(n)]
    for i, j in g.forward_edges():
        adj[i].append(j)
        adj[j].append(i)
    disc = [-1] * n
    low = [0] * n
    cut = [False] * n
    timer = 0
    for root in range(n):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        root_children = 0
        stack = [(root, -1, iter(adj[root]))]
        while stack:
            u, parent, it = stack[-1]
            advanced = False
            for w in it:
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    if u == root:
                        root_children += 1
                    stack.append((w, u, iter(adj[w])))
                    advanced = True
                    break
                if w != parent:
                    low[u] = min(low[u], disc[w])
            if advanced:
                continue
            stack.pop()
            if parent != -1:
                low[parent] = min(low[parent], low[u])
                if parent != root and low[u] >= disc[parent]:
                    cut[parent] = True
        if root_children > 1:
            cut[root] = True
    return [v for v in range(n) if cut[v]]


def linearize(g: CompGraph) -> CompGraph:
    """Same nodes, edges replaced by the path through the topological order."""
    return replace(g, edges=tuple((i, i + 1) for i in range(g.n - 1)))


# generators ----------------------------------------------------------------

def make_chain(n: int, cost=1, mem: int = 1, *, constant_overhead: int = 0) -> CompGraph:
    """Forward-only path graph ``v1 -> v2 -> ... -> vn``."""
    if n < 1:
        raise GraphError("chain needs at least one node")
    nodes = [NodeInfo(f"v{i + 1}", cost, mem, True) for i in range(n)]
    return CompGraph(tuple(nodes), tuple((i, i + 1) for i in range(n - 1)), n, constant_overhead)


def make_training_graph(
    forward_edges: Iterable[tuple],
    n_forward: int,
    *,
    cost=1,
    mem: int = 1,
    costs: Sequence = None,
    mems: Sequence = None,
    constant_overhead: int = 0,
) -> CompGraph:
    """Append a loss node and a mirrored backward pass to a forward DAG.

    The forward DAG must have nodes ``0..n_forward-1`` in topological order with
    a single source (node 0) and a single sink (node ``n_forward-1``). The loss
    consumes the forward sink. The backward node ``b_i`` consumes the forward
    activation ``f_i`` and the gradient of every forward consumer of ``f_i``
    (the loss gradient for the forward sink).

    ``costs``/``mems`` may give per-node values for all ``2*n_forward + 1``
    nodes (forward nodes, loss, then backward nodes in execution order).
    """
    L = n_forward
    if L < 1:
        raise GraphError("need at least one forward node")
    fwd_edges = sorted({(int(i), int(j)) for i, j in forward_edges})
    fusers = [[] for _ in range(L)]
    for i, j in fwd_edges:
        if not 0 <= i < j < L:
            raise GraphError(f"forward edge ({i}, {j}) is not topologically ordered")
        fusers[i].append(j)
    loss = L

    def bwd(i):  # backward node for forward node i
        return L + 1 + (L - 1 - i)

    edges = list(fwd_edges)
    edges.append((L - 1, loss))
    for i in range(L):
        b = bwd(i)
        edges.append((i, b))
        if i == L - 1:
            edges.append((loss, b))
        for j in fusers[i]:
            edges.append((bwd(j), b))
    all_names = [f"f{i + 1}" for i in range(L)] + ["loss"] + [f"b{i + 1}" for i in reversed(range(L))]
    total = 2 * L + 1
    cs = list(costs) if costs is not None else [cost] * total
    ms = list(mems) if mems is not None else [mem] * total
    if len(cs) != total or len(ms) != total:
        raise GraphError(f"expected {total} per-node costs/mems")
    nodes = [NodeInfo(all_names[k], cs[k], ms[k], k <= loss) for k in range(total)]
    return CompGraph(tuple(nodes), tuple(edges), L + 1, constant_overhead)


def make_linear_training(layers: int, cost=1, mem: int = 1, *, constant_overhead: int = 0) -> CompGraph:
    """Forward chain ``f1..fL``, a loss node and backward chain ``bL..b1``.

    Edges are ``f_i -> f_{i+1}``, ``f_L -> loss``, ``loss -> b_L``,
    ``b_{i+1} -> b_i`` and ``f_i -> b_i``; ``2 * layers + 1`` nodes in total.
    The loss node counts as part of the forward pass.
    """
    if layers < 1:
        raise GraphError("layers must be >= 1")
    return make_training_graph(
        [(i, i + 1) for i in range(layers - 1)], layers, cost=cost, mem=mem,
        constant_overhead=constant_overhead,
    )


def make_residual_training(blocks: int, cost=1, mem: int = 1, *, constant_overhead: int = 0) -> CompGraph:
    """Stem followed by ``blocks`` residual blocks ``x -> a -> b -> (x + b)``."""
    if blocks < 1:
        raise GraphError("blocks must be >= 1")
    edges = []
    head = 0
    k = 1
    for _ in range(blocks):
        a, b, add = k, k + 1, k + 2
        edges += [(head, a), (a, b), (b, add), (head, add)]
        head = add
        k += 3
    return make_training_graph(edges, k, cost=cost, mem=mem, constant_overhead=constant_overhead)


def make_unet_training(depth: int, cost=1, mem: int = 1, *, constant_overhead: int = 0) -> CompGraph:
    """Encoder/decoder chain of ``2 * depth + 1`` forward nodes with nested long skips.

    Encoder node ``e_d`` feeds decoder node ``d_d`` in addition to the chain,
    so the forward graph has no articulation points besides the chain ends.
    """
    if depth < 1:
        raise GraphError("depth must be >= 1")
    L = 2 * depth + 1
    edges = [(i, i + 1) for i in range(L - 1)]
    for d in range(depth):
        edges.append((d, L - 1 - d))
    return make_training_graph(edges, L, cost=cost, mem=mem, constant_overhead=constant_overhead)


def random_dag(n: int, rng: random.Random, *, edge_prob: float = 0.3,
               max_cost: int = 5, max_mem: int = 4, forward_count: int = None) -> CompGraph:
    """Random connected DAG on ``n`` nodes with a unique sink.

    Each non-terminal node gets at least one consumer among later nodes.
    """
    if n < 1:
        raise GraphError("n must be >= 1")
    edges = set()
    for i in range(n - 1):
        for j in range(i + 1, n):
            if rng.random() < edge_prob:
                edges.add((i, j))
        if not any(e[0] == i for e in edges):
            edges.add((i, rng.randrange(i + 1, n)))
    fc = n if forward_count is None else forward_count
    nodes = [
        NodeInfo(f"v{i + 1}", rng.randint(1, max_cost), rng.randint(1, max_mem), i < fc)
        for i in range(n)
    ]
    return CompGraph(tuple(nodes), tuple(sorted(edges)), fc)
