"""Execution dependency graph rebuilt from a transaction log.

An edge ``a -> b`` means record ``b`` depends on record ``a``. Two rules add
edges between COMPLETED records:

* data rule: some leaf value of ``a.result`` equals a leaf value of ``b.params``
  (strings of length >= 3 and numbers only; booleans and short strings such as
  ``"OK"`` are ignored);
* fallback rule: if the data rule gives ``b`` no incoming edge and ``b`` is not
  the first node, ``b`` depends on the COMPLETED record just before it.

:func:`rollback_order` then compensates dependents before what they depend on,
breaking ties by most recent record first.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

from rac.txlog import Status, ToolCallRecord

MIN_STRING_LEAF = 3


class GraphCycleError(RuntimeError):
    """Raised when ordering a graph that is not acyclic."""


@dataclass(frozen=True)
class ExecutionGraph:
    nodes: frozenset[int] = frozenset()
    edges: frozenset[tuple[int, int]] = frozenset()
    labels: dict[int, str] = field(default_factory=dict, compare=False)

    def successors(self, node: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == node)

    def predecessors(self, node: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == node)


def iter_leaves(value: Any) -> Iterator[Any]:
    if isinstance(value, dict):
        for v in value.values():
            yield from iter_leaves(v)
    elif isinstance(value, (list, tuple)):
        for v in value:
            yield from iter_leaves(v)
    else:
        yield value


def dependency_keys(value: Any) -> set[tuple[str, Any]]:
    """Leaf values eligible for the data rule, tagged by kind so "7" != 7."""
    keys: set[tuple[str, Any]] = set()
    for leaf in iter_leaves(value):
        if isinstance(leaf, bool) or leaf is None:
            continue
        if isinstance(leaf, (int, float)):
            keys.add(("n", leaf))
        elif isinstance(leaf, str) and len(leaf) >= MIN_STRING_LEAF:
            keys.add(("s", leaf))
    return keys


def build_graph(records: Iterable[ToolCallRecord]) -> ExecutionGraph:
    completed = sorted((r for r in records if r.status == Status.COMPLETED), key=lambda r: r.record_id)
    produced = [(r.record_id, dependency_keys(r.result)) for r in completed]
    edges: set[tuple[int, int]] = set()
    for i, rec in enumerate(completed):
        consumed = dependency_keys(rec.params)
        incoming = {rid for rid, keys in produced[:i] if keys & consumed}
        if not incoming and i > 0:
            incoming = {completed[i - 1].record_id}
        edges.update((a, rec.record_id) for a in incoming)
    return ExecutionGraph(
        nodes=frozenset(r.record_id for r in completed),
        edges=frozenset(edges),
        labels={r.record_id: r.tool_name for r in completed},
    )


def rollback_order(graph: ExecutionGraph) -> list[int]:
    """Reverse topological order; among free nodes the highest id goes first."""
    pending_dependents = {n: 0 for n in graph.nodes}
    depends_on: dict[int, list[int]] = {n: [] for n in graph.nodes}
    for a, b in graph.edges:
        if a not in pending_dependents or b not in pending_dependents:
            raise ValueError(f"edge {a}->{b} references a node outside the graph")
        pending_dependents[a] += 1
        depends_on[b].append(a)
    ready = [-n for n, count in pending_dependents.items() if count == 0]
    heapq.heapify(ready)
    order: list[int] = []
    while ready:
        node = -heapq.heappop(ready)
        order.append(node)
        for parent in depends_on[node]:
            pending_dependents[parent] -= 1
            if pending_dependents[parent] == 0:
                heapq.heappush(ready, -parent)
    if len(order) != len(graph.nodes):
        stuck = sorted(n for n, c in pending_dependents.items() if c > 0)
        raise GraphCycleError(f"execution graph has a cycle through {stuck}")
    return order


def to_dot(graph: ExecutionGraph, records: Sequence[ToolCallRecord] | None = None) -> str:
    """Graphviz rendering, one node per COMPLETED record."""
    labels = dict(graph.labels)
    if records is not None:
        labels.update({r.record_id: r.tool_name for r in records if r.record_id in graph.nodes})
    lines = ["digraph execution {", "  rankdir=LR;"]
    for n in sorted(graph.nodes):
        label = f"{n}: {labels.get(n, '?')}"
        lines.append(f'  r{n} [label="{label}"];')
    for a, b in sorted(graph.edges):
        lines.append(f"  r{a} -> r{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"
