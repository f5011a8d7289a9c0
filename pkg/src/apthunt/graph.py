"""Ability graphs: decode tag spans into instances and wire temporal edges.

A detected graph has one node per contiguous BIO2 span; a directed edge means
the earlier ability finished no later than the second began AND the two spans
touch at least one common system entity (process name, pid, or object path).
Campaign graphs carry bare ability labels plus the 1-7 lifecycle stage of
each node and are loaded from curated JSON definitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .ingest import CanonicalEvent, EventSequence
from .tagger import LabelSet, TagSequence


class SchemaError(ValueError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.json_path = path


class UnknownAbilityError(ValueError):
    def __init__(self, ability: str):
        super().__init__(f"ability not in configured label set: {ability!r}")
        self.ability = ability


@dataclass(frozen=True)
class AbilityInstance:
    """One detected occurrence of an ability over a span of events."""

    ability: str
    span: tuple[int, int]  # (first seq_id, last seq_id)
    entities: frozenset[str]
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_start > self.t_end:
            raise ValueError("t_start must be <= t_end")
        if not self.entities:
            raise ValueError("entities must be nonempty")


@dataclass(frozen=True)
class AbilityGraph:
    """Labeled digraph over ability nodes; detected or campaign kind."""

    kind: str  # "detected" | "campaign"
    node_labels: tuple[str, ...]
    edges: frozenset[tuple[int, int]]
    stages: tuple[int, ...] | None = None
    instances: tuple[AbilityInstance, ...] | None = None
    name: str = ""

    def __post_init__(self):
        n = len(self.node_labels)
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i},{j}) references missing node")

    @property
    def n_nodes(self) -> int:
        return len(self.node_labels)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


def event_entities(event: CanonicalEvent) -> frozenset[str]:
    """Normalized entity keys of one event: subject, pid and object path."""
    keys = {event.subject.lower(), f"pid:{event.subject_pid}"}
    if event.object:
        keys.add(event.object.lower())
    return frozenset(keys)


def spans_from_tags(
    tags: TagSequence, events: EventSequence, label_set: LabelSet
) -> list[AbilityInstance]:
    """Maximal B-a (I-a)* runs become instances; orphan I-a starts a new span."""
    if len(tags) != len(events):
        raise ValueError(f"tags/events misaligned: {len(tags)} vs {len(events)}")
    instances: list[AbilityInstance] = []
    current: str | None = None
    members: list[CanonicalEvent] = []

    def flush():
        nonlocal current, members
        if current is None:
            return
        entities = frozenset().union(*(event_entities(e) for e in members))
        instances.append(
            AbilityInstance(
                ability=current,
                span=(members[0].seq_id, members[-1].seq_id),
                entities=entities,
                t_start=min(e.timestamp for e in members),
                t_end=max(e.timestamp for e in members),
            )
        )
        current = None
        members = []

    for tag_idx, event in zip(tags.tags, events.events):
        name = label_set.tag_name(tag_idx)
        kind, _, ability = name.partition("-")
        if kind == "O":
            flush()
        elif kind == "B" or ability != current:
            # lenient decode: an orphan I-a behaves like B-a
            flush()
            current = ability
            members = [event]
        else:
            members.append(event)
    flush()
    return instances


def build_ability_graph(
    instances: list[AbilityInstance], transitive_reduction: bool = True
) -> AbilityGraph:
    """Nodes in canonical (t_start, span) order; edges need time + entity overlap."""
    ordered = sorted(instances, key=lambda a: (a.t_start, a.span))
    n = len(ordered)
    edges: set[tuple[int, int]] = set()
    for i in range(n):
        for j in range(i + 1, n):
            if ordered[i].t_end <= ordered[j].t_start and (
                ordered[i].entities & ordered[j].entities
            ):
                edges.add((i, j))
    if transitive_reduction:
        edges = _transitive_reduction(n, edges)
    return AbilityGraph(
        kind="detected",
        node_labels=tuple(a.ability for a in ordered),
        edges=frozenset(edges),
        instances=tuple(ordered),
    )


def _transitive_reduction(n: int, edges: set[tuple[int, int]]) -> set[tuple[int, int]]:
    """Drop edges implied by a longer path (graph is a DAG by construction)."""
    succ: dict[int, set[int]] = {i: set() for i in range(n)}
    for i, j in edges:
        succ[i].add(j)

    reach_cache: dict[int, set[int]] = {}

    def reachable(src: int) -> set[int]:
        if src in reach_cache:
            return reach_cache[src]
        seen: set[int] = set()
        stack = list(succ[src])
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(succ[v])
        reach_cache[src] = seen
        return seen

    kept = set()
    for i, j in edges:
        via_longer = any(j in reachable(k) for k in succ[i] if k != j)
        if not via_longer:
            kept.add((i, j))
    return kept


def load_campaign_graph(
    document: dict | str, label_set: LabelSet | None = None
) -> AbilityGraph:
    """Validate and load one campaign definition (see campaign JSON schema)."""
    return _load_graph_document(document, label_set, kind="campaign", allow_empty=False)


def load_query_graph(document: dict | str) -> AbilityGraph:
    """Load an exported detected graph; unlike campaigns it may be empty."""
    return _load_graph_document(document, None, kind="detected", allow_empty=True)


def _load_graph_document(
    document: dict | str,
    label_set: LabelSet | None,
    kind: str,
    allow_empty: bool,
) -> AbilityGraph:
    doc = json.loads(document) if isinstance(document, str) else document
    if not isinstance(doc, dict):
        raise SchemaError("$", "document must be an object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("$.name", "must be a nonempty string")
    nodes = doc.get("nodes")
    if not isinstance(nodes, list) or (not nodes and not allow_empty):
        raise SchemaError("$.nodes", "must be a nonempty array")
    labels: list[str] = []
    stages: list[int] = []
    for i, node in enumerate(nodes):
        if not isinstance(node, dict):
            raise SchemaError(f"$.nodes[{i}]", "must be an object")
        ability = node.get("ability")
        if not isinstance(ability, str) or not ability:
            raise SchemaError(f"$.nodes[{i}].ability", "must be a nonempty string")
        stage = node.get("stage")
        if not isinstance(stage, int) or isinstance(stage, bool) or not 1 <= stage <= 7:
            raise SchemaError(f"$.nodes[{i}].stage", "must be an integer in 1..7")
        if label_set is not None and ability not in label_set.abilities:
            raise UnknownAbilityError(ability)
        labels.append(ability)
        stages.append(stage)
    raw_edges = doc.get("edges", [])
    if not isinstance(raw_edges, list):
        raise SchemaError("$.edges", "must be an array of [i, j] pairs")
    edges: set[tuple[int, int]] = set()
    for k, pair in enumerate(raw_edges):
        if (
            not isinstance(pair, list)
            or len(pair) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair)
        ):
            raise SchemaError(f"$.edges[{k}]", "must be an [i, j] index pair")
        i, j = pair
        if not (0 <= i < len(labels) and 0 <= j < len(labels)):
            raise SchemaError(f"$.edges[{k}]", "node index out of range")
        if i == j:
            raise SchemaError(f"$.edges[{k}]", "self-loops are not allowed")
        edges.add((i, j))
    return AbilityGraph(
        kind=kind,
        node_labels=tuple(labels),
        edges=frozenset(edges),
        stages=tuple(stages),
        name=name,
    )


def load_campaign_file(path: str | Path, label_set: LabelSet | None = None) -> AbilityGraph:
    return load_campaign_graph(Path(path).read_text(), label_set)


def graph_to_document(graph: AbilityGraph) -> dict:
    """Serialize in the campaign schema; detected graphs add span metadata."""
    doc: dict = {
        "name": graph.name or graph.kind,
        "nodes": [],
        "edges": sorted([list(e) for e in graph.edges]),
    }
    for i, label in enumerate(graph.node_labels):
        node: dict = {"ability": label, "stage": graph.stages[i] if graph.stages else 1}
        if graph.instances is not None:
            inst = graph.instances[i]
            node["span"] = list(inst.span)
            node["entities"] = sorted(inst.entities)
            node["t_start"] = inst.t_start
            node["t_end"] = inst.t_end
        doc["nodes"].append(node)
    return doc


def save_campaign_graph(graph: AbilityGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_document(graph), sort_keys=True))
