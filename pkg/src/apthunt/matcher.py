"""Exact graph edit distance and campaign ranking.

The edit distance between a detected-ability graph and a campaign graph is
the minimum total cost of node/edge substitutions, deletions and insertions
transforming one into the other. It is computed exactly with an A* search
over partial node assignments under an admissible lower bound, then
normalized by the larger node-plus-edge count so campaigns of different
sizes are comparable. Edges are direction-sensitive: an edge (i, j) only
matches the edge between the images of i and j.
"""

from __future__ import annotations

import heapq
import warnings
from dataclasses import dataclass
from collections import Counter

from .graph import AbilityGraph

DELETED = -1  # sentinel image for a removed query node


class IncompatibleLabelSetsWarning(UserWarning):
    """The two graphs share no ability labels; every mapping is a substitution."""


@dataclass(frozen=True)
class CostScheme:
    """Non-negative edit costs; label-preserving substitution is free."""

    node_sub: float = 1.0  # cost of substituting distinct labels
    node_del: float = 1.0
    node_ins: float = 1.0
    edge_sub: float = 0.0  # directed edge mapped onto an existing edge
    edge_del: float = 1.0
    edge_ins: float = 1.0

    def __post_init__(self):
        for name in ("node_sub", "node_del", "node_ins", "edge_sub", "edge_del", "edge_ins"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")

    def node_subst(self, a: str, b: str) -> float:
        return 0.0 if a == b else self.node_sub


class BudgetExceededError(RuntimeError):
    def __init__(self, budget: int, upper_bound: float):
        super().__init__(
            f"GED search budget of {budget} states exhausted; best upper bound {upper_bound}"
        )
        self.budget = budget
        self.upper_bound = upper_bound


@dataclass(frozen=True)
class GedResult:
    raw: float
    normalized: float
    mapping: tuple[int, ...]  # image of each query node; DELETED for removals
    expanded_states: int
    exact: bool = True


def node_edge_count(graph: AbilityGraph) -> int:
    return graph.n_nodes + graph.n_edges


def _edge_cost_on_assign(
    gq: AbilityGraph, gc: AbilityGraph, mapping: list[int], u: int, v: int,
    costs: CostScheme,
) -> float:
    """Edge costs induced by extending the mapping with u -> v.

    Charges every query edge between u and an already-decided node, and every
    campaign edge between v and an already-used image. A query edge whose
    counterpart exists is a substitution; otherwise a deletion. Campaign
    edges without a counterpart are insertions.
    """
    total = 0.0
    for w in range(u):
        img = mapping[w]
        fwd_q = (w, u) in gq.edges
        rev_q = (u, w) in gq.edges
        if img == DELETED or v == DELETED:
            total += costs.edge_del * (fwd_q + rev_q)
            continue
        fwd_c = (img, v) in gc.edges
        rev_c = (v, img) in gc.edges
        total += costs.edge_sub if (fwd_q and fwd_c) else 0.0
        total += costs.edge_del if (fwd_q and not fwd_c) else 0.0
        total += costs.edge_ins if (fwd_c and not fwd_q) else 0.0
        total += costs.edge_sub if (rev_q and rev_c) else 0.0
        total += costs.edge_del if (rev_q and not rev_c) else 0.0
        total += costs.edge_ins if (rev_c and not rev_q) else 0.0
    return total


def _completion_cost(
    gq: AbilityGraph, gc: AbilityGraph, mapping: list[int], costs: CostScheme
) -> float:
    """Cost of inserting every campaign node (and edge) left unmatched."""
    used = {img for img in mapping if img != DELETED}
    total = costs.node_ins * (gc.n_nodes - len(used))
    for i, j in gc.edges:
        if i not in used or j not in used:
            total += costs.edge_ins
    return total


def _lower_bound(
    gq: AbilityGraph, gc: AbilityGraph, depth: int, used: frozenset[int],
    remaining_q_edges: int, costs: CostScheme,
) -> float:
    """Admissible estimate for the unassigned remainder.

    Nodes: optimal label-multiset matching cost assuming every cross-label
    pair costs at least min(node_sub, node_del + node_ins). Edges: the count
    imbalance between undecided query and campaign edges, each charged the
    cheaper of deletion/insertion as appropriate.
    """
    rest_q = Counter(gq.node_labels[depth:])
    rest_c = Counter(
        label for i, label in enumerate(gc.node_labels) if i not in used
    )
    common = sum((rest_q & rest_c).values())
    nq = sum(rest_q.values()) - common
    nc = sum(rest_c.values()) - common
    paired = min(nq, nc)
    bound = (
        paired * min(costs.node_sub, costs.node_del + costs.node_ins)
        + (nq - paired) * costs.node_del
        + (nc - paired) * costs.node_ins
    )
    remaining_c_edges = sum(
        1 for i, j in gc.edges if i not in used or j not in used
    )
    if remaining_q_edges > remaining_c_edges:
        bound += (remaining_q_edges - remaining_c_edges) * costs.edge_del
    else:
        bound += (remaining_c_edges - remaining_q_edges) * costs.edge_ins
    return bound


def ged_exact(
    gq: AbilityGraph,
    gc: AbilityGraph,
    costs: CostScheme | None = None,
    budget: int = 1_000_000,
) -> GedResult:
    """Minimum-cost edit path between two ability graphs via A*.

    States assign query nodes 0..depth-1 to distinct campaign nodes or to
    deletion; leftover campaign nodes are inserted when a state completes.
    Raises BudgetExceededError (carrying the best known upper bound) if more
    than ``budget`` states get expanded.
    """
    if costs is None:
        costs = CostScheme()
    if budget < 1:
        raise ValueError("budget must be >= 1")
    nq, nc = gq.n_nodes, gc.n_nodes
    if nq and nc and not set(gq.node_labels) & set(gc.node_labels):
        warnings.warn(
            f"graphs {gq.name!r} and {gc.name!r} share no ability labels",
            IncompatibleLabelSetsWarning,
            stacklevel=2,
        )

    # edges incident to nodes >= depth, indexed by depth
    undecided_edges = [0] * (nq + 1)
    for depth in range(nq + 1):
        undecided_edges[depth] = sum(
            1 for i, j in gq.edges if i >= depth or j >= depth
        )

    start_bound = _lower_bound(gq, gc, 0, frozenset(), undecided_edges[0], costs)
    counter = 0
    # ties prefer deeper states (larger g), then insertion order
    heap: list = [(start_bound, 0.0, counter, (), frozenset())]
    expanded = 0
    best_complete: tuple[float, tuple[int, ...]] | None = None
    while heap:
        f, neg_g, _, mapping, used = heapq.heappop(heap)
        g = -neg_g
        depth = len(mapping)
        if best_complete is not None and f >= best_complete[0]:
            break
        if depth == nq:
            total = g + _completion_cost(gq, gc, list(mapping), costs)
            if best_complete is None or total < best_complete[0]:
                best_complete = (total, mapping)
            # an exact bound would let us stop; completed states are cheap,
            # so just record and keep draining better candidates
            continue
        expanded += 1
        if expanded > budget:
            upper = best_complete[0] if best_complete else _greedy_upper_bound(
                gq, gc, list(mapping), costs
            )
            raise BudgetExceededError(budget, upper)
        options = [DELETED] + [v for v in range(nc) if v not in used]
        for v in options:
            node_cost = (
                costs.node_del
                if v == DELETED
                else costs.node_subst(gq.node_labels[depth], gc.node_labels[v])
            )
            edge_cost = _edge_cost_on_assign(gq, gc, list(mapping), depth, v, costs)
            g2 = g + node_cost + edge_cost
            used2 = used if v == DELETED else used | {v}
            h2 = _lower_bound(gq, gc, depth + 1, used2, undecided_edges[depth + 1], costs)
            counter += 1
            heapq.heappush(heap, (g2 + h2, -g2, counter, mapping + (v,), used2))
    if best_complete is None:
        # empty query graph: everything in gc is inserted
        total = _completion_cost(gq, gc, [], costs)
        best_complete = (total, ())
    raw = best_complete[0]
    return GedResult(
        raw=raw,
        normalized=_normalize(raw, gq, gc),
        mapping=best_complete[1],
        expanded_states=expanded,
    )


def _greedy_upper_bound(
    gq: AbilityGraph, gc: AbilityGraph, mapping: list[int], costs: CostScheme
) -> float:
    """Complete a partial mapping greedily to get some valid total cost."""
    mapping = list(mapping)
    used = {img for img in mapping if img != DELETED}
    g = 0.0
    for depth, v in enumerate(mapping):
        g += (
            costs.node_del
            if v == DELETED
            else costs.node_subst(gq.node_labels[depth], gc.node_labels[v])
        )
        g += _edge_cost_on_assign(gq, gc, mapping[:depth], depth, v, costs)
    for depth in range(len(mapping), gq.n_nodes):
        best_v, best_cost = DELETED, None
        for v in [DELETED] + [v for v in range(gc.n_nodes) if v not in used]:
            node_cost = (
                costs.node_del
                if v == DELETED
                else costs.node_subst(gq.node_labels[depth], gc.node_labels[v])
            )
            cost = node_cost + _edge_cost_on_assign(gq, gc, mapping, depth, v, costs)
            if best_cost is None or cost < best_cost:
                best_v, best_cost = v, cost
        mapping.append(best_v)
        if best_v != DELETED:
            used.add(best_v)
        g += best_cost
    return g + _completion_cost(gq, gc, mapping, costs)


def _normalize(raw: float, gq: AbilityGraph, gc: AbilityGraph) -> float:
    denom = max(node_edge_count(gq), node_edge_count(gc))
    return raw / denom if denom > 0 else 0.0


def ged_normalized(result: GedResult, gq: AbilityGraph, gc: AbilityGraph) -> float:
    """Raw distance over the larger node+edge count; 0 when both are empty."""
    return _normalize(result.raw, gq, gc)


def rank_campaigns(
    gq: AbilityGraph,
    campaigns: list[AbilityGraph],
    costs: CostScheme | None = None,
    budget: int = 1_000_000,
) -> list[tuple[str, GedResult]]:
    """All campaigns scored and sorted ascending; name breaks score ties.

    A campaign whose search exceeds the budget is ranked by its best upper
    bound and flagged inexact.
    """
    if not campaigns:
        raise ValueError("campaign corpus must be nonempty")
    scored: list[tuple[str, GedResult]] = []
    for gc in campaigns:
        try:
            result = ged_exact(gq, gc, costs, budget)
        except BudgetExceededError as exc:
            result = GedResult(
                raw=exc.upper_bound,
                normalized=_normalize(exc.upper_bound, gq, gc),
                mapping=(),
                expanded_states=exc.budget,
                exact=False,
            )
        scored.append((gc.name, result))
    scored.sort(key=lambda item: (item[1].normalized, item[0]))
    return scored


def topk_score(rankings: list[tuple[str, list[str]]], k: int) -> float:
    """Fraction of scenarios whose true campaign is within the first k ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not rankings:
        return 0.0
    hits = sum(1 for truth, names in rankings if truth in names[:k])
    return hits / len(rankings)
