"""Brute-force reference implementations used to check the fast paths.

Everything here enumerates exhaustively and is deliberately independent of
the package's dynamic programs and search code.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from apthunt.graph import AbilityGraph
from apthunt.matcher import CostScheme


def enumerate_path_scores(emissions, transitions, start, end):
    """Score of every one of the K^T tag paths."""
    steps, n_tags = emissions.shape
    scores = []
    for path in itertools.product(range(n_tags), repeat=steps):
        s = start[path[0]] + end[path[-1]]
        s += sum(emissions[t, path[t]] for t in range(steps))
        s += sum(transitions[path[t], path[t + 1]] for t in range(steps - 1))
        scores.append((s, path))
    return scores


def brute_log_partition(emissions, transitions, start, end) -> float:
    scores = [s for s, _ in enumerate_path_scores(emissions, transitions, start, end)]
    peak = max(scores)
    return peak + math.log(sum(math.exp(s - peak) for s in scores))


def brute_viterbi(emissions, transitions, start, end):
    """Best path; ties break toward the lexicographically smallest path."""
    best_score, best_path = None, None
    for s, path in enumerate_path_scores(emissions, transitions, start, end):
        if best_score is None or s > best_score + 1e-15:
            best_score, best_path = s, path
    return np.array(best_path), best_score


def brute_ged(gq: AbilityGraph, gc: AbilityGraph, costs: CostScheme | None = None) -> float:
    """Exhaustive minimum over every injective partial node mapping.

    A mapping assigns each query node either a distinct campaign node or
    deletion; unassigned campaign nodes are insertions. Edge costs follow
    from the mapping: a directed query edge whose both endpoints map to
    campaign nodes is substituted if the corresponding campaign edge exists,
    deleted otherwise; campaign edges with no counterpart are inserted.
    """
    if costs is None:
        costs = CostScheme()
    nq, nc = gq.n_nodes, gc.n_nodes
    best = math.inf
    targets = list(range(nc))
    for images in itertools.product([None] + targets, repeat=nq):
        used = [v for v in images if v is not None]
        if len(set(used)) != len(used):
            continue
        total = 0.0
        for u, v in enumerate(images):
            if v is None:
                total += costs.node_del
            else:
                total += costs.node_subst(gq.node_labels[u], gc.node_labels[v])
        total += costs.node_ins * (nc - len(used))
        mapped = {u: v for u, v in enumerate(images) if v is not None}
        for i, j in gq.edges:
            if i in mapped and j in mapped and (mapped[i], mapped[j]) in gc.edges:
                total += costs.edge_sub
            else:
                total += costs.edge_del
        image_edges = {
            (mapped[i], mapped[j])
            for i, j in gq.edges
            if i in mapped and j in mapped
        }
        for e in gc.edges:
            if e not in image_edges:
                total += costs.edge_ins
        best = min(best, total)
    return best


def random_ability_graph(rng: np.random.Generator, max_nodes: int = 6) -> AbilityGraph:
    labels = ["A", "B", "C", "D"]
    n = int(rng.integers(0, max_nodes + 1))
    node_labels = tuple(labels[int(rng.integers(0, len(labels)))] for _ in range(n))
    edges = set()
    for i in range(n):
        for j in range(n):
            if i != j and rng.random() < 0.3:
                edges.add((i, j))
    return AbilityGraph(kind="campaign", node_labels=node_labels,
                        edges=frozenset(edges), name="rnd")
