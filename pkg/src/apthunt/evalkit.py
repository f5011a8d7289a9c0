"""Event-level evaluation metrics and the synthetic labeled-scenario generator.

Metrics fold B-x and I-x predictions onto the ability x and macro-average
precision/recall/F1 over the abilities present in either the gold or the
predicted stream, excluding O. The generator plants one campaign run inside a
stream of benign template events: each campaign ability expands to a block of
labeled template events, blocks appear in campaign-graph order, and all
malicious events share a process id so consecutive abilities are linked by a
common entity.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from importlib import resources

from .errors import AlignmentMismatchError
from .graph import AbilityGraph, build_ability_graph, spans_from_tags
from .ingest import CanonicalEvent, EventSequence
from .tagger import LabelSet, TagSequence

USERS = ("alice", "bhavna", "carol", "dmitri", "erin", "farid")
HOSTS = ("contoso.com", "fabrikam.net", "adventure-works.com", "tailspintoys.io")
C2_HOSTS = ("update-center.xyz", "files-mirror.top", "api-sync.site", "static-cdn.click")
IMPLANT_STEMS = ("wupsvc", "msudate", "svchelper", "taskhostsrv", "winlogsrv", "netcfgd")
DOCS = ("budget_q3", "meeting_minutes", "salary_review", "roadmap_2024",
        "inventory", "vendor_contract", "travel_plan", "perf_notes")


class TemplateMissingError(KeyError):
    def __init__(self, ability: str):
        super().__init__(f"no event templates for ability {ability!r}")
        self.ability = ability


@dataclass(frozen=True)
class MetricReport:
    per_class: dict[str, tuple[float, float, float, int]]  # ability -> (P, R, F1, support)
    macro: tuple[float, float, float]
    excluded: frozenset[str] = frozenset({"O"})

    def to_document(self) -> dict:
        return {
            "per_class": {
                a: {"precision": p, "recall": r, "f1": f, "support": s}
                for a, (p, r, f, s) in sorted(self.per_class.items())
            },
            "macro": {
                "precision": self.macro[0],
                "recall": self.macro[1],
                "f1": self.macro[2],
            },
            "excluded": sorted(self.excluded),
        }


def _fold(tag, label_set: LabelSet) -> str:
    """B-x / I-x -> x, O stays O; accepts tag names or indices."""
    name = label_set.tag_name(tag) if isinstance(tag, int) else tag
    if name == "O":
        return "O"
    return name.partition("-")[2]


def macro_prf(pred, gold, labels: LabelSet) -> MetricReport:
    """Event-level macro precision/recall/F1 over abilities, O excluded.

    A class with a zero denominator contributes 0 to the affected metric.
    """
    if len(pred) != len(gold):
        raise AlignmentMismatchError(len(pred), len(gold), "pred/gold tags")
    pred_folded = [_fold(t, labels) for t in pred]
    gold_folded = [_fold(t, labels) for t in gold]
    classes = sorted(
        {c for c in pred_folded + gold_folded if c != "O"}
    )
    per_class: dict[str, tuple[float, float, float, int]] = {}
    p_sum = r_sum = f_sum = 0.0
    for cls in classes:
        tp = sum(1 for p, g in zip(pred_folded, gold_folded) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(pred_folded, gold_folded) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(pred_folded, gold_folded) if p != cls and g == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls] = (precision, recall, f1, tp + fn)
        p_sum += precision
        r_sum += recall
        f_sum += f1
    n = len(classes)
    macro = (p_sum / n, r_sum / n, f_sum / n) if n else (0.0, 0.0, 0.0)
    return MetricReport(per_class=per_class, macro=macro)


def format_report_table(reports: dict[str, MetricReport]) -> str:
    """Aligned text table: one row per scenario plus an Avg. row."""
    rows = [("Scenario", "P", "R", "F1")]
    for name, report in reports.items():
        p, r, f = report.macro
        rows.append((name, f"{p:.2%}", f"{r:.2%}", f"{f:.2%}"))
    if reports:
        n = len(reports)
        avg = [sum(rep.macro[i] for rep in reports.values()) / n for i in range(3)]
        rows.append(("Avg.", f"{avg[0]:.2%}", f"{avg[1]:.2%}", f"{avg[2]:.2%}"))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines)


def _load_json_resource(name: str) -> dict:
    path = resources.files("apthunt.data.templates").joinpath(name)
    return json.loads(path.read_text())


def default_benign_templates() -> list[tuple[str, str, str]]:
    return [tuple(t) for t in _load_json_resource("benign.json")["templates"]]


def default_ability_templates() -> dict[str, list[tuple[str, str, str]]]:
    doc = _load_json_resource("abilities.json")["abilities"]
    return {a: [tuple(e) for e in spec["events"]] for a, spec in doc.items()}


def default_label_set() -> LabelSet:
    return LabelSet(abilities=tuple(default_ability_templates().keys()))


@dataclass(frozen=True)
class ScenarioSpec:
    campaign: AbilityGraph
    benign_event_count: int
    malicious_rate: float
    seed: int
    ability_templates: dict[str, list[tuple[str, str, str]]] = field(
        default_factory=default_ability_templates
    )
    benign_templates: list[tuple[str, str, str]] = field(
        default_factory=default_benign_templates
    )

    def __post_init__(self):
        if not 0.0 < self.malicious_rate < 1.0:
            raise ValueError("malicious_rate must be in (0, 1)")
        if self.benign_event_count < 1:
            raise ValueError("benign_event_count must be >= 1")
        for ability in self.campaign.node_labels:
            if ability not in self.ability_templates:
                raise TemplateMissingError(ability)


def _topological_order(graph: AbilityGraph) -> list[int]:
    """Kahn's algorithm with the lowest-index node chosen first."""
    indeg = [0] * graph.n_nodes
    for _, j in graph.edges:
        indeg[j] += 1
    ready = sorted(i for i in range(graph.n_nodes) if indeg[i] == 0)
    order: list[int] = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for i, j in sorted(graph.edges):
            if i == node:
                indeg[j] -= 1
                if indeg[j] == 0:
                    ready.append(j)
        ready.sort()
    if len(order) != graph.n_nodes:
        raise ValueError("campaign graph has a cycle")
    return order


def _fill(pattern: str, rng: random.Random, user: str, implant: str) -> str:
    out = pattern
    while "{hex}" in out:
        out = out.replace("{hex}", f"{rng.getrandbits(32):08x}", 1)
    while "{num}" in out:
        out = out.replace("{num}", str(rng.randint(1, 254)), 1)
    out = out.replace("{user}", user)
    out = out.replace("{implant}", implant)
    if "{doc}" in out:
        out = out.replace("{doc}", rng.choice(DOCS))
    if "{host}" in out:
        out = out.replace("{host}", rng.choice(HOSTS))
    if "{c2host}" in out:
        out = out.replace("{c2host}", rng.choice(C2_HOSTS))
    return out


def generate_scenario(
    spec: ScenarioSpec,
) -> tuple[list[CanonicalEvent], AbilityGraph]:
    """Deterministic benign stream with one planted campaign run.

    Returns the labeled event list and the ground-truth ability graph built
    from the planted spans. The realized malicious fraction stays within 20%
    (relative) of spec.malicious_rate unless the minimal per-ability template
    lengths force more events.
    """
    rng = random.Random(spec.seed)
    user = rng.choice(USERS)
    implant_pid = rng.randint(10000, 59999)
    benign_pids = {}
    for subject in sorted({t[0] for t in spec.benign_templates}):
        benign_pids[subject] = rng.randint(1000, 9999)

    order = _topological_order(spec.campaign)
    abilities = [spec.campaign.node_labels[i] for i in order]
    n_blocks = len(abilities)
    n_benign = spec.benign_event_count
    target = round(spec.malicious_rate / (1.0 - spec.malicious_rate) * n_benign)
    minimal = sum(len(spec.ability_templates[a]) for a in abilities)
    total_malicious = max(target, minimal)
    base, rem = divmod(total_malicious, n_blocks)
    block_lengths = []
    for i, ability in enumerate(abilities):
        length = base + (1 if i < rem else 0)
        block_lengths.append(max(length, len(spec.ability_templates[ability])))

    positions = sorted(rng.sample(range(n_benign + 1), n_blocks))
    blocks = iter(zip(abilities, block_lengths, positions))
    next_block = next(blocks, None)

    events: list[CanonicalEvent] = []
    timestamp = 9 * 3_600_000_000  # 09:00:00

    def advance() -> int:
        nonlocal timestamp
        timestamp += rng.randint(200, 4000)
        return timestamp

    def emit(subject, pid, action, obj, label):
        events.append(
            CanonicalEvent(
                seq_id=len(events),
                timestamp=advance(),
                subject=subject,
                subject_pid=pid,
                action=action,
                object=obj,
                result="SUCCESS",
                label=label,
            )
        )

    def emit_block(ability: str, length: int):
        # tool names reuse a small stem pool; the suffix varies per block so
        # the tagger cannot pivot on one scenario-wide process image
        implant = f"{rng.choice(IMPLANT_STEMS)}_{rng.getrandbits(16):04x}.exe"
        template = spec.ability_templates[ability]
        for k in range(length):
            subject, action, obj = template[k % len(template)]
            emit(
                _fill(subject, rng, user, implant),
                implant_pid,
                _fill(action, rng, user, implant),
                _fill(obj, rng, user, implant),
                f"B-{ability}" if k == 0 else f"I-{ability}",
            )

    for benign_index in range(n_benign):
        while next_block is not None and next_block[2] == benign_index:
            emit_block(next_block[0], next_block[1])
            next_block = next(blocks, None)
        subject, action, obj = rng.choice(spec.benign_templates)
        emit(
            subject,
            benign_pids[subject],
            _fill(action, rng, user, ""),
            _fill(obj, rng, user, ""),
            "O",
        )
    while next_block is not None:
        emit_block(next_block[0], next_block[1])
        next_block = next(blocks, None)

    truth = ground_truth_graph(events, LabelSet(abilities=tuple(sorted(set(abilities)))))
    return events, truth


def ground_truth_graph(
    events: list[CanonicalEvent], label_set: LabelSet
) -> AbilityGraph:
    """Ability graph implied by gold labels (same decode path as predictions)."""
    seq = EventSequence(events=tuple(events), origin="gold")
    tags = TagSequence(
        tags=tuple(label_set.tag_index(e.label or "O") for e in events),
        score=0.0,
    )
    instances = spans_from_tags(tags, seq, label_set)
    return build_ability_graph(instances)
