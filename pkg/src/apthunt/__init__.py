"""Audit-log attack-pattern detection and APT campaign attribution toolkit.

Cascade: canonical event ingestion, token-hash/table embedding with PCA,
one-class-SVM anomaly filtering, BiGRU-CRF BIO2 tagging, ability-graph
assembly, and exact graph-edit-distance campaign ranking.
"""

__version__ = "0.1.0"

from .ingest import CanonicalEvent, EventSequence, parse_procmon_csv, parse_canonical_jsonl, sessionize
from .embed import FeatureHashEmbedder, ExternalTableEmbedder, PcaModel, pca_fit, pca_transform
from .anomaly import OcSvmModel, ocsvm_fit, ocsvm_decision, filter_events
from .tagger import LabelSet, BiGruCrfModel, TagSequence, TrainConfig, train, tag
from .graph import AbilityGraph, AbilityInstance, spans_from_tags, build_ability_graph
from .matcher import CostScheme, GedResult, ged_exact, ged_normalized, rank_campaigns, topk_score
from .evalkit import MetricReport, ScenarioSpec, macro_prf, generate_scenario
from .pipeline import PipelineConfig, run_pipeline

__all__ = [
    "__version__",
    "CanonicalEvent", "EventSequence", "parse_procmon_csv", "parse_canonical_jsonl", "sessionize",
    "FeatureHashEmbedder", "ExternalTableEmbedder", "PcaModel", "pca_fit", "pca_transform",
    "OcSvmModel", "ocsvm_fit", "ocsvm_decision", "filter_events",
    "LabelSet", "BiGruCrfModel", "TagSequence", "TrainConfig", "train", "tag",
    "AbilityGraph", "AbilityInstance", "spans_from_tags", "build_ability_graph",
    "CostScheme", "GedResult", "ged_exact", "ged_normalized", "rank_campaigns", "topk_score",
    "MetricReport", "ScenarioSpec", "macro_prf", "generate_scenario",
    "PipelineConfig", "run_pipeline",
]
