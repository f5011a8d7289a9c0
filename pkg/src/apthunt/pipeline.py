"""End-to-end cascade orchestration with file artifacts at every stage.

The flow is ingest -> embed -> anomaly filter -> tag -> ability graph ->
campaign match. In training mode (labeled training events supplied) the
models are fitted first and saved; in inference mode they are loaded from
``model_dir``. Every intermediate artifact is versioned JSON so a run can be
reproduced or decomposed into the equivalent CLI subcommands; reports are
byte-stable for a fixed config.

Stage seeds derive from the single config seed by fixed offsets: +1 token
hashing, +2 benign subsampling, +3 tagger init/shuffle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import anomaly, embed, evalkit, graph, ingest, matcher, tagger


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    input: str = ""
    input_format: str = "jsonl"  # jsonl | procmon
    output_dir: str = "out"
    model_dir: str = ""  # default: <output_dir>/models
    campaign_dir: str = ""  # default: packaged corpus
    train_events: str = ""  # comma-separated labeled JSONL paths -> training mode
    embedding_table: str = ""  # token table file; empty -> feature hashing
    oov: str = "hash"
    strict_parse: bool = False
    seed: int = 7
    hash_dim: int = 64
    pca_k: int = 64
    pca_fit_on: str = "filtered"  # filtered | all
    tagger_features: str = "pca"  # pca | raw
    nu: float = 0.05
    gamma: float = 0.5
    gamma_mode: str = "fixed"  # fixed | dim | median
    ocsvm_max_train: int = 2000
    ocsvm_tol: float = 1e-6
    ocsvm_max_iter: int = 100000
    filter_threshold: float = 0.0
    max_window: int = 256
    per_pid: bool = False
    tag_suspicious_only: bool = True
    transitive_reduction: bool = True
    viterbi_mask: bool = False
    hidden: int = 64
    lr: float = 0.1
    epochs: int = 30
    batch: int = 4
    clip: float = 5.0
    ged_budget: int = 1_000_000


def parse_config_file(path: str | Path) -> dict:
    """Flat key=value file; '#' starts a comment; values typed per the field."""
    raw: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ValueError(f"{path}:{line_no}: expected key=value")
        key, _, value = text.partition("=")
        raw[key.strip()] = value.strip()
    return coerce_config_values(raw)


def coerce_config_values(raw: dict) -> dict:
    by_name = {f.name: f for f in fields(PipelineConfig)}
    out: dict = {}
    for key, value in raw.items():
        if key not in by_name:
            raise ValueError(f"unknown config key {key!r}")
        if isinstance(value, str):
            kind = by_name[key].type
            if kind == "bool":
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(f"config key {key!r}: expected a boolean")
                value = value.lower() in ("true", "1")
            elif kind == "int":
                value = int(value)
            elif kind == "float":
                value = float(value)
        out[key] = value
    return out


def build_config(file_path: str | None = None, overrides: dict | None = None) -> PipelineConfig:
    merged: dict = {}
    if file_path:
        merged.update(parse_config_file(file_path))
    if overrides:
        merged.update(coerce_config_values({k: v for k, v in overrides.items() if v is not None}))
    return PipelineConfig(**merged)


def _dump_json(doc, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))


def read_events_file(path: str | Path, fmt: str = "jsonl", strict: bool = False):
    text = Path(path).read_text(errors="replace")
    if fmt == "procmon":
        return ingest.parse_procmon_csv(text, strict=strict)
    if fmt == "jsonl":
        return ingest.parse_canonical_jsonl(text, strict=strict)
    raise ValueError(f"unknown input format {fmt!r}")


# --- embedder persistence -------------------------------------------------

def save_embedder_config(cfg: PipelineConfig, path: Path) -> None:
    if cfg.embedding_table:
        doc = {
            "version": 1,
            "backend": "table",
            "path": str(Path(cfg.embedding_table).resolve()),
            "oov": cfg.oov,
            "hash_seed": cfg.seed + 1,
        }
    else:
        doc = {
            "version": 1,
            "backend": "hash",
            "dim": cfg.hash_dim,
            "seed": cfg.seed + 1,
        }
    _dump_json(doc, path)


def load_embedder(path: str | Path):
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported embedder config version: {doc.get('version')!r}")
    if doc["backend"] == "hash":
        return embed.FeatureHashEmbedder(dim=doc["dim"], seed=doc["seed"])
    if doc["backend"] == "table":
        table = embed.load_embedding_table(doc["path"], oov=doc["oov"])
        table._fallback = embed.FeatureHashEmbedder(table.dim, doc.get("hash_seed", 0))
        return table
    raise ValueError(f"unknown embedder backend {doc['backend']!r}")


def make_embedder(cfg: PipelineConfig):
    if cfg.embedding_table:
        table = embed.load_embedding_table(cfg.embedding_table, oov=cfg.oov)
        table._fallback = embed.FeatureHashEmbedder(table.dim, cfg.seed + 1)
        return table
    return embed.FeatureHashEmbedder(dim=cfg.hash_dim, seed=cfg.seed + 1)


# --- artifact formats -----------------------------------------------------

def vectors_document(seq_ids, matrix: np.ndarray) -> dict:
    return {
        "version": 1,
        "dim": int(matrix.shape[1]) if matrix.size else 0,
        "seq_ids": [int(s) for s in seq_ids],
        "vectors": [[float(v) for v in row] for row in matrix],
    }


def load_vectors_document(path: str | Path) -> tuple[list[int], np.ndarray]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"unsupported vectors artifact version: {doc.get('version')!r}")
    matrix = np.array(doc["vectors"], dtype=float)
    if matrix.size == 0:
        matrix = np.zeros((0, doc.get("dim", 0)))
    return [int(s) for s in doc["seq_ids"]], matrix


def tags_document(windows) -> dict:
    """windows: list of (EventSequence, TagSequence, tag names)."""
    return {
        "version": 1,
        "windows": [
            {
                "origin": seq.origin,
                "seq_ids": [e.seq_id for e in seq.events],
                "tags": list(names),
                "score": ts.score,
            }
            for seq, ts, names in windows
        ],
    }


def ranking_document(ranking) -> list[dict]:
    return [
        {
            "campaign": name,
            "raw": res.raw,
            "normalized": res.normalized,
            "expanded_states": res.expanded_states,
            "exact": res.exact,
        }
        for name, res in ranking
    ]


def load_campaign_corpus(cfg: PipelineConfig, label_set: tagger.LabelSet | None = None):
    if cfg.campaign_dir:
        paths = sorted(Path(cfg.campaign_dir).glob("*.json"))
        if not paths:
            raise FileNotFoundError(f"no campaign definitions in {cfg.campaign_dir}")
        return [graph.load_campaign_file(p, label_set) for p in paths]
    corpus_dir = resources.files("apthunt.data.campaigns")
    return [
        graph.load_campaign_graph(p.read_text(), label_set)
        for p in sorted(corpus_dir.iterdir(), key=lambda p: p.name)
        if p.name.endswith(".json")
    ]


# --- model fitting --------------------------------------------------------

@dataclass
class FittedModels:
    embedder: object
    ocsvm: anomaly.OcSvmModel
    pca: embed.PcaModel | None
    tagger_model: tagger.BiGruCrfModel


def _feature_transform(cfg: PipelineConfig, pca: embed.PcaModel | None):
    if cfg.tagger_features == "raw" or pca is None:
        return lambda m: m
    return lambda m: embed.pca_transform(pca, m)


def fit_models(cfg: PipelineConfig, train_event_lists) -> FittedModels:
    """Fit the whole cascade from labeled training event streams."""
    label_set = evalkit.default_label_set()
    embedder = make_embedder(cfg)
    matrices = [embed.embed_events(embedder, ev) for ev in train_event_lists]

    benign_rows = [
        m[np.array([e.label in (None, "O") for e in ev], dtype=bool)]
        for ev, m in zip(train_event_lists, matrices)
    ]
    benign = np.vstack([b for b in benign_rows if b.size]) if benign_rows else np.zeros((0, 1))
    if benign.shape[0] < 2:
        raise ValueError("training data contains fewer than 2 benign events")
    rng = np.random.default_rng(cfg.seed + 2)
    if benign.shape[0] > cfg.ocsvm_max_train:
        benign = benign[rng.choice(benign.shape[0], size=cfg.ocsvm_max_train, replace=False)]
    if cfg.gamma_mode == "fixed":
        gamma = cfg.gamma
    else:
        gamma = anomaly.rbf_gamma(benign, cfg.gamma_mode)
    oc = anomaly.ocsvm_fit(
        benign, nu=cfg.nu, gamma=gamma, tol=cfg.ocsvm_tol, max_iter=cfg.ocsvm_max_iter
    )

    keeps = [
        np.asarray(anomaly.ocsvm_decision(oc, m)) <= cfg.filter_threshold if m.size else np.zeros(0, bool)
        for m in matrices
    ]
    pca_model: embed.PcaModel | None = None
    if cfg.tagger_features == "pca":
        if cfg.pca_fit_on == "filtered" and cfg.tag_suspicious_only:
            fit_rows = np.vstack([m[k] for m, k in zip(matrices, keeps) if m[k].size])
        else:
            fit_rows = np.vstack([m for m in matrices if m.size])
        pca_model = embed.pca_fit(fit_rows, min(cfg.pca_k, fit_rows.shape[1], fit_rows.shape[0]))
    transform = _feature_transform(cfg, pca_model)

    dataset = []
    for ev, m, keep in zip(train_event_lists, matrices, keeps):
        if cfg.tag_suspicious_only:
            rows = [e for e, k in zip(ev, keep) if k]
            feats = transform(m[keep]) if rows else np.zeros((0, 1))
        else:
            rows = list(ev)
            feats = transform(m) if rows else np.zeros((0, 1))
        row_index = {e.seq_id: i for i, e in enumerate(rows)}
        for seq in ingest.sessionize(rows, cfg.max_window, per_pid=cfg.per_pid):
            gold = [label_set.tag_index(e.label or "O") for e in seq.events]
            dataset.append((feats[[row_index[e.seq_id] for e in seq.events]], gold))
    if not dataset:
        raise ValueError("no training windows after filtering")
    model = tagger.train(
        dataset,
        tagger.TrainConfig(
            hidden=cfg.hidden, lr=cfg.lr, epochs=cfg.epochs, batch=cfg.batch,
            seed=cfg.seed + 3, clip=cfg.clip,
        ),
        label_set,
    )
    return FittedModels(embedder=embedder, ocsvm=oc, pca=pca_model, tagger_model=model)


def save_models(cfg: PipelineConfig, models: FittedModels, model_dir: Path) -> None:
    model_dir.mkdir(parents=True, exist_ok=True)
    save_embedder_config(cfg, model_dir / "embedder.json")
    anomaly.save_ocsvm(models.ocsvm, model_dir / "ocsvm.json")
    if models.pca is not None:
        embed.save_pca(models.pca, model_dir / "pca.json")
    tagger.save_model(models.tagger_model, model_dir / "tagger.json")


def load_models(cfg: PipelineConfig, model_dir: Path) -> FittedModels:
    for name in ("embedder.json", "ocsvm.json", "tagger.json"):
        if not (model_dir / name).exists():
            raise FileNotFoundError(f"missing model file: {model_dir / name}")
    pca_path = model_dir / "pca.json"
    pca_model = None
    if cfg.tagger_features == "pca":
        if not pca_path.exists():
            raise FileNotFoundError(f"missing model file: {pca_path}")
        pca_model = embed.load_pca(pca_path)
    return FittedModels(
        embedder=load_embedder(model_dir / "embedder.json"),
        ocsvm=anomaly.load_ocsvm(model_dir / "ocsvm.json"),
        pca=pca_model,
        tagger_model=tagger.load_model(model_dir / "tagger.json"),
    )


# --- inference ------------------------------------------------------------

def tag_event_stream(cfg: PipelineConfig, models: FittedModels, events):
    """Filter, window and tag one event stream.

    Returns (windows, pred_tag_by_seq_id) where windows is a list of
    (EventSequence, TagSequence, tag names) and the mapping holds the
    predicted tag name for every tagged event.
    """
    label_set = models.tagger_model.label_set
    matrix = embed.embed_events(models.embedder, events)
    transform = _feature_transform(cfg, models.pca)
    if cfg.tag_suspicious_only and len(events):
        decisions = np.asarray(anomaly.ocsvm_decision(models.ocsvm, matrix))
        keep = decisions <= cfg.filter_threshold
        rows = [e for e, k in zip(events, keep) if k]
        feats = transform(matrix[keep]) if rows else np.zeros((0, 1))
    else:
        rows = list(events)
        feats = transform(matrix) if rows else np.zeros((0, 1))
    windows = []
    pred_by_seq: dict[int, str] = {}
    row_index = {e.seq_id: i for i, e in enumerate(rows)}
    sequences = ingest.sessionize(rows, cfg.max_window, per_pid=cfg.per_pid)
    for seq in sequences:
        feat = feats[[row_index[e.seq_id] for e in seq.events]]
        ts = tagger.tag(models.tagger_model, feat, bio2_mask=cfg.viterbi_mask)
        names = ts.names(label_set)
        windows.append((seq, ts, names))
        for e, name in zip(seq.events, names):
            pred_by_seq[e.seq_id] = name
    return windows, pred_by_seq


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute the full cascade; returns the report (also written to disk)."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_dir = Path(cfg.model_dir) if cfg.model_dir else out_dir / "models"

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:
            raise PipelineStageError(name, exc) from exc

    if not cfg.input:
        raise PipelineStageError("ingest", ValueError("no input file configured"))
    events = stage(
        "ingest", read_events_file, cfg.input, cfg.input_format, cfg.strict_parse
    )
    stage("ingest", lambda: Path(out_dir / "events.jsonl").write_text(
        ingest.write_canonical_jsonl(events)
    ))

    if cfg.train_events:
        train_lists = [
            stage("ingest", read_events_file, p.strip(), "jsonl", cfg.strict_parse)
            for p in cfg.train_events.split(",")
            if p.strip()
        ]
        models = stage("fit", fit_models, cfg, train_lists)
        stage("fit", save_models, cfg, models, model_dir)
    else:
        models = stage("load-models", load_models, cfg, model_dir)
    label_set = models.tagger_model.label_set

    windows, pred_by_seq = stage("tag", tag_event_stream, cfg, models, events)
    _dump_json(tags_document(windows), out_dir / "tags.json")

    instances = []
    for seq, ts, _ in windows:
        instances.extend(stage("graph", graph.spans_from_tags, ts, seq, label_set))
    gq = stage(
        "graph", graph.build_ability_graph, instances, cfg.transitive_reduction
    )
    _dump_json(graph.graph_to_document(gq), out_dir / "graph.json")

    corpus = stage("match", load_campaign_corpus, cfg, label_set)
    ranking = stage("match", matcher.rank_campaigns, gq, corpus, None, cfg.ged_budget)
    _dump_json(ranking_document(ranking), out_dir / "ranking.json")

    metrics = None
    if any(e.label is not None for e in events):
        pred = [pred_by_seq.get(e.seq_id, "O") for e in events]
        gold = [e.label or "O" for e in events]
        metrics = stage("eval", evalkit.macro_prf, pred, gold, label_set).to_document()

    report = {
        "version": 1,
        "no_abilities_detected": not instances,
        "detected_abilities": [
            {
                "ability": inst.ability,
                "span": list(inst.span),
                "entities": sorted(inst.entities),
                "t_start": inst.t_start,
                "t_end": inst.t_end,
            }
            for inst in instances
        ],
        "ability_graph": graph.graph_to_document(gq),
        "ranking": ranking_document(ranking),
        "metrics": metrics,
    }
    _dump_json(report, out_dir / "report.json")
    return report
