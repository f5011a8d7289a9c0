"""Command-line interface: each cascade stage plus the end-to-end runner.

Subcommands exchange versioned JSON artifacts, so any pipeline run can be
decomposed into single-stage invocations with identical outputs:

    apthunt gen --campaign higaisa --benign 2000 --rate 0.02 --seed 1 \
        --output train.jsonl
    apthunt run --input scenario.jsonl --train-events train.jsonl \
        --output-dir out/
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, anomaly, embed, evalkit, graph, ingest, matcher, pipeline, tagger


def _write_text(path: str, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def _write_json(path: str, doc) -> None:
    _write_text(path, json.dumps(doc, sort_keys=True))


def _load_events(path: str, fmt: str = "jsonl", strict: bool = False):
    return pipeline.read_events_file(path, fmt, strict)


def cmd_ingest(args) -> int:
    warnings: list[str] = []
    text = Path(args.input).read_text(errors="replace")
    if args.format == "procmon":
        events = ingest.parse_procmon_csv(text, strict=args.strict, warnings=warnings)
    else:
        events = ingest.parse_canonical_jsonl(text, strict=args.strict, warnings=warnings)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    _write_text(args.output, ingest.write_canonical_jsonl(events))
    print(f"{len(events)} events -> {args.output}")
    return 0


def cmd_gen(args) -> int:
    if not args.abilities and not args.campaign:
        raise ValueError("gen needs --campaign or --abilities")
    if args.abilities:
        labels = tuple(a.strip() for a in args.abilities.split(",") if a.strip())
        campaign = graph.AbilityGraph(
            kind="campaign",
            node_labels=labels,
            edges=frozenset((i, i + 1) for i in range(len(labels) - 1)),
            stages=tuple(1 for _ in labels),
            name=args.name or "adhoc",
        )
    elif Path(args.campaign).exists():
        campaign = graph.load_campaign_file(args.campaign)
    else:
        builtin = resources.files("apthunt.data.campaigns").joinpath(f"{args.campaign}.json")
        if not builtin.is_file():
            raise FileNotFoundError(f"campaign not found: {args.campaign}")
        campaign = graph.load_campaign_graph(builtin.read_text())
    spec = evalkit.ScenarioSpec(
        campaign=campaign,
        benign_event_count=args.benign,
        malicious_rate=args.rate,
        seed=args.seed,
    )
    events, truth = evalkit.generate_scenario(spec)
    _write_text(args.output, ingest.write_canonical_jsonl(events))
    if args.graph_out:
        graph.save_campaign_graph(truth, args.graph_out)
    malicious = sum(1 for e in events if e.label not in (None, "O"))
    print(f"{len(events)} events ({malicious} malicious) -> {args.output}")
    return 0


def _embedder_from_args(args):
    if args.embedder:
        return pipeline.load_embedder(args.embedder)
    if args.table:
        emb = embed.load_embedding_table(args.table, oov=args.oov)
        emb._fallback = embed.FeatureHashEmbedder(emb.dim, args.seed)
        return emb
    return embed.FeatureHashEmbedder(dim=args.hash_dim, seed=args.seed)


def cmd_embed(args) -> int:
    events = _load_events(args.events)
    embedder = _embedder_from_args(args)
    matrix = embed.embed_events(embedder, events)
    if args.fit_pca:
        model = embed.pca_fit(matrix, min(args.k, matrix.shape[1], matrix.shape[0]))
        embed.save_pca(model, args.fit_pca)
        matrix = embed.pca_transform(model, matrix)
    elif args.pca:
        model = embed.load_pca(args.pca)
        matrix = embed.pca_transform(model, matrix)
    if args.save_embedder:
        cfg = pipeline.PipelineConfig(
            embedding_table=args.table or "", oov=args.oov,
            hash_dim=args.hash_dim, seed=args.seed - 1,
        )
        pipeline.save_embedder_config(cfg, Path(args.save_embedder))
    _write_json(args.output, pipeline.vectors_document([e.seq_id for e in events], matrix))
    print(f"{matrix.shape[0]} vectors (dim {matrix.shape[1] if matrix.size else 0}) -> {args.output}")
    return 0


def cmd_fit_ocsvm(args) -> int:
    events = _load_events(args.events)
    seq_ids, matrix = pipeline.load_vectors_document(args.vectors)
    if len(events) != len(seq_ids):
        raise ValueError("events and vectors artifacts are misaligned")
    benign = np.array([e.label in (None, "O") for e in events], dtype=bool)
    rows = matrix[benign]
    rng = np.random.default_rng(args.seed)
    if rows.shape[0] > args.max_train:
        rows = rows[rng.choice(rows.shape[0], size=args.max_train, replace=False)]
    gamma = args.gamma if args.gamma_mode == "fixed" else anomaly.rbf_gamma(rows, args.gamma_mode)
    model = anomaly.ocsvm_fit(rows, nu=args.nu, gamma=gamma, tol=args.tol, max_iter=args.max_iter)
    anomaly.save_ocsvm(model, args.output)
    if not model.converged:
        print("warning: solver did not converge, best iterate kept", file=sys.stderr)
    print(f"{len(model.alphas)} support vectors -> {args.output}")
    return 0


def cmd_filter(args) -> int:
    events = _load_events(args.events)
    seq_ids, matrix = pipeline.load_vectors_document(args.vectors)
    if len(events) != len(seq_ids):
        raise ValueError("events and vectors artifacts are misaligned")
    model = anomaly.load_ocsvm(args.model)
    seq = ingest.EventSequence(events=tuple(events), origin=args.events)
    kept = anomaly.filter_events(model, seq, matrix, threshold=args.threshold)
    _write_text(args.output, ingest.write_canonical_jsonl(kept.events))
    print(f"kept {len(kept)} of {len(events)} events -> {args.output}")
    return 0


def cmd_train_tagger(args) -> int:
    label_set = evalkit.default_label_set()
    dataset = []
    for events_path, vectors_path in zip(args.events, args.vectors):
        events = _load_events(events_path)
        seq_ids, matrix = pipeline.load_vectors_document(vectors_path)
        if len(events) != len(seq_ids):
            raise ValueError(f"misaligned artifacts: {events_path} / {vectors_path}")
        row_index = {s: i for i, s in enumerate(seq_ids)}
        for seq in ingest.sessionize(events, args.max_window):
            gold = [label_set.tag_index(e.label or "O") for e in seq.events]
            dataset.append((matrix[[row_index[e.seq_id] for e in seq.events]], gold))
    hyper = tagger.TrainConfig(
        hidden=args.hidden, lr=args.lr, epochs=args.epochs,
        batch=args.batch, seed=args.seed, clip=args.clip,
    )
    model = tagger.train(dataset, hyper, label_set)
    tagger.save_model(model, args.output)
    loss = model.history["loss"]
    print(
        f"trained on {len(dataset)} windows; "
        f"loss {loss[0]:.4f} -> {loss[-1]:.4f} -> {args.output}"
        if loss else f"initialized (epochs=0) -> {args.output}"
    )
    return 0


def cmd_tag(args) -> int:
    events = _load_events(args.events)
    seq_ids, matrix = pipeline.load_vectors_document(args.vectors)
    if len(events) != len(seq_ids):
        raise ValueError("events and vectors artifacts are misaligned")
    model = tagger.load_model(args.model)
    row_index = {s: i for i, s in enumerate(seq_ids)}
    windows = []
    for seq in ingest.sessionize(events, args.max_window):
        feat = matrix[[row_index[e.seq_id] for e in seq.events]]
        ts = tagger.tag(model, feat, bio2_mask=args.viterbi_mask)
        windows.append((seq, ts, ts.names(model.label_set)))
    _write_json(args.output, pipeline.tags_document(windows))
    print(f"tagged {sum(len(s) for s, _, _ in windows)} events in {len(windows)} windows -> {args.output}")
    return 0


def cmd_build_graph(args) -> int:
    events = _load_events(args.events)
    by_seq = {e.seq_id: e for e in events}
    doc = json.loads(Path(args.tags).read_text())
    if doc.get("version") != 1:
        raise ValueError("unsupported tags artifact version")
    label_set = evalkit.default_label_set()
    instances = []
    for window in doc["windows"]:
        seq = ingest.EventSequence(
            events=tuple(by_seq[s] for s in window["seq_ids"]),
            origin=window.get("origin", ""),
        )
        ts = tagger.TagSequence(
            tags=tuple(label_set.tag_index(t) for t in window["tags"]),
            score=float(window.get("score", 0.0)),
        )
        instances.extend(graph.spans_from_tags(ts, seq, label_set))
    gq = graph.build_ability_graph(instances, transitive_reduction=not args.no_reduce)
    _write_json(args.output, graph.graph_to_document(gq))
    print(f"{gq.n_nodes} nodes, {gq.n_edges} edges -> {args.output}")
    return 0


def cmd_match(args) -> int:
    doc = json.loads(Path(args.query).read_text())
    gq = graph.load_query_graph(doc)
    cfg = pipeline.PipelineConfig(campaign_dir=args.corpus or "")
    corpus = pipeline.load_campaign_corpus(cfg)
    ranking = matcher.rank_campaigns(gq, corpus, budget=args.budget)
    out = pipeline.ranking_document(ranking)
    if args.output:
        _write_json(args.output, out)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _tags_from_artifact(path: str, n_events: int, events) -> list[str]:
    """Flatten a tags artifact (or labeled JSONL) into one tag per event."""
    if path.endswith(".jsonl"):
        labeled = _load_events(path)
        return [e.label or "O" for e in labeled]
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError("unsupported tags artifact version")
    by_seq = {}
    for window in doc["windows"]:
        for s, t in zip(window["seq_ids"], window["tags"]):
            by_seq[s] = t
    return [by_seq.get(e.seq_id, "O") for e in events]


def cmd_eval(args) -> int:
    gold_events = _load_events(args.gold)
    gold = [e.label or "O" for e in gold_events]
    pred = _tags_from_artifact(args.pred, len(gold_events), gold_events)
    label_set = evalkit.default_label_set()
    report = evalkit.macro_prf(pred, gold, label_set)
    doc = report.to_document()
    if args.output:
        _write_json(args.output, doc)
    if args.table:
        print(evalkit.format_report_table({args.name: report}))
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_run(args) -> int:
    overrides = {
        key: getattr(args, key)
        for key in pipeline.PipelineConfig.__dataclass_fields__
        if hasattr(args, key)
    }
    cfg = pipeline.build_config(args.config, overrides)
    report = pipeline.run_pipeline(cfg)
    ranking = report["ranking"]
    print(f"report -> {Path(cfg.output_dir) / 'report.json'}")
    if report["no_abilities_detected"]:
        print("no abilities detected")
    for row in ranking[:3]:
        print(f"  {row['campaign']}: {row['normalized']:.4f}")
    if report["metrics"]:
        m = report["metrics"]["macro"]
        print(f"  macro P={m['precision']:.4f} R={m['recall']:.4f} F1={m['f1']:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apthunt",
        description="Attack-pattern detection and APT campaign attribution over audit logs",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw log into canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("procmon", "jsonl"), default="procmon")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("gen", help="generate a labeled synthetic scenario")
    p.add_argument("--campaign", default="", help="campaign file or builtin name")
    p.add_argument("--abilities", default="", help="ad-hoc ability chain, comma-separated")
    p.add_argument("--name", default="", help="name for an ad-hoc chain")
    p.add_argument("--benign", type=int, default=10000)
    p.add_argument("--rate", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.add_argument("--graph-out", default="")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("embed", help="embed events into feature vectors")
    p.add_argument("--events", required=True)
    p.add_argument("--embedder", default="", help="saved embedder config")
    p.add_argument("--table", default="", help="token embedding table file")
    p.add_argument("--oov", choices=("zero", "hash", "error"), default="hash")
    p.add_argument("--hash-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=8)
    p.add_argument("--pca", default="", help="apply an existing PCA model")
    p.add_argument("--fit-pca", default="", help="fit PCA on these events and save here")
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--save-embedder", default="")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_embed)

    p = sub.add_parser("fit-ocsvm", help="train the benign-region anomaly model")
    p.add_argument("--events", required=True, help="labeled events (benign rows used)")
    p.add_argument("--vectors", required=True)
    p.add_argument("--nu", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--gamma-mode", choices=("fixed", "dim", "median"), default="fixed")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=100000)
    p.add_argument("--max-train", type=int, default=2000)
    p.add_argument("--seed", type=int, default=9)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_fit_ocsvm)

    p = sub.add_parser("filter", help="keep suspicious events only")
    p.add_argument("--model", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("train-tagger", help="train the BiGRU-CRF on labeled windows")
    p.add_argument("--events", action="append", required=True)
    p.add_argument("--vectors", action="append", required=True)
    p.add_argument("--max-window", type=int, default=256)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=10)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_train_tagger)

    p = sub.add_parser("tag", help="label an event stream with the trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--max-window", type=int, default=256)
    p.add_argument("--viterbi-mask", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_tag)

    p = sub.add_parser("build-graph", help="assemble the detected-ability graph")
    p.add_argument("--tags", required=True)
    p.add_argument("--events", required=True)
    p.add_argument("--no-reduce", action="store_true")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_build_graph)

    p = sub.add_parser("match", help="rank campaigns by normalized edit distance")
    p.add_argument("--query", required=True)
    p.add_argument("--corpus", default="", help="directory of campaign JSON files")
    p.add_argument("--budget", type=int, default=1_000_000)
    p.add_argument("--output", default="")
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("eval", help="macro P/R/F1 of predictions against gold labels")
    p.add_argument("--pred", required=True, help="tags artifact or labeled JSONL")
    p.add_argument("--gold", required=True, help="labeled JSONL")
    p.add_argument("--table", action="store_true", help="print an aligned text table")
    p.add_argument("--name", default="scenario")
    p.add_argument("--output", default="")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="run the full cascade")
    p.add_argument("--config", default="", help="flat key=value config file")
    for f in pipeline.PipelineConfig.__dataclass_fields__.values():
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool":
            p.add_argument(flag, default=None, choices=("true", "false"))
        else:
            p.add_argument(flag, default=None)
    p.set_defaults(fn=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except pipeline.PipelineStageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, ingest.IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
