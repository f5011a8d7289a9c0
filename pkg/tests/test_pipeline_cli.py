import json
from pathlib import Path

import pytest

from apthunt import pipeline
from apthunt.cli import main
from apthunt.ingest import parse_canonical_jsonl


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny trained pipeline: fast, deterministic, not tuned for accuracy."""
    root = tmp_path_factory.mktemp("cli")
    assert main([
        "gen", "--campaign", "cobaltgroup", "--benign", "400", "--rate", "0.08",
        "--seed", "5", "--output", str(root / "train.jsonl"),
    ]) == 0
    assert main([
        "gen", "--campaign", "cobaltgroup", "--benign", "300", "--rate", "0.05",
        "--seed", "6", "--output", str(root / "input.jsonl"),
        "--graph-out", str(root / "truth.json"),
    ]) == 0
    cfg = pipeline.PipelineConfig(
        input=str(root / "input.jsonl"),
        train_events=str(root / "train.jsonl"),
        output_dir=str(root / "out"),
        hidden=8, epochs=2, pca_k=16, max_window=64, seed=3,
    )
    report = pipeline.run_pipeline(cfg)
    return root, cfg, report


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "cfg"
    path.write_text(
        "# comment line\n"
        "epochs = 5\n"
        "nu=0.25\n"
        "tag_suspicious_only = false\n"
        "input = x.jsonl  # trailing comment\n"
    )
    cfg = pipeline.build_config(str(path), {"epochs": "7", "hidden": None})
    assert cfg.epochs == 7
    assert cfg.nu == 0.25
    assert cfg.tag_suspicious_only is False
    assert cfg.input == "x.jsonl"
    assert cfg.hidden == 64  # untouched default


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "cfg"
    path.write_text("no_such_option = 1\n")
    with pytest.raises(ValueError):
        pipeline.parse_config_file(path)


def test_config_rejects_bad_bool(tmp_path):
    path = tmp_path / "cfg"
    path.write_text("per_pid = maybe\n")
    with pytest.raises(ValueError):
        pipeline.parse_config_file(path)


def test_gen_then_self_eval_is_perfect(tmp_path, capsys):
    events = tmp_path / "gold.jsonl"
    assert main(["gen", "--campaign", "higaisa", "--benign", "200", "--rate", "0.05",
                 "--seed", "1", "--output", str(events)]) == 0
    capsys.readouterr()
    assert main(["eval", "--pred", str(events), "--gold", str(events)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["macro"] == {"precision": 1.0, "recall": 1.0, "f1": 1.0}


def test_gen_adhoc_ability_chain(tmp_path):
    out = tmp_path / "mix.jsonl"
    assert main(["gen", "--abilities", "PA,RK,WP", "--benign", "50", "--rate", "0.2",
                 "--seed", "2", "--output", str(out),
                 "--graph-out", str(tmp_path / "g.json")]) == 0
    doc = json.loads((tmp_path / "g.json").read_text())
    assert [n["ability"] for n in doc["nodes"]] == ["PA", "RK", "WP"]


def test_ingest_procmon_to_jsonl(tmp_path, capsys):
    csv = tmp_path / "log.csv"
    csv.write_text(
        '"Time of Day","Process Name","PID","Operation","Path","Result"\n'
        '"4:10:21.1000000","groupagent.exe","5216","RegOpenKey","HKLM\\X","SUCCESS"\n'
    )
    out = tmp_path / "events.jsonl"
    assert main(["ingest", "--input", str(csv), "--format", "procmon",
                 "--output", str(out)]) == 0
    (event,) = parse_canonical_jsonl(out.read_text())
    assert event.subject == "groupagent.exe"
    assert event.subject_pid == 5216


def test_match_builtin_corpus_self_query(tmp_path, capsys):
    from importlib import resources

    query = resources.files("apthunt.data.campaigns").joinpath("higaisa.json")
    out = tmp_path / "ranking.json"
    assert main(["match", "--query", str(query), "--output", str(out)]) == 0
    ranking = json.loads(out.read_text())
    assert len(ranking) == 5
    assert ranking[0]["campaign"] == "Higaisa"
    assert ranking[0]["normalized"] == 0.0
    assert all(r["exact"] for r in ranking)


def test_pipeline_report_written(workdir):
    root, cfg, report = workdir
    out = Path(cfg.output_dir)
    for name in ("events.jsonl", "tags.json", "graph.json", "ranking.json", "report.json"):
        assert (out / name).exists()
    assert json.loads((out / "report.json").read_text()) == report
    assert len(report["ranking"]) == 5
    assert report["metrics"] is not None  # input carried gold labels


def test_pipeline_reruns_byte_identical(workdir, tmp_path):
    root, cfg, _ = workdir
    import dataclasses

    cfg_b = dataclasses.replace(cfg, output_dir=str(tmp_path / "again"))
    pipeline.run_pipeline(cfg_b)
    a = (Path(cfg.output_dir) / "report.json").read_bytes()
    b = (tmp_path / "again" / "report.json").read_bytes()
    assert a == b


def test_pipeline_inference_mode_reuses_models(workdir, tmp_path):
    root, cfg, report = workdir
    import dataclasses

    cfg_inf = dataclasses.replace(
        cfg, train_events="", model_dir=str(Path(cfg.output_dir) / "models"),
        output_dir=str(tmp_path / "inf"),
    )
    report_inf = pipeline.run_pipeline(cfg_inf)
    assert report_inf["ranking"] == report["ranking"]
    assert report_inf["ability_graph"] == report["ability_graph"]


def test_pipeline_missing_model_errors_with_path(workdir, tmp_path):
    root, cfg, _ = workdir
    import dataclasses

    cfg_bad = dataclasses.replace(
        cfg, train_events="", model_dir=str(tmp_path / "nowhere"),
        output_dir=str(tmp_path / "outx"),
    )
    with pytest.raises(pipeline.PipelineStageError) as exc:
        pipeline.run_pipeline(cfg_bad)
    assert exc.value.stage == "load-models"
    assert "nowhere" in str(exc.value)


def test_cli_run_missing_model_exit_code(workdir, tmp_path, capsys):
    root, cfg, _ = workdir
    code = main([
        "run", "--input", str(root / "input.jsonl"),
        "--model-dir", str(tmp_path / "missing-models"),
        "--output-dir", str(tmp_path / "outy"),
    ])
    assert code == 1
    err = capsys.readouterr().err
    assert "missing-models" in err


def test_pipeline_benign_only_input(workdir, tmp_path):
    root, cfg, _ = workdir
    benign = tmp_path / "benign.jsonl"
    events = parse_canonical_jsonl((root / "input.jsonl").read_text())
    from apthunt.ingest import write_canonical_jsonl

    benign.write_text(write_canonical_jsonl(e for e in events if e.label == "O"))
    import dataclasses

    cfg_b = dataclasses.replace(
        cfg, input=str(benign), train_events="",
        model_dir=str(Path(cfg.output_dir) / "models"),
        output_dir=str(tmp_path / "benign-out"),
    )
    report = pipeline.run_pipeline(cfg_b)
    assert report["no_abilities_detected"] in (True, False)
    if report["no_abilities_detected"]:
        assert report["detected_abilities"] == []
        assert all(r["normalized"] > 0 for r in report["ranking"])


def test_subcommand_decomposition_matches_pipeline(workdir, tmp_path):
    """ingest -> embed -> filter -> embed(pca) -> tag -> build-graph -> match
    reproduces the monolithic artifacts byte for byte."""
    root, cfg, _ = workdir
    models = Path(cfg.output_dir) / "models"
    d = tmp_path / "steps"
    d.mkdir()
    steps = [
        ["embed", "--events", str(root / "input.jsonl"),
         "--embedder", str(models / "embedder.json"), "--output", str(d / "raw.json")],
        ["filter", "--model", str(models / "ocsvm.json"),
         "--events", str(root / "input.jsonl"), "--vectors", str(d / "raw.json"),
         "--output", str(d / "filtered.jsonl")],
        ["embed", "--events", str(d / "filtered.jsonl"),
         "--embedder", str(models / "embedder.json"), "--pca", str(models / "pca.json"),
         "--output", str(d / "feats.json")],
        ["tag", "--model", str(models / "tagger.json"),
         "--events", str(d / "filtered.jsonl"), "--vectors", str(d / "feats.json"),
         "--max-window", "64", "--output", str(d / "tags.json")],
        ["build-graph", "--tags", str(d / "tags.json"),
         "--events", str(d / "filtered.jsonl"), "--output", str(d / "graph.json")],
        ["match", "--query", str(d / "graph.json"), "--output", str(d / "ranking.json")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    out = Path(cfg.output_dir)
    for name in ("tags.json", "graph.json", "ranking.json"):
        assert (d / name).read_bytes() == (out / name).read_bytes(), name


def test_cli_eval_accepts_tags_artifact(workdir, capsys):
    root, cfg, _ = workdir
    out = Path(cfg.output_dir)
    assert main(["eval", "--pred", str(out / "tags.json"),
                 "--gold", str(root / "input.jsonl"), "--table"]) == 0
    table = capsys.readouterr().out
    assert "Avg." in table
