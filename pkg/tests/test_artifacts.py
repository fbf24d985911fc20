import hashlib

import pytest

from matcher.artifacts import (
    Workdir, atomic_write, dumps_json, dumps_scores, file_hash, load_manifest, load_scores,
    write_manifest
)
from matcher.database import RunLedger, ledger_url
from shared.errors import ArtifactError
from shared.schemas import MatchScore, RunManifest, ScoringMethod


def test_atomic_write_returns_hash_and_leaves_no_temp(tmp_path):
    target = tmp_path / "nested" / "out.json"
    sha = atomic_write(target, "hello\n")
    assert target.read_text() == "hello\n"
    assert sha == hashlib.sha256(b"hello\n").hexdigest()
    assert [p.name for p in target.parent.iterdir()] == ["out.json"]


def test_dumps_json_is_canonical():
    assert dumps_json({"b": 1, "a": [1, 2]}) == dumps_json({"a": [1, 2], "b": 1})
    assert dumps_json({}).endswith("\n")


def test_file_hash_of_missing_artifact(tmp_path):
    with pytest.raises(ArtifactError):
        file_hash(tmp_path / "index" / "P1.json")


def test_workdir_layout(tmp_path):
    wd = Workdir(tmp_path)
    assert wd.chunks_file == tmp_path / "corpus" / "chunks.jsonl"
    assert wd.index_file("P1") == tmp_path / "index" / "P1.json"
    assert wd.pair_file("r1", "P1", "T1") == tmp_path / "runs" / "r1" / "pairs" / "P1__T1.json"
    assert wd.trial_files() == []


def test_scores_csv_is_sorted_and_loads_back(tmp_path):
    scores = [
        MatchScore(patient_id="P2", trial_id="T1", method=ScoringMethod.SIMPLE, score=0.5),
        MatchScore(patient_id="P1", trial_id="T2", method=ScoringMethod.WEIGHTED_TIER, score=-0.25),
        MatchScore(patient_id="P1", trial_id="T2", method=ScoringMethod.ITERATIVE_TIER, score=1.0),
    ]
    text = dumps_scores(scores)
    assert text.splitlines() == [
        "patient_id,trial_id,method,score",
        "P1,T2,IterativeTier,1.0",
        "P1,T2,WeightedTier,-0.25",
        "P2,T1,Simple,0.5",
    ]
    path = tmp_path / "scores.csv"
    path.write_text(text)
    assert sorted(load_scores(path), key=lambda s: s.score) == sorted(scores, key=lambda s: s.score)


def test_load_scores_errors(tmp_path):
    with pytest.raises(ArtifactError):
        load_scores(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("patient,trial\nP1,T1\n")
    with pytest.raises(ArtifactError):
        load_scores(bad)
    bad.write_text("patient_id,trial_id,method,score\nP1,T1,Fancy,1.0\n")
    with pytest.raises(ArtifactError):
        load_scores(bad)


def test_manifest(tmp_path):
    assert load_manifest(tmp_path) is None
    manifest = RunManifest(run_id="r1", config={"k": 1}, prompt_version="v1",
                           incomplete_pairs=["P1__T1"])
    write_manifest(tmp_path, manifest)
    assert load_manifest(tmp_path) == manifest


class TestRunLedger:
    @pytest.fixture
    def ledger(self, tmp_path):
        ledger = RunLedger(f"sqlite:///{tmp_path / 'db' / 'runs.db'}")
        yield ledger
        ledger.close()

    def test_default_url(self, tmp_path, monkeypatch):
        assert ledger_url(tmp_path) == f"sqlite:///{tmp_path.resolve() / 'runs.db'}"
        monkeypatch.setenv("RUN_LEDGER_URL", "sqlite:///:memory:")
        assert ledger_url(tmp_path) == "sqlite:///:memory:"

    def test_run_lifecycle(self, ledger):
        ledger.start_run("r1", "2026-01-01T00:00:00+00:00", {"run_id": "r1"})
        assert ledger.get_run("r1").status == "RUNNING"
        ledger.finish_run("r1", "PARTIAL", "2026-01-01T01:00:00+00:00", {"run_id": "r1", "done": True})
        run = ledger.get_run("r1")
        assert run.status == "PARTIAL"
        assert run.manifest["done"] is True
        assert ledger.get_run("nope") is None

    def test_restart_keeps_one_row(self, ledger):
        ledger.start_run("r1", "2026-01-01T00:00:00+00:00", {})
        ledger.finish_run("r1", "PARTIAL", "2026-01-01T01:00:00+00:00", {})
        ledger.start_run("r1", "2026-01-01T00:00:00+00:00", {"resumed": True})
        assert ledger.get_run("r1").status == "RUNNING"
        assert ledger.latest_run().id == "r1"

    def test_latest_run(self, ledger):
        assert ledger.latest_run() is None
        ledger.start_run("old", "2026-01-01T00:00:00+00:00", {})
        ledger.start_run("new", "2026-02-01T00:00:00+00:00", {})
        assert ledger.latest_run().id == "new"

    def test_pairs_are_upserted(self, ledger):
        ledger.start_run("r1", "2026-01-01T00:00:00+00:00", {})
        ledger.record_pair("r1", "P2", "T1", "COMPLETE")
        ledger.record_pair("r1", "P1", "T1", "INCOMPLETE", "timeout")
        ledger.record_pair("r1", "P1", "T1", "COMPLETE")
        pairs = ledger.pairs("r1")
        assert [(p.patient_id, p.status, p.error) for p in pairs] == [
            ("P1", "COMPLETE", None), ("P2", "COMPLETE", None)
        ]

    def test_in_memory(self):
        ledger = RunLedger("sqlite:///:memory:")
        try:
            ledger.start_run("r1", "2026-01-01T00:00:00+00:00", {})
            assert ledger.latest_run().id == "r1"
        finally:
            ledger.close()
