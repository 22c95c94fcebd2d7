"""Command-line interface: exit codes, config resolution, determinism."""

import filecmp
import json
from pathlib import Path

import pytest

from surtkit.cli import main


def run(*argv):
    return main(list(argv))


def test_simulate_writes_manifest_and_resolved_config(tmp_path):
    out = tmp_path / "data"
    rc = run("simulate", "--out", str(out), "--sessions", "2",
             "--frames-per-token", "2", "--seed", "3")
    assert rc == 0
    assert (out / "manifest.jsonl").exists()
    resolved = (out / "resolved_config.txt").read_text()
    assert "seed=3" in resolved
    assert "sessions=2" in resolved


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("simulate", "--out", str(out), "--sessions", "2",
                   "--frames-per-token", "2", "--seed", "7") == 0
    assert filecmp.cmp(a / "manifest.jsonl", b / "manifest.jsonl", shallow=False)


def test_simulate_refuses_nonempty_dir_without_force(tmp_path):
    out = tmp_path / "data"
    assert run("simulate", "--out", str(out), "--sessions", "1",
               "--frames-per-token", "2") == 0
    assert run("simulate", "--out", str(out), "--sessions", "1",
               "--frames-per-token", "2") == 1
    assert run("simulate", "--out", str(out), "--sessions", "1",
               "--frames-per-token", "2", "--force", "true") == 0


def test_unknown_config_key_rejected(tmp_path):
    assert run("simulate", "--out", str(tmp_path / "d"),
               "--set", "no_such_key=1") == 1


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("sessions=5\nseed=2\n")
    out = tmp_path / "data"
    # flag overrides file, file overrides default
    rc = run("simulate", "--config", str(cfg), "--out", str(out),
             "--sessions", "1", "--frames-per-token", "2")
    assert rc == 0
    resolved = (out / "resolved_config.txt").read_text()
    assert "sessions=1" in resolved
    assert "seed=2" in resolved


def test_missing_required_argument(tmp_path):
    assert run("simulate") == 1          # --out is required
    assert run("train", "--out", str(tmp_path / "m")) == 1   # --data required


def test_seed_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SURT_SEED", "99")
    out = tmp_path / "data"
    assert run("simulate", "--out", str(out), "--sessions", "1",
               "--frames-per-token", "2", "--seed", "3") == 0
    assert "seed=99" in (out / "resolved_config.txt").read_text()


def test_gradcheck_passes():
    assert run("gradcheck", "--instances", "2", "--seed", "0") == 0


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> short train -> decode -> score, all through the CLI."""
    root = tmp_path_factory.mktemp("pipe")
    data = root / "data"
    assert run("simulate", "--out", str(data), "--sessions", "6",
               "--groups", "2", "--frames-per-token", "2", "--seed", "1") == 0
    model = root / "model"
    assert run("train", "--data", str(data / "manifest.jsonl"),
               "--out", str(model), "--strategy", "asr_only",
               "--epochs", "1", "--batch-size", "4",
               "--mask-hidden", "8", "--enc-hidden", "8", "--aux-hidden", "8",
               "--pred-hidden", "6", "--joint-hidden", "8") == 0
    dec = root / "dec"
    assert run("decode", "--data", str(data / "manifest.jsonl"),
               "--checkpoint", str(model / "model.ckpt"),
               "--out", str(dec), "--mode", "none") == 0
    return data, model, dec


def test_train_writes_checkpoint_and_log(pipeline):
    _, model, _ = pipeline
    assert (model / "model.ckpt").exists()
    assert (model / "model.ckpt.json").exists()
    log = (model / "train.log").read_text()
    assert "loss=" in log and "lr=" in log


def test_decode_writes_transcript(pipeline):
    data, _, dec = pipeline
    lines = (dec / "transcript.jsonl").read_text().splitlines()
    recs = [json.loads(l) for l in lines]
    sessions = {r["session"] for r in recs}
    assert len(sessions) == 6
    assert any(r.get("summary") for r in recs)


def test_score_runs_on_decoded_transcript(pipeline, capsys):
    data, _, dec = pipeline
    rc = run("score", "--ref", str(data / "manifest.jsonl"),
             "--hyp", str(dec / "transcript.jsonl"))
    assert rc == 0
    out = capsys.readouterr().out
    assert "orc_wer" in out and "cpwer" in out and "wder" in out


def test_decode_missing_checkpoint(tmp_path):
    d = tmp_path / "data"
    assert run("simulate", "--out", str(d), "--sessions", "1",
               "--frames-per-token", "2") == 0
    rc = run("decode", "--data", str(d / "manifest.jsonl"),
             "--checkpoint", str(tmp_path / "nope.ckpt"),
             "--out", str(tmp_path / "o"))
    assert rc == 2


def test_score_missing_transcript(tmp_path):
    d = tmp_path / "data"
    assert run("simulate", "--out", str(d), "--sessions", "1",
               "--frames-per-token", "2") == 0
    assert run("score", "--ref", str(d / "manifest.jsonl"),
               "--hyp", str(tmp_path / "nope.jsonl")) == 2
