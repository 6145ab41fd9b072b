import json
import os

import pytest

from phonmatch.cli import run


@pytest.fixture(scope="module")
def trained(tmp_path_factory, smoke_corpus):
    manifest = smoke_corpus[0]
    out = tmp_path_factory.mktemp("run")
    (out / "train.cfg").write_text("epochs=50\nval_fraction=0.0\nseed=0\n")
    assert run(["train", "--config", str(out / "train.cfg"), "--manifest", str(manifest), "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    return out, manifest, report


def test_missing_subcommand(capsys):
    assert run([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag(capsys):
    assert run(["report", "--nope"]) == 1
    assert "error" in capsys.readouterr().err


def test_missing_required(capsys):
    assert run(["infer", "--checkpoint", "x"]) == 1


def test_data_error_exit_code(tmp_path, capsys):
    assert run(["report", "--scores", str(tmp_path / "missing.csv")]) == 2


def test_bad_config_exit_code(tmp_path, smoke_corpus):
    (tmp_path / "bad.cfg").write_text("warmup=3\n")
    code = run(["train", "--config", str(tmp_path / "bad.cfg"), "--manifest", str(smoke_corpus[0]),
                "--out", str(tmp_path / "o")])
    assert code == 2


def test_config_printed_first(tmp_path, capsys):
    (tmp_path / "s.csv").write_text("trial_id,keyword,label,score,phoneme_distance\na,go,1,0.9,0.0\nb,no,0,0.1,0.5\n")
    assert run(["report", "--scores", str(tmp_path / "s.csv"), "--bins", "4"]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first.startswith("config ") and json.loads(first[7:])["bins"] == 4


def test_synth_data(tmp_path, capsys):
    (tmp_path / "kw.txt").write_text("go\nstop\n")
    assert run(["synth-data", "--keywords", str(tmp_path / "kw.txt"), "--per-keyword", "2", "--seed", "1",
                "--out", str(tmp_path / "c")]) == 0
    lines = (tmp_path / "c" / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 4 and (tmp_path / "c" / "spec.json").exists()


def test_infer_matching_keyword(trained, capsys):
    out, manifest, report = trained
    first = json.loads(open(manifest).readline())
    capsys.readouterr()
    audio = os.path.join(os.path.dirname(manifest), first["audio"])
    assert run(["infer", "--checkpoint", report["best_checkpoint"], "--audio", audio,
                "--keyword", first["transcript"]]) == 0
    lines = capsys.readouterr().out.splitlines()
    p_utt = float(lines[1].split("=")[1])
    assert p_utt > 0.8
    assert len(lines) == 2 + 2  # "go" has two phonemes


def test_evaluate_then_report(trained, tmp_path, capsys):
    out, manifest, report = trained
    (tmp_path / "vocab.txt").write_text("go\nfriend\nseven\nwater\n")
    scores, combined = tmp_path / "scores.csv", tmp_path / "report.json"
    assert run(["evaluate", "--checkpoint", report["best_checkpoint"], "--manifest", manifest, "--vocab",
                str(tmp_path / "vocab.txt"), "--scores", str(scores), "--report", str(combined)]) == 0
    assert len(scores.read_text().splitlines()) == 1 + 16 * 4
    assert run(["report", "--scores", str(scores), "--out", str(tmp_path / "again.json")]) == 0
    assert json.loads(combined.read_text()) == json.loads((tmp_path / "again.json").read_text())


def test_infer_missing_audio(trained):
    assert run(["infer", "--checkpoint", trained[2]["best_checkpoint"], "--audio", "/no/such.wav",
                "--keyword", "go"]) == 2
