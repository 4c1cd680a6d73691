# -*- coding: utf-8 -*-

import json

import numpy as np
import pytest
import soundfile as sf

from config_manager import DEFAULT_CONFIG, load_config
from main import main
from pipeline import read_labels, read_manifest


def last_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def simulate(out, count=2, seed=7, workers=1, track="ssl"):
    return main(["--workers", str(workers), "simulate", "--count", str(count), "--seed", str(seed),
                 "--out", str(out), "--track", track, "--duration", "0.5"])


def test_simulate_writes_scenes(isolated_config, tmp_path):
    out = tmp_path / "sim"
    assert simulate(out) == 0
    manifest = read_manifest(out / "manifest.jsonl", required=("id", "wav_path"))
    assert [e["id"] for e in manifest] == ["000000", "000001"]
    info = sf.info(manifest[0]["wav_path"])
    assert (info.channels, info.samplerate, info.subtype) == (6, 16000, "PCM_16")

    truth = read_manifest(out / "ground_truth.jsonl")
    for record in truth:
        assert all(1 <= d <= 360 for d in record["speech_doas"])
        assert record["conformant"] is True
        assert set(record["gains"]) == {"mic", "ref"}
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["processed"] == 2 and summary["failed"] == []


def test_simulate_zero_count(isolated_config, tmp_path):
    out = tmp_path / "empty"
    assert simulate(out, count=0) == 0
    assert (out / "manifest.jsonl").read_text(encoding="utf-8") == ""


def test_simulate_negative_count(isolated_config, tmp_path, capsys):
    assert simulate(tmp_path / "neg", count=-1) == 2
    assert last_error(capsys)["error"] == "ConfigError"


def test_simulation_independent_of_worker_count(isolated_config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert simulate(a, count=3, seed=11, workers=1) == 0
    assert simulate(b, count=3, seed=11, workers=2) == 0
    assert (a / "ground_truth.jsonl").read_bytes() == (b / "ground_truth.jsonl").read_bytes()
    for wav in sorted((a / "wav").glob("*.wav")):
        assert wav.read_bytes() == (b / "wav" / wav.name).read_bytes()


def test_frontend_decide_and_score(isolated_config, tmp_path, capsys):
    sim, front = tmp_path / "sim", tmp_path / "front"
    assert simulate(sim, count=2, seed=3) == 0
    assert main(["--workers", "1", "frontend", "--manifest", str(sim / "manifest.jsonl"),
                 "--out", str(front)]) == 0

    labels = read_labels(front / "frontend_labels.csv", "ssl")
    assert sorted(labels) == ["000000", "000001"]
    for entry in read_manifest(front / "frontend.jsonl"):
        assert (front / "beam" / f"{entry['id']}.wav").is_file()

    assert main(["--workers", "1", "ssl-decide", "--manifest", str(front / "vectors.jsonl"),
                 "--out", str(tmp_path / "ssl_labels.csv")]) == 0
    assert read_labels(tmp_path / "ssl_labels.csv", "ssl") == labels

    assert main(["--workers", "1", "kws-decide", "--manifest", str(front / "posteriors.jsonl"),
                 "--out", str(tmp_path / "kws_labels.csv"), "--threshold", "0.5"]) == 0
    assert set(read_labels(tmp_path / "kws_labels.csv", "kws").values()) <= {0, 1}

    capsys.readouterr()
    assert main(["score", "--track", "ssl", "--truth", str(sim / "ground_truth.jsonl"),
                 "--labels", str(front / "frontend_labels.csv"), "--mae-baseline", "20"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["track"] == "ssl"
    assert report["overall"]["n"] == 2


def test_features_command(isolated_config, tmp_path):
    sim, feats = tmp_path / "sim", tmp_path / "feats"
    assert simulate(sim, count=1) == 0
    assert main(["--workers", "1", "features", "--manifest", str(sim / "manifest.jsonl"),
                 "--out", str(feats)]) == 0
    assert np.load(feats / "features" / "000000_kws.npy").shape == (48, 40)
    assert np.load(feats / "features" / "000000_ssl.npy").shape == (10, 257, 30)


def _write_kws_truth(path):
    lines = [
        {"id": "a", "scenario": "Keyword only", "keyword": True, "speech_doas": [90], "room": {"label": "r1"}},
        {"id": "b", "scenario": "Speech+Noise", "keyword": False, "speech_doas": [45], "room": {"label": "r1"}},
    ]
    path.write_text("".join(json.dumps(line) + "\n" for line in lines), encoding="utf-8")


def test_score_kws_and_rank(isolated_config, tmp_path, capsys):
    truth = tmp_path / "truth.jsonl"
    _write_kws_truth(truth)
    good, bad = tmp_path / "good.csv", tmp_path / "bad.csv"
    good.write_text("id,label\na,1\nb,0\n", encoding="utf-8")
    bad.write_text("id,label\na,0\nb,0\n", encoding="utf-8")

    assert main(["score", "--track", "kws", "--truth", str(truth), "--labels", str(good),
                 "--system", "good", "--out", str(tmp_path / "good.json")]) == 0
    assert main(["score", "--track", "kws", "--truth", str(truth), "--labels", str(bad),
                 "--system", "bad", "--time-delay-ms", "100", "--out", str(tmp_path / "bad.json")]) == 0
    good_report = json.loads((tmp_path / "good.json").read_text(encoding="utf-8"))
    assert good_report["overall"]["score"] == 0.0

    assert main(["rank", "--track", "kws", str(tmp_path / "bad.json"), str(tmp_path / "good.json")]) == 0
    assert main(["rank", "--track", "ssl", str(tmp_path / "good.json")]) == 2


def test_score_rejects_bad_label(isolated_config, tmp_path, capsys):
    truth = tmp_path / "truth.jsonl"
    _write_kws_truth(truth)
    labels = tmp_path / "labels.csv"
    labels.write_text("id,label\na,2\nb,0\n", encoding="utf-8")
    assert main(["score", "--track", "kws", "--truth", str(truth), "--labels", str(labels)]) == 2
    assert last_error(capsys)["error"] == "LabelError"


def test_score_missing_id(isolated_config, tmp_path, capsys):
    truth = tmp_path / "truth.jsonl"
    _write_kws_truth(truth)
    labels = tmp_path / "labels.csv"
    labels.write_text("id,label\na,1\n", encoding="utf-8")
    assert main(["score", "--track", "kws", "--truth", str(truth), "--labels", str(labels)]) == 3
    error = last_error(capsys)
    assert error["error"] == "MissingIdError"
    assert error["exit_code"] == 3


def test_invalid_config_override(isolated_config, tmp_path, capsys):
    assert main(["kws-decide", "--manifest", "x.jsonl", "--out", str(tmp_path / "o.csv"),
                 "--threshold", "1.5"]) == 2
    assert "kws_settings.threshold" in last_error(capsys)["message"]


def test_show_config(isolated_config):
    assert main(["show-config"]) == 0


def test_show_config_saves_effective_config(isolated_config, tmp_path, capsys):
    path = tmp_path / "effective.json"
    assert main(["--workers", "3", "show-config", "--save", str(path)]) == 0
    saved = load_config(str(path))
    assert saved["performance_settings"]["num_workers"] == 3
    assert saved["scene_settings"] == DEFAULT_CONFIG["scene_settings"]

    assert main(["show-config", "--save", str(tmp_path / "missing" / "c.json")]) == 2
    assert last_error(capsys)["error"] == "ConfigError"


def test_unknown_command_exits_by_argparse():
    with pytest.raises(SystemExit):
        main(["transcribe"])
