import json
import subprocess
import sys

import numpy as np
import pytest

from elseg import cli
from elseg import data as D
from elseg import unet as U

SMALL = {"model": {"depth": 1, "base_width": 2, "input_size": 16},
         "train": {"max_epochs": 2, "patience": 2, "batch_size": 8}}


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "config.json"
    cfg.write_text(json.dumps(SMALL))
    assert run("synth", "--out", root / "corpus", "--n", 10, "--cracks", 3, "--seed", 7, "--image-size", 32) == 0
    assert run("prepare", "--corpus", root / "corpus", "--out", root / "prep", "--config", cfg) == 0
    return root, cfg


def test_synth_digest_repeatable(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "a", "--n", 8, "--seed", 7) == 0
    assert run("synth", "--out", tmp_path / "b", "--n", 8, "--seed", 7) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a["digest"] == b["digest"] and len(a["samples"]) == 8


def test_synth_zero_is_usage_error(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "a", "--n", 0) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith("elseg: error[usage]:")


def test_refuses_to_overwrite(work, capsys):
    root, _ = work
    assert run("synth", "--out", root / "corpus", "--n", 2) == 4
    assert "error[io]" in capsys.readouterr().err


def test_prepare_counts_and_no_leakage(work):
    root, _ = work
    train = json.loads((root / "prep" / "train.json").read_text())
    val = json.loads((root / "prep" / "val.json").read_text())
    assert (len(train), len(val)) == (32, 8)
    assert {e["base_id"] for e in train}.isdisjoint({e["base_id"] for e in val})
    assert len(json.loads((root / "prep" / "bases.json").read_text())) == 10


def test_prepare_rerun_identical_stats(work, tmp_path):
    root, cfg = work
    assert run("prepare", "--corpus", root / "corpus", "--out", tmp_path / "p2", "--config", cfg) == 0
    assert (tmp_path / "p2" / "stats.json").read_bytes() == (root / "prep" / "stats.json").read_bytes()


def test_prepare_corrupt_annotation_names_file(tmp_path, capsys):
    assert run("synth", "--out", tmp_path / "c", "--n", 5) == 0
    bad = sorted((tmp_path / "c" / "annotations").glob("*.json"))[2]
    bad.write_text('{"image": "x", "height": 64,')
    assert run("prepare", "--corpus", tmp_path / "c", "--out", tmp_path / "p") == 3
    assert bad.name in capsys.readouterr().err


def test_train_lr_zero_keeps_initial_weights(work, tmp_path):
    root, cfg = work
    assert run("train", "--prepared", root / "prep", "--runs", tmp_path, "--config", cfg, "--lr", 0, "--epochs", 1) == 0
    run_dir = tmp_path / "run-0001"
    for name in ("config.json", "curves.csv", "weights.mssw", "summary.json", "val_metrics.json"):
        assert (run_dir / name).exists()
    trained = U.load_weights(run_dir / "weights.mssw")
    init = U.build_unet(trained.config, 0)
    assert U.weights_to_bytes(trained) == U.weights_to_bytes(init)


def test_train_resume_and_forward_bit_exact(work, tmp_path):
    root, cfg = work
    assert run("train", "--prepared", root / "prep", "--runs", tmp_path, "--config", cfg) == 0
    w = tmp_path / "run-0001" / "weights.mssw"
    assert run("train", "--prepared", root / "prep", "--runs", tmp_path, "--config", cfg,
               "--init-weights", w, "--lr", 0, "--epochs", 1) == 0
    a, b = U.load_weights(w), U.load_weights(tmp_path / "run-0002" / "weights.mssw")
    x = np.random.default_rng(0).standard_normal((2, 3, 16, 16)).astype(np.float32)
    assert U.forward(a, x).tobytes() == U.forward(b, x).tobytes()


def test_cv_outputs(work, tmp_path):
    root, cfg = work
    assert run("cv", "--prepared", root / "prep", "--runs", tmp_path, "--config", cfg,
               "--epochs", 1, "--grid", 1e-3, 1e-2) == 0
    d = tmp_path / "cv-0001"
    folds = json.loads((d / "folds.json").read_text())
    assert len(folds) == 5
    ids = sorted(i for f in folds for i in f["test_ids"])
    assert len(ids) == 10 == len(set(ids))
    assert all(f["lr"] in (1e-3, 1e-2) for f in folds)
    s = json.loads((d / "summary.json").read_text())
    assert 0 <= s["accuracy_mean"] <= 1 and s["accuracy_sd"] >= 0


def test_cv_too_few_bases(work, tmp_path, capsys):
    root, cfg = work
    assert run("cv", "--prepared", root / "prep", "--runs", tmp_path, "--config", cfg, "--folds", 11) == 3


def test_predict_evaluate_analyze(work, tmp_path, capsys):
    root, cfg = work
    assert run("train", "--prepared", root / "prep", "--runs", tmp_path / "runs", "--config", cfg) == 0
    w = tmp_path / "runs" / "run-0001" / "weights.mssw"
    imgs = root / "corpus" / "images"
    assert run("predict", "--weights", w, "--images", imgs, "--out", tmp_path / "pred", "--config", cfg) == 0
    assert run("predict", "--weights", w, "--images", imgs, "--out", tmp_path / "pred2", "--config", cfg) == 0
    probs = sorted((tmp_path / "pred").glob("*.npy"))
    assert len(probs) == 10
    for p in probs:
        arr = np.load(p)
        assert arr.shape == (4, 16, 16) and arr.min() >= 0 and arr.max() <= 1
        assert arr.tobytes() == np.load(tmp_path / "pred2" / p.name).tobytes()
    capsys.readouterr()

    # ground truth against itself
    gt = root / "corpus" / "masks"
    assert run("evaluate", "--pred", gt, "--gt", gt, "--out", tmp_path / "self") == 0
    out = capsys.readouterr().out
    assert "macro" in out and "crack" in out
    rep = json.loads((tmp_path / "self" / "report.json").read_text())
    assert all(v == 1.0 for v in rep["global"]["macro"].values())

    # predictions against resized ground truth
    assert run("evaluate", "--pred", tmp_path / "pred", "--gt", gt) == 0

    assert run("analyze", "--gt", gt, "--pred", f"model={tmp_path / 'pred'}", "--pred", f"gt2={gt}",
               "--out", tmp_path / "an") == 0
    summary = json.loads((tmp_path / "an" / "crack_summary.json").read_text())
    assert summary["stats"]["gt"]["mean"] == 3.0 == summary["stats"]["gt2"]["mean"]
    rows = (tmp_path / "an" / "crack_rows.csv").read_text().splitlines()
    assert len(rows) == 1 + 10 * 3


def test_evaluate_empty_corpus(tmp_path, capsys):
    (tmp_path / "e").mkdir()
    assert run("evaluate", "--pred", tmp_path / "e", "--gt", tmp_path / "e") == 3
    assert "empty" in capsys.readouterr().err


def test_analyze_min_area(tmp_path):
    data = np.zeros((4, 8, 8), np.uint8)
    data[2, 1, 1:6] = 1
    data[2, 6, 6] = 1
    (tmp_path / "gt").mkdir()
    D.save_mask(D.MultiHotMask(data), tmp_path / "gt" / "a.mssm")
    assert run("analyze", "--gt", tmp_path / "gt", "--out", tmp_path / "o1") == 0
    assert run("analyze", "--gt", tmp_path / "gt", "--out", tmp_path / "o2", "--min-area", 2) == 0
    c1 = json.loads((tmp_path / "o1" / "crack_summary.json").read_text())["counts"]["gt"]["a"]
    c2 = json.loads((tmp_path / "o2" / "crack_summary.json").read_text())["counts"]["gt"]["a"]
    assert (c1, c2) == (2, 1)


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"epochz": 3}}))
    assert run("synth", "--out", tmp_path / "s", "--config", cfg) == 3
    assert "epochz" in capsys.readouterr().err


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MSS_SEED", "7")
    assert run("synth", "--out", tmp_path / "a", "--n", 2) == 0
    monkeypatch.delenv("MSS_SEED")
    assert run("synth", "--out", tmp_path / "b", "--n", 2, "--seed", 7) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())["digest"]
    assert a == json.loads((tmp_path / "b" / "manifest.json").read_text())["digest"]


def test_bad_weights_file(tmp_path, capsys):
    (tmp_path / "w.mssw").write_bytes(b"MSSW\x01garbage")
    (tmp_path / "imgs").mkdir()
    D.save_image(np.zeros((8, 8)), tmp_path / "imgs" / "a.png")
    assert run("predict", "--weights", tmp_path / "w.mssw", "--images", tmp_path / "imgs", "--out", tmp_path / "o") == 3
    assert capsys.readouterr().err.startswith("elseg: error[validation]:")


@pytest.mark.parametrize("sub", ["synth", "prepare", "train", "cv", "predict", "evaluate", "analyze"])
def test_help_lists_flags(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        run(sub, "--help")
    assert exc.value.code == 0
    text = capsys.readouterr().out
    parser = cli.build_parser()
    subparser = parser._subparsers._group_actions[0].choices[sub]
    for action in subparser._actions:
        for flag in action.option_strings:
            assert flag in text


def test_unknown_flag_is_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("synth", "--out", tmp_path, "--bogus")
    assert exc.value.code == 2
    assert capsys.readouterr().err.startswith("elseg: error[usage]:")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "elseg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "synth" in r.stdout
