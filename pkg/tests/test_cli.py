"""End-to-end CLI coverage at micro scale."""

import numpy as np
import pytest

from capsroute.cli import main
from capsroute.config import Config
from capsroute.pipeline import load_manifest, write_frame_file


MICRO_CFG = dict(num_classes=2, frame_size=16, sequence_length=4, conv_channels=(4, 6, 2),
                 primary_capsule_dim=4, lstm_hidden=8, decoder_hidden_sizes=(4, 8),
                 batch_size=4, epochs=2, augment=False, test_fraction=0.34)


@pytest.fixture
def micro_dataset(tmp_path):
    code = main(["synth", "--classes", "2", "--per-class", "3", "--seed", "1",
                 "--out", str(tmp_path / "data"), "--size", "16", "--frames", "4"])
    assert code == 0
    return tmp_path / "data" / "manifest.tsv"


def write_config(tmp_path, **overrides):
    merged = {**MICRO_CFG, **overrides}
    path = tmp_path / "run.cfg"
    path.write_text(Config(**merged).validate().to_text(), encoding="utf-8")
    return path


def test_synth_counts(micro_dataset):
    manifest = load_manifest(micro_dataset)
    assert len(manifest.entries) == 6
    assert manifest.labels == ("class00", "class01")


def test_train_then_eval(tmp_path, micro_dataset, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--data", str(micro_dataset),
                 "--out", str(tmp_path / "run")]) == 0
    out = capsys.readouterr().out
    assert "epoch" in out and "best test accuracy" in out
    assert (tmp_path / "run" / "best.caps").exists()

    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "best.caps"),
                 "--data", str(micro_dataset), "--split", "test"]) == 0
    out = capsys.readouterr().out
    assert "accuracy on test" in out
    assert (tmp_path / "run" / "confusion.csv").exists()  # default out dir


def test_ablate_writes_csv(tmp_path, micro_dataset):
    cfg = write_config(tmp_path, epochs=1)
    assert main(["ablate", "--config", str(cfg), "--data", str(micro_dataset),
                 "--out", str(tmp_path / "ablation")]) == 0
    lines = (tmp_path / "ablation" / "ablation.csv").read_text().splitlines()
    assert len(lines) == 5


def test_preprocess_builds_manifest(tmp_path):
    rng = np.random.default_rng(0)
    for label in ("calm", "tense"):
        seq = tmp_path / "raw" / label / "take0"
        seq.mkdir(parents=True)
        for t in range(6):
            write_frame_file(seq / f"{t:02d}.png", rng.uniform(size=(20, 20)))
    assert main(["preprocess", "--in", str(tmp_path / "raw"), "--out", str(tmp_path / "ds"),
                 "--size", "16", "--window", "4"]) == 0
    manifest = load_manifest(tmp_path / "ds" / "manifest.tsv")
    assert manifest.labels == ("calm", "tense")
    assert len(manifest.entries) == 2


def test_error_reported_cleanly(tmp_path, capsys):
    code = main(["eval", "--checkpoint", str(tmp_path / "missing.caps"),
                 "--data", str(tmp_path / "missing.tsv")])
    assert code == 2
    assert "error:" in capsys.readouterr().err
