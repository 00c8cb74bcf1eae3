"""Optimizer, checkpoint, evaluation and training-loop tests.

The slow end-to-end oracles (full overfit run, ablation at working
resolution) live in test_acceptance.py; everything here runs on micro
configurations.
"""

import numpy as np
import pytest

from capsroute import tensor as T
from capsroute import training as tr
from capsroute.checkpoint import apply_parameters, load_checkpoint, save_checkpoint
from capsroute.config import Config
from capsroute.encoder import CapsuleEncoder
from capsroute.errors import CheckpointError, ContractError, TrainingDiverged
from capsroute.decoder import mask
from capsroute.losses import margin_loss, reconstruction_loss, lstm_loss
from capsroute.lstm import TemporalLstm
from capsroute.model import build_model
from capsroute.pipeline import generate_synthetic
from capsroute.tensor import Tape, Tensor, parameter
from capsroute.training import (
    ConfusionMatrix,
    adam_step,
    evaluate,
    init_adam,
    run_ablation,
    train,
    zero_gradients,
)


def micro_config(**overrides) -> Config:
    base = dict(num_classes=2, frame_size=16, sequence_length=4, conv_channels=(4, 6, 2),
                primary_capsule_dim=4, lstm_hidden=8, decoder_hidden_sizes=(4, 8),
                batch_size=4, epochs=4, learning_rate=1e-4, seed=0, augment=False,
                test_fraction=0.34, early_stop_patience=15)
    base.update(overrides)
    return Config(**base).validate()


@pytest.fixture
def micro_dataset(tmp_path):
    return generate_synthetic(2, 3, seed=1, out_dir=tmp_path / "data",
                              side=16, frame_count=4)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = parameter(np.array([1.0, -2.0, 3.0]), name="p")
        params = {"p": p}
        state = init_adam(params, learning_rate=0.1)
        p.grad = np.zeros(3)
        adam_step(params, state)
        np.testing.assert_array_equal(p.data, [1.0, -2.0, 3.0])

    def test_first_step_magnitude_is_learning_rate(self):
        p = parameter(np.array(5.0), name="p")
        params = {"p": p}
        state = init_adam(params, learning_rate=1e-4)
        p.grad = np.array(10.0)
        adam_step(params, state)
        # bias-corrected first step: lr * g / (|g| + ~0)
        assert float(5.0 - p.data) == pytest.approx(1e-4, rel=1e-6)

    def test_missing_gradient_names_parameter(self):
        params = {"conv.weights": parameter(np.ones(2), name="conv.weights")}
        state = init_adam(params, 1e-3)
        with pytest.raises(ContractError, match="conv.weights"):
            adam_step(params, state)

    def test_ten_steps_bit_identical_across_runs(self):
        def run():
            rng = np.random.default_rng(42)
            p = parameter(rng.normal(size=(4, 4)), name="p")
            params = {"p": p}
            state = init_adam(params, 1e-3)
            for step in range(10):
                grad_rng = np.random.default_rng(step)
                p.grad = grad_rng.normal(size=(4, 4))
                adam_step(params, state)
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_step_count_increments(self):
        params = {"p": parameter(np.array(1.0), name="p")}
        state = init_adam(params, 1e-3)
        for expected in (1, 2, 3):
            params["p"].grad = np.array(1.0)
            adam_step(params, state)
            assert state.step_count == expected


class TestConfusionMatrix:
    def test_perfect_classifier_is_diagonal(self):
        m = ConfusionMatrix.empty(("a", "b", "c"))
        for k in range(3):
            for _ in range(4):
                m.add(k, k)
        assert m.accuracy() == 1.0
        assert np.all(m.counts == np.diag([4, 4, 4]))

    def test_constant_classifier_on_balanced_split(self):
        m = ConfusionMatrix.empty(("a", "b"))
        for true in (0, 1, 0, 1):
            m.add(true, 0)
        assert m.accuracy() == 0.5
        assert np.all(m.counts[:, 1] == 0)

    def test_row_normalized_rows_sum_to_one(self, rng):
        m = ConfusionMatrix.empty(("a", "b", "c"))
        for _ in range(50):
            m.add(int(rng.integers(3)), int(rng.integers(3)))
        sums = m.row_normalized().sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)

    def test_csv_and_table_render(self):
        m = ConfusionMatrix.empty(("neg", "pos"))
        m.add(0, 0)
        m.add(1, 0)
        csv = m.to_csv()
        assert csv.splitlines()[0] == "true\\predicted,neg,pos"
        assert "100.0%" in m.to_table()


class TestCheckpoint:
    def test_round_trip_preserves_values_and_bytes(self, tmp_path):
        cfg = micro_config()
        model = build_model(cfg, seed=3)
        first = tmp_path / "a.caps"
        save_checkpoint(first, model.params, cfg)
        loaded_cfg, extras, arrays = load_checkpoint(first)
        assert extras["conv_padding"] == "valid"
        assert loaded_cfg.conv_channels == cfg.conv_channels
        for name, p in model.params.items():
            np.testing.assert_array_equal(arrays[name],
                                          p.data.astype(np.float32).astype(np.float64))
        second = tmp_path / "b.caps"
        save_checkpoint(second, arrays, loaded_cfg)
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.caps"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_architecture_mismatch_lists_dims(self, tmp_path):
        cfg = micro_config()
        model = build_model(cfg, seed=3)
        path = tmp_path / "a.caps"
        save_checkpoint(path, model.params, cfg)
        _, _, arrays = load_checkpoint(path)
        other = build_model(micro_config(conv_channels=(5, 6, 2)), seed=3)
        with pytest.raises(CheckpointError, match=r"\(4, 1, 3, 3\)"):
            apply_parameters(other.params, arrays)

    def test_truncated_stream_rejected(self, tmp_path):
        cfg = micro_config()
        model = build_model(cfg, seed=3)
        path = tmp_path / "a.caps"
        save_checkpoint(path, model.params, cfg)
        clipped = tmp_path / "clipped.caps"
        clipped.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(CheckpointError):
            load_checkpoint(clipped)


class TestTrainLoop:
    def test_metrics_and_artifacts_written(self, tmp_path, micro_dataset):
        cfg = micro_config(epochs=2)
        record = train(cfg, micro_dataset, tmp_path / "run")
        assert (tmp_path / "run" / "metrics.csv").exists()
        assert (tmp_path / "run" / "best.caps").exists()
        assert (tmp_path / "run" / "final.caps").exists()
        assert (tmp_path / "run" / "run_record.json").exists()
        lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert lines[0] == tr.METRICS_HEADER
        assert len(lines) == 1 + len(record.epochs)
        for e in record.epochs:
            assert e.margin >= 0.0 and e.reconstruction >= 0.0 and e.lstm_ce >= 0.0
            assert e.total == pytest.approx(e.margin + e.reconstruction + e.lstm_ce, abs=1e-9)

    def test_max_steps_caps_updates(self, tmp_path, micro_dataset):
        cfg = micro_config(epochs=50, max_steps=3)
        train(cfg, micro_dataset, tmp_path / "run")
        # 4 train clips, batch 4 -> 1 step per epoch; the cap stops epoch 3
        lines = (tmp_path / "run" / "metrics.csv").read_text().splitlines()
        assert len(lines) == 4

    def test_divergence_aborts_with_component_name(self, tmp_path, micro_dataset, monkeypatch):
        real_build = tr.build_model

        def poisoned(cfg, seed):
            model = real_build(cfg, seed)
            model.params["encoder.conv1.kernels"].data[0, 0, 0, 0] = np.nan
            return model

        monkeypatch.setattr(tr, "build_model", poisoned)
        with pytest.raises(TrainingDiverged, match="epoch 1"):
            train(micro_config(), micro_dataset, tmp_path / "run")

    def test_loss_config_without_reconstruction_trains(self, tmp_path, micro_dataset):
        cfg = micro_config(epochs=1, loss_config="mc")
        record = train(cfg, micro_dataset, tmp_path / "run")
        assert record.epochs[0].reconstruction == 0.0

    def test_num_classes_mismatch_rejected(self, tmp_path, micro_dataset):
        from capsroute.errors import ConfigError
        cfg = micro_config(num_classes=3)
        with pytest.raises(ConfigError, match="num_classes"):
            train(cfg, micro_dataset, tmp_path / "run")


class TestEvaluate:
    def test_accuracy_and_confusion_deterministic(self, tmp_path, micro_dataset):
        cfg = micro_config(epochs=2)
        train(cfg, micro_dataset, tmp_path / "run")
        ckpt = tmp_path / "run" / "best.caps"
        acc1, matrix1 = evaluate(ckpt, micro_dataset, "test", out_dir=tmp_path / "eval1")
        acc2, matrix2 = evaluate(ckpt, micro_dataset, "test", out_dir=tmp_path / "eval2")
        assert acc1 == acc2
        np.testing.assert_array_equal(matrix1.counts, matrix2.counts)
        assert (tmp_path / "eval1" / "confusion.csv").read_bytes() == \
               (tmp_path / "eval2" / "confusion.csv").read_bytes()
        assert matrix1.total == 2  # round(0.34 * 6) test clips

    def test_round_trip_checkpoint_same_evaluation(self, tmp_path, micro_dataset):
        cfg = micro_config(epochs=1)
        train(cfg, micro_dataset, tmp_path / "run")
        ckpt = tmp_path / "run" / "final.caps"
        loaded_cfg, _, arrays = load_checkpoint(ckpt)
        resaved = tmp_path / "resaved.caps"
        save_checkpoint(resaved, arrays, loaded_cfg)
        assert ckpt.read_bytes() == resaved.read_bytes()
        acc1, m1 = evaluate(ckpt, micro_dataset, "test")
        acc2, m2 = evaluate(resaved, micro_dataset, "test")
        assert acc1 == acc2
        np.testing.assert_array_equal(m1.counts, m2.counts)


class TestAblationRunner:
    def test_four_rows_and_reproducible_csv(self, tmp_path, micro_dataset):
        cfg = micro_config(epochs=1)
        rows = run_ablation(cfg, micro_dataset, tmp_path / "ab1")
        assert [name for name, _ in rows] == ["mm", "mrm", "mrc", "mc"]
        assert all(acc is not None for _, acc in rows)
        run_ablation(cfg, micro_dataset, tmp_path / "ab2")
        assert (tmp_path / "ab1" / "ablation.csv").read_bytes() == \
               (tmp_path / "ab2" / "ablation.csv").read_bytes()
        lines = (tmp_path / "ab1" / "ablation.csv").read_text().splitlines()
        assert lines[0] == "loss_config,accuracy"
        assert len(lines) == 5


def constant_image_pair(side=16):
    """Two fixed frames: class 0 bright on top, class 1 bright on the bottom."""
    a = np.full((1, side, side), 0.12)
    a[0, : side // 2] = 0.85
    b = np.full((1, side, side), 0.12)
    b[0, side // 2 :] = 0.85
    return [a, b]


class TestTrainingCurveOracles:
    def test_encoder_overfits_two_constant_classes(self):
        """Margin-loss training drives argmax capsule norms to the labels."""
        cfg = micro_config()
        enc = CapsuleEncoder(cfg, np.random.default_rng(5))
        images = constant_image_pair()
        optimizer = init_adam(enc.params, learning_rate=0.01)
        hit_all = False
        for _ in range(200):
            zero_gradients(enc.params)
            for label, image in enumerate(images):
                with Tape() as tape:
                    loss = margin_loss(enc.forward(Tensor(image)), label)
                tape.backward(loss)
            adam_step(enc.params, optimizer)
            predictions = [int(np.argmax(np.linalg.norm(enc.forward(Tensor(img)).data, axis=1)))
                           for img in images]
            if predictions == [0, 1]:
                hit_all = True
                break
        assert hit_all, "encoder failed to separate two constant images in 200 steps"

    def test_reconstruction_error_trends_down_over_first_50_steps(self):
        cfg = micro_config()
        rng = np.random.default_rng(8)
        enc = CapsuleEncoder(cfg, rng)
        from capsroute.decoder import CapsuleDecoder
        dec = CapsuleDecoder(cfg, rng)
        images = constant_image_pair()
        params = {**enc.params, **dec.params}
        optimizer = init_adam(params, learning_rate=0.01)
        history = []
        for _ in range(50):
            zero_gradients(params)
            step_values = []
            for label, image in enumerate(images):
                with Tape() as tape:
                    caps = enc.forward(Tensor(image))
                    recon = reconstruction_loss(Tensor(image), dec.decode(mask(caps, label)))
                    loss = T.add(margin_loss(caps, label), recon)
                tape.backward(loss)
                step_values.append(recon.item())
            adam_step(params, optimizer)
            history.append(float(np.mean(step_values)))
        smoothed = np.convolve(history, np.ones(10) / 10, mode="valid")
        assert np.all(np.diff(smoothed) <= 1e-7), "smoothed reconstruction loss increased"

    def test_lstm_head_overfits_drifting_sequences(self):
        """Class 0 drifts up, class 1 drifts down; the head must separate 64 clips."""
        cfg = Config(num_classes=2, lstm_hidden=16, sequence_length=16).validate()
        rng = np.random.default_rng(4)
        lstm = TemporalLstm(cfg, rng)
        sequences = []
        for i in range(64):
            label = i % 2
            slope = 0.025 if label == 0 else -0.025
            start = rng.uniform(0.3, 0.45) if label == 0 else rng.uniform(0.55, 0.7)
            p = np.clip(start + slope * np.arange(16) + rng.normal(scale=0.01, size=16),
                        0.01, 0.99)
            sequences.append((np.stack([p, 1.0 - p], axis=1)[:, :, None], label))

        optimizer = init_adam(lstm.params, learning_rate=0.01)

        def all_correct():
            return all(int(np.argmax(lstm.sequence_forward(Tensor(seq)).data)) == label
                       for seq, label in sequences)

        solved = False
        for step in range(500):
            batch = [sequences[(step * 8 + k) % 64] for k in range(8)]
            zero_gradients(lstm.params)
            for seq, label in batch:
                with Tape() as tape:
                    loss = lstm_loss(lstm.sequence_forward(Tensor(seq)), label)
                tape.backward(loss)
            adam_step(lstm.params, optimizer)
            if step % 10 == 9 and all_correct():
                solved = True
                break
        assert solved, "temporal head failed to reach 100% on 64 sequences in 500 steps"
