"""Assembled-model behavior: shapes, prediction, loss wiring."""

import numpy as np
import pytest

from capsroute.config import Config
from capsroute.errors import DimensionError
from capsroute.losses import LossConfig
from capsroute.model import build_model
from capsroute.tensor import Tape


def micro_model(seed=0, **overrides):
    base = dict(num_classes=2, frame_size=16, sequence_length=4, conv_channels=(4, 6, 2),
                primary_capsule_dim=4, lstm_hidden=8, decoder_hidden_sizes=(4, 8))
    base.update(overrides)
    return build_model(Config(**base).validate(), seed)


def test_sequence_outputs_shapes(rng):
    model = micro_model()
    frames = rng.uniform(size=(4, 1, 16, 16))
    capsules, probs = model.sequence_outputs(frames)
    assert len(capsules) == 4
    assert all(c.shape == (2, 30) for c in capsules)
    assert probs.shape == (2,)
    assert probs.data.sum() == pytest.approx(1.0, abs=1e-6)


def test_wrong_clip_shape_rejected(rng):
    model = micro_model()
    with pytest.raises(DimensionError):
        model.sequence_outputs(rng.uniform(size=(5, 1, 16, 16)))
    with pytest.raises(DimensionError):
        model.sequence_outputs(rng.uniform(size=(4, 1, 12, 12)))


def test_predict_is_deterministic(rng):
    model = micro_model(seed=3)
    frames = rng.uniform(size=(4, 1, 16, 16))
    assert model.predict(frames) == model.predict(frames.copy())


def test_loss_breakdown_matches_components(rng):
    model = micro_model(seed=5)
    frames = rng.uniform(size=(4, 1, 16, 16))
    with Tape():
        total, breakdown, _ = model.sequence_loss(frames, 0, LossConfig.from_name("mrc"))
    assert breakdown.total == pytest.approx(
        breakdown.margin + breakdown.reconstruction + breakdown.lstm_ce, abs=1e-12)
    assert total.item() == pytest.approx(breakdown.total, abs=1e-12)
    with Tape():
        _, no_recon, _ = model.sequence_loss(frames, 0, LossConfig.from_name("mc"))
    assert no_recon.reconstruction == 0.0


def test_every_parameter_receives_gradient_under_full_loss(rng):
    model = micro_model(seed=7)
    frames = rng.uniform(size=(4, 1, 16, 16))
    with Tape() as tape:
        total, _, _ = model.sequence_loss(frames, 1, LossConfig.from_name("mrc"))
    tape.backward(total)
    missing = [name for name, p in model.params.items() if p.grad is None]
    assert missing == []


def test_batched_fc_reconstruction_matches_per_frame(rng):
    """The clip-batched decoder path must equal the mean of per-frame losses."""
    from capsroute import tensor as T
    from capsroute.decoder import mask
    from capsroute.losses import reconstruction_loss
    from capsroute.tensor import Tensor

    model = micro_model(seed=9)
    frames = rng.uniform(size=(4, 1, 16, 16))
    capsules, _ = model.sequence_outputs(frames)
    batched = model._clip_reconstruction_loss(frames, capsules, 1).item()
    per_frame = np.mean([
        reconstruction_loss(Tensor(frames[t]),
                            model.decoder.decode(mask(capsules[t], true_label=1))).item()
        for t in range(4)])
    assert batched == pytest.approx(per_frame, rel=1e-12)
