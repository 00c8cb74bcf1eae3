"""End-to-end sequence classifier assembled from the capsule and LSTM parts.

Per frame: encoder -> class capsules -> class distribution. The per-frame
distributions form the LSTM input sequence; the final LSTM state yields the
clip prediction. Losses combine per-frame capsule terms (averaged over the
clip) with one temporal-head term per clip.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import tensor as T
from .config import Config
from .decoder import CapsuleDecoder, mask
from .encoder import CapsuleEncoder, capsule_probabilities
from .errors import DimensionError
from .losses import (
    LossBreakdown,
    LossConfig,
    lstm_head_loss,
    margin_loss,
    reconstruction_loss,
    total_loss,
)
from .lstm import TemporalLstm, classify
from .tensor import Tensor


def _mean_of_scalars(values: list[Tensor]) -> Tensor:
    acc = values[0]
    for v in values[1:]:
        acc = T.add(acc, v)
    return T.scale(acc, 1.0 / len(values))


class SequenceClassifier:
    """Holds all trainable parameters and wires the forward passes."""

    def __init__(self, cfg: Config, rng: np.random.Generator):
        self.cfg = cfg
        self.encoder = CapsuleEncoder(cfg, rng)
        self.decoder = CapsuleDecoder(cfg, rng)
        self.lstm = TemporalLstm(cfg, rng)
        self.params: dict[str, Tensor] = {}
        for part in (self.encoder, self.decoder, self.lstm):
            self.params.update(part.params)

    def _check_frames(self, frames: np.ndarray) -> None:
        expected = (self.cfg.sequence_length, 1, self.cfg.frame_size, self.cfg.frame_size)
        if frames.shape != expected:
            raise DimensionError(f"clip must have shape {expected}, got {frames.shape}")

    def sequence_outputs(self, frames: np.ndarray):
        """Per-frame capsule matrices and the clip-level distribution."""
        self._check_frames(frames)
        capsules = []
        columns = []
        for t in range(frames.shape[0]):
            caps = self.encoder.forward(Tensor(frames[t]))
            capsules.append(caps)
            probs = capsule_probabilities(caps)
            columns.append(T.reshape(probs, (1, self.cfg.num_classes, 1)))
        sequence = T.concat(columns, axis=0)
        return capsules, self.lstm.sequence_forward(sequence)

    def sequence_loss(self, frames: np.ndarray, label: int, loss_cfg: LossConfig):
        """Joint loss for one labelled clip; returns (total, breakdown, clip probs)."""
        capsules, clip_probs = self.sequence_outputs(frames)
        margin = _mean_of_scalars([margin_loss(caps, label) for caps in capsules])
        head = lstm_head_loss(loss_cfg, clip_probs, label)
        recon: Optional[Tensor] = None
        if loss_cfg.use_reconstruction:
            recon = self._clip_reconstruction_loss(frames, capsules, label)
        total, breakdown = total_loss(loss_cfg, margin, head, recon)
        return total, breakdown, clip_probs

    def _clip_reconstruction_loss(self, frames: np.ndarray, capsules: list, label: int) -> Tensor:
        """Mean per-frame reconstruction loss over the clip."""
        if self.cfg.decoder == "fc":
            # one batched decode for the whole clip; identical to the mean of
            # per-frame losses because every frame has the same pixel count
            columns = T.concat(
                [T.reshape(mask(caps, true_label=label).vector, (self.cfg.capsule_dim, 1))
                 for caps in capsules], axis=1)
            decoded = self.decoder.decode_columns(columns)
            steps = frames.shape[0]
            targets = Tensor(frames.reshape(steps, -1).T)
            return reconstruction_loss(targets, decoded)
        per_frame = []
        for t, caps in enumerate(capsules):
            image = self.decoder.decode(mask(caps, true_label=label))
            per_frame.append(reconstruction_loss(Tensor(frames[t]), image))
        return _mean_of_scalars(per_frame)

    def predict(self, frames: np.ndarray) -> int:
        """Clip label by argmax of the temporal head's distribution."""
        _, clip_probs = self.sequence_outputs(frames)
        return classify(clip_probs)


def build_model(cfg: Config, seed: int) -> SequenceClassifier:
    """Construct a model with all parameters drawn from one seeded generator."""
    return SequenceClassifier(cfg, np.random.default_rng(seed))


def breakdown_is_finite(breakdown: LossBreakdown) -> Optional[str]:
    """Name of the first non-finite component, or None if all are finite."""
    for field in ("margin", "reconstruction", "lstm_ce", "total"):
        if not np.isfinite(getattr(breakdown, field)):
            return field
    return None
