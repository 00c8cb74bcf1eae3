"""Reconstruction decoder: winning capsule vector back to a frame.

Only one capsule row reaches the decoder (the labelled class while training,
the longest row at inference); the pixel error of the reconstruction serves
as a regularizer on the encoder.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .config import Config
from .errors import LabelError
from .tensor import Tensor, parameter


@dataclass
class MaskedCapsule:
    """One retained capsule row plus the class index it belongs to."""

    vector: Tensor  # [capsule_dim]
    class_index: int


def mask(capsules: Tensor, true_label: Optional[int] = None) -> MaskedCapsule:
    """Select the row to decode: the labelled one in training, else the longest."""
    count = capsules.shape[0]
    if true_label is not None:
        if not 0 <= true_label < count:
            raise LabelError(f"label {true_label} outside [0, {count})")
        index = int(true_label)
    else:
        index = int(np.argmax(np.linalg.norm(capsules.data, axis=1)))
    row = T.reshape(T.narrow(capsules, 0, index, 1), (capsules.shape[1],))
    return MaskedCapsule(vector=row, class_index=index)


class CapsuleDecoder:
    """Capsule vector -> [1, frame, frame] image with pixels in (0, 1).

    Default is a three-layer fully connected net. The ``deconv`` variant
    seeds a (frame/8)^2 map and doubles it three times with stride-2
    transposed convolutions.
    """

    def __init__(self, cfg: Config, rng: np.random.Generator):
        self.cfg = cfg
        self.pixels = cfg.frame_size * cfg.frame_size
        self.params: dict[str, Tensor] = {}

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        if cfg.decoder == "fc":
            sizes = [cfg.capsule_dim, *cfg.decoder_hidden_sizes, self.pixels]
            self.layer_count = len(sizes) - 1
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
                self.params[f"decoder.fc{i}.weights"] = parameter(
                    uniform((n_out, n_in), n_in), f"decoder.fc{i}.weights")
                self.params[f"decoder.fc{i}.bias"] = parameter(
                    np.zeros(n_out), f"decoder.fc{i}.bias")
        else:
            self.seed_side = cfg.frame_size // 8
            self.seed_channels = 128
            seed_units = self.seed_channels * self.seed_side * self.seed_side
            self.params["decoder.seed.weights"] = parameter(
                uniform((seed_units, cfg.capsule_dim), cfg.capsule_dim), "decoder.seed.weights")
            self.params["decoder.seed.bias"] = parameter(np.zeros(seed_units), "decoder.seed.bias")
            channels = (self.seed_channels, 64, 32, 1)
            for i, (c_in, c_out) in enumerate(zip(channels[:-1], channels[1:])):
                self.params[f"decoder.up{i}.kernels"] = parameter(
                    uniform((c_out, c_in, 3, 3), 9 * c_in), f"decoder.up{i}.kernels")
                self.params[f"decoder.up{i}.bias"] = parameter(
                    np.zeros(c_out), f"decoder.up{i}.bias")

    def decode(self, capsule: MaskedCapsule) -> Tensor:
        if self.cfg.decoder == "fc":
            column = T.reshape(capsule.vector, (capsule.vector.shape[0], 1))
            flat = self.decode_columns(column)
            return T.reshape(flat, (1, self.cfg.frame_size, self.cfg.frame_size))
        return self._decode_deconv(capsule.vector)

    def decode_columns(self, vectors: Tensor) -> Tensor:
        """FC decode of [capsule_dim, count] columns to [pixels, count] at once.

        Batching a whole clip through shared weights turns the per-frame
        outer-product gradients into single matrix products.
        """
        h = vectors
        for i in range(self.layer_count):
            w = self.params[f"decoder.fc{i}.weights"]
            b = self.params[f"decoder.fc{i}.bias"]
            h = T.add(T.matmul(w, h), T.reshape(b, (b.shape[0], 1)))
            h = T.sigmoid(h) if i == self.layer_count - 1 else T.relu(h)
        return h

    def _decode_deconv(self, vector: Tensor) -> Tensor:
        w = self.params["decoder.seed.weights"]
        b = self.params["decoder.seed.bias"]
        h = T.add(T.matmul(w, T.reshape(vector, (-1, 1))), T.reshape(b, (-1, 1)))
        h = T.relu(T.reshape(h, (self.seed_channels, self.seed_side, self.seed_side)))
        for i in range(3):
            # stride-2 transposed conv that exactly doubles each side:
            # zero-interleave, pad (1, 2), then a valid 3x3 correlation
            h = T.conv2d(T.pad2d(T.upsample_zeros(h, 2), 1, 2),
                         self.params[f"decoder.up{i}.kernels"], 1,
                         self.params[f"decoder.up{i}.bias"])
            h = T.sigmoid(h) if i == 2 else T.relu(h)
        return h
