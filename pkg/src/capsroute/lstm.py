"""Temporal head: a single LSTM over per-frame class distributions.

The encoder reduces each frame to an N-way probability vector; this module
consumes the fixed-length sequence of those vectors and emits one N-way
distribution for the whole clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import Config
from .errors import DimensionError
from .tensor import Tensor, parameter


@dataclass
class LstmState:
    hidden: Tensor  # [H], entries in (-1, 1)
    cell: Tensor    # [H]


class TemporalLstm:
    """Standard forget-gate LSTM plus a softmax classifier on the final state.

    Gate blocks are stacked in the order (input, forget, output, candidate);
    the forget-gate bias block starts at 1.0 so early training does not wipe
    the cell state, everything else starts small and centered.
    """

    def __init__(self, cfg: Config, rng: np.random.Generator):
        hidden, classes = cfg.lstm_hidden, cfg.num_classes
        self.hidden_size = hidden
        self.num_classes = classes
        self.sequence_length = cfg.sequence_length
        bound = 1.0 / np.sqrt(hidden)
        gate_bias = np.zeros(4 * hidden)
        gate_bias[hidden : 2 * hidden] = 1.0
        self.params = {
            "lstm.input_weights": parameter(
                rng.uniform(-bound, bound, size=(4 * hidden, classes)), "lstm.input_weights"),
            "lstm.hidden_weights": parameter(
                rng.uniform(-bound, bound, size=(4 * hidden, hidden)), "lstm.hidden_weights"),
            "lstm.gate_bias": parameter(gate_bias, "lstm.gate_bias"),
            "lstm.classifier_weights": parameter(
                rng.uniform(-bound, bound, size=(classes, hidden)), "lstm.classifier_weights"),
            "lstm.classifier_bias": parameter(np.zeros(classes), "lstm.classifier_bias"),
        }

    def initial_state(self) -> LstmState:
        return LstmState(hidden=Tensor(np.zeros(self.hidden_size)),
                         cell=Tensor(np.zeros(self.hidden_size)))

    def step(self, x: Tensor, state: LstmState) -> LstmState:
        """One recurrence step for an [N] input vector."""
        hidden = self.hidden_size
        if x.shape != (self.num_classes,):
            raise DimensionError(f"lstm step expects [{self.num_classes}], got {x.shape}")
        p = self.params
        pre = T.add(
            T.add(T.matmul(p["lstm.input_weights"], T.reshape(x, (-1, 1))),
                  T.matmul(p["lstm.hidden_weights"], T.reshape(state.hidden, (-1, 1)))),
            T.reshape(p["lstm.gate_bias"], (-1, 1)))
        pre = T.reshape(pre, (4 * hidden,))
        gate_in = T.sigmoid(T.narrow(pre, 0, 0, hidden))
        gate_forget = T.sigmoid(T.narrow(pre, 0, hidden, hidden))
        gate_out = T.sigmoid(T.narrow(pre, 0, 2 * hidden, hidden))
        candidate = T.tanh(T.narrow(pre, 0, 3 * hidden, hidden))
        cell = T.add(T.mul(gate_forget, state.cell), T.mul(gate_in, candidate))
        return LstmState(hidden=T.mul(gate_out, T.tanh(cell)), cell=cell)

    def sequence_forward(self, sequence: Tensor) -> Tensor:
        """[steps, N, 1] sequence -> N-way distribution from the final state."""
        expected = (self.sequence_length, self.num_classes, 1)
        if sequence.shape != expected:
            raise DimensionError(f"sequence must be {expected}, got {sequence.shape}")
        state = self.initial_state()
        for t in range(self.sequence_length):
            x = T.reshape(T.narrow(sequence, 0, t, 1), (self.num_classes,))
            state = self.step(x, state)
        p = self.params
        logits = T.add(
            T.matmul(p["lstm.classifier_weights"], T.reshape(state.hidden, (-1, 1))),
            T.reshape(p["lstm.classifier_bias"], (-1, 1)))
        return T.softmax(T.reshape(logits, (self.num_classes,)))


def classify(probs: Tensor) -> int:
    """Argmax class; ties resolve to the lowest index."""
    return int(np.argmax(probs.data))
