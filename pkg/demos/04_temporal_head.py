"""The LSTM head alone: classifying by temporal drift.

Per-frame class distributions are all the temporal head ever sees. Here the
two classes share the same value range and differ only in drift direction,
so a per-frame classifier cannot beat chance while the LSTM separates them.
"""

import numpy as np

from capsroute import Config, Tape, Tensor, classify, lstm_loss
from capsroute.lstm import TemporalLstm
from capsroute.training import adam_step, init_adam, zero_gradients

cfg = Config(num_classes=2, lstm_hidden=16, sequence_length=16).validate()
rng = np.random.default_rng(1)
lstm = TemporalLstm(cfg, rng)

def make_clip(label):
    slope = 0.02 if label == 0 else -0.02
    start = 0.5 - slope * 8  # both classes average 0.5 over the clip
    p = np.clip(start + slope * np.arange(16) + rng.normal(scale=0.01, size=16), 0.02, 0.98)
    return np.stack([p, 1.0 - p], axis=1)[:, :, None]

clips = [(make_clip(i % 2), i % 2) for i in range(32)]
print("clip-averaged channel-0 probability per class (indistinguishable):",
      [round(float(np.mean([c[:, 0, 0].mean() for c, lab in clips if lab == l])), 3)
       for l in (0, 1)])

optimizer = init_adam(lstm.params, learning_rate=0.01)
for step in range(200):
    zero_gradients(lstm.params)
    for clip, label in (clips[(2 * step) % 32], clips[(2 * step + 1) % 32]):
        with Tape() as tape:
            loss = lstm_loss(lstm.sequence_forward(Tensor(clip)), label)
        tape.backward(loss)
    adam_step(lstm.params, optimizer)
    if step % 50 == 49:
        hits = sum(classify(lstm.sequence_forward(Tensor(c))) == l for c, l in clips)
        print(f"step {step + 1:3d}: {hits}/32 clips correct")
