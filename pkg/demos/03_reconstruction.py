"""Masked-capsule reconstruction as a trainable regularizer.

Encodes one frame, decodes the winning capsule back to pixels, then takes a
few optimization steps on margin + reconstruction loss and reports how the
pixel error drops. Writes before/after PNGs next to this script.
"""

from pathlib import Path

import numpy as np

from capsroute import Config, Tape, Tensor, margin_loss, mask, reconstruction_loss
from capsroute import tensor as T
from capsroute.decoder import CapsuleDecoder
from capsroute.encoder import CapsuleEncoder
from capsroute.pipeline import write_frame_file
from capsroute.training import adam_step, init_adam, zero_gradients

cfg = Config(num_classes=2, frame_size=16, sequence_length=4, conv_channels=(4, 6, 2),
             primary_capsule_dim=4, decoder_hidden_sizes=(32, 64), lstm_hidden=8).validate()
rng = np.random.default_rng(3)
encoder = CapsuleEncoder(cfg, rng)
decoder = CapsuleDecoder(cfg, rng)
params = {**encoder.params, **decoder.params}
optimizer = init_adam(params, learning_rate=0.01)

frame = np.full((1, 16, 16), 0.1)
frame[0, 4:12, 6:10] = 0.9  # a bright block to reproduce
label = 0

out_dir = Path(__file__).parent / "output"
out_dir.mkdir(exist_ok=True)
write_frame_file(out_dir / "target.png", frame)

for step in range(120):
    zero_gradients(params)
    with Tape() as tape:
        capsules = encoder.forward(Tensor(frame))
        image = decoder.decode(mask(capsules, true_label=label))
        recon = reconstruction_loss(Tensor(frame), image)
        loss = T.add(margin_loss(capsules, label), recon)
    tape.backward(loss)
    adam_step(params, optimizer)
    if step == 0:
        write_frame_file(out_dir / "reconstruction_start.png", image.data)
    if step % 30 == 0:
        pixel_rmse = float(np.sqrt(np.mean((image.data - frame) ** 2)))
        print(f"step {step:3d}  reconstruction loss {recon.item():.3e}  pixel rmse {pixel_rmse:.3f}")

write_frame_file(out_dir / "reconstruction_end.png", image.data)
print(f"wrote target / start / end PNGs to {out_dir}")
