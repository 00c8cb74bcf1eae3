"""Whole system at small scale: generate data, train, evaluate.

Uses 24x24 frames and 8-step clips so the run finishes in seconds; the same
flow at working scale is one `capsroute synth` + `capsroute train` +
`capsroute eval` away (see README).
"""

import tempfile
from pathlib import Path

from capsroute import Config, evaluate, generate_synthetic, train

work = Path(tempfile.mkdtemp(prefix="capsroute_demo_"))
manifest = generate_synthetic(num_classes=2, sequences_per_class=8, seed=11,
                              out_dir=work / "data", side=24, frame_count=8)
print("dataset manifest:", manifest)

cfg = Config(num_classes=2, frame_size=24, sequence_length=8, conv_channels=(8, 12, 2),
             primary_capsule_dim=4, lstm_hidden=8, decoder_hidden_sizes=(16, 32),
             batch_size=2, epochs=25, learning_rate=1e-3, augment=False,
             untied_routing=True, test_fraction=0.25, seed=0).validate()

record = train(cfg, manifest, work / "run",
               progress=lambda e: print(
                   f"epoch {e.epoch:2d}  total {e.total:.4f}  "
                   f"train {e.train_accuracy:.2f}  test {e.test_accuracy:.2f}"))

accuracy, matrix = evaluate(work / "run" / "best.caps", manifest, "test", out_dir=work / "eval")
print()
print(matrix.to_table())
print(f"\nbest-checkpoint test accuracy: {accuracy:.2f}")
print(f"artifacts under {work}")
