"""Watching agreement routing settle.

A handful of primary capsules vote for two output capsules; over the routing
iterations the coupling coefficients drift from uniform toward the capsule
each vote agrees with, and the output norms (read as class probabilities)
separate.
"""

import numpy as np

from capsroute import Tensor, dynamic_routing, squash
from capsroute.encoder import route_couplings

rng = np.random.default_rng(7)

# six primary capsules: four agree on a shared direction for capsule 0,
# everything else votes weakly and incoherently
agreed = rng.normal(size=4)
votes = np.zeros((6, 2, 4))
for i in range(4):
    votes[i, 0] = agreed + rng.normal(scale=0.05, size=4)
    votes[i, 1] = rng.normal(scale=0.3, size=4)
for i in (4, 5):
    votes[i] = rng.normal(scale=0.3, size=(2, 4))

print("squash keeps direction, bounds norm: |squash([3,4])| =",
      round(float(np.linalg.norm(squash(Tensor([3.0, 4.0])).data)), 4))

for logits, couplings, capsules in route_couplings(votes, iterations=4):
    norms = np.linalg.norm(capsules, axis=1)
    print(f"couplings row 0 {np.round(couplings[0], 3)}  "
          f"output norms {np.round(norms, 3)}")

final = dynamic_routing(Tensor(votes), iterations=4)
winner = int(np.argmax(np.linalg.norm(final.data, axis=1)))
print("winning capsule after routing:", winner)
