"""Tape-based differentiation in five minutes.

Builds a tiny expression, runs backward, and cross-checks one gradient
against central finite differences, which is the same oracle the test suite
uses for every primitive.
"""

import numpy as np

from capsroute import Tape, parameter
from capsroute import tensor as T

rng = np.random.default_rng(0)

# y = sum(tanh(A @ B) * C): three parameters, one scalar output
a = parameter(rng.normal(size=(3, 3)), name="a")
b = parameter(rng.normal(size=(3, 3)), name="b")
c = parameter(rng.normal(size=(3, 3)), name="c")

with Tape() as tape:
    y = T.tensor_sum(T.mul(T.tanh(T.matmul(a, b)), c))
tape.backward(y)

print("loss:", y.item())
print("dL/dA row 0:", np.round(a.grad[0], 5))

# verify dL/dA[0,0] numerically: perturb, rerun the forward, difference
h = 1e-6
saved = a.data[0, 0]
a.data[0, 0] = saved + h
up = T.tensor_sum(T.mul(T.tanh(T.matmul(a, b)), c)).item()
a.data[0, 0] = saved - h
down = T.tensor_sum(T.mul(T.tanh(T.matmul(a, b)), c)).item()
a.data[0, 0] = saved
print(f"analytic {a.grad[0, 0]:+.8f}  numeric {(up - down) / (2 * h):+.8f}")

# a tape is one-shot: a second backward without a new forward raises
try:
    tape.backward(y)
except Exception as exc:
    print("second backward:", type(exc).__name__, "-", exc)
