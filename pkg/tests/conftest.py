"""Shared numerical test helpers.

The central-difference checker below is the independent oracle for every
analytic gradient in the package: it only ever calls the forward pass.
"""

import numpy as np
import pytest

from capsroute.tensor import Tape


def central_difference(forward, tensors, h=1e-4):
    """Numeric gradient of ``forward()`` w.r.t. each tensor's data.

    ``forward`` must rebuild the computation from the tensors' current data
    and return a plain float. Entries are perturbed in place.
    """
    grads = []
    for t in tensors:
        flat = t.data.ravel()
        g = np.zeros_like(flat)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = forward()
            flat[i] = saved - h
            down = forward()
            flat[i] = saved
            g[i] = (up - down) / (2.0 * h)
        grads.append(g.reshape(t.data.shape))
    return grads


def analytic_gradients(build_loss, tensors):
    """Backward-pass gradients of ``build_loss()`` w.r.t. ``tensors``."""
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    return [np.zeros_like(t.data) if t.grad is None else t.grad for t in tensors]


def max_relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def check_gradients(build_loss, tensors, rtol, h=1e-4, floor=1e-8):
    """Assert analytic and central-difference gradients agree for each tensor."""
    analytic = analytic_gradients(build_loss, tensors)

    def forward():
        return build_loss().item()  # no tape: pure forward

    numeric = central_difference(forward, tensors, h=h)
    for t, a, n in zip(tensors, analytic, numeric):
        err = max_relative_error(a, n, floor=floor)
        assert err < rtol, f"gradient mismatch on {t.name or t.shape}: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
