"""Capsule encoder: convolution stack, primary capsules, agreement routing.

A grayscale frame becomes a matrix of one capsule vector per class. The norm
of each row is read as the probability that the class is present; the
direction carries instantiation detail used by the reconstruction decoder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import Config
from .errors import ConfigError, DimensionError
from .tensor import Tensor, parameter

squash = T.squash
squash_rows = T.squash_rows


@dataclass
class RoutingState:
    """Final agreement state: per-pair logits and their row-softmax couplings."""

    logits: np.ndarray     # [P, N], zero before the first iteration
    couplings: np.ndarray  # [P, N], each row sums to 1


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def compute_votes(primary: Tensor, weights: Tensor) -> Tensor:
    """Per-pair predictions: vote[i, j] = weights[i, j] applied to capsule i.

    ``primary`` is [P, d_p]; ``weights`` is [P, N, d_p, out_dim].
    """
    if primary.ndim != 2 or weights.ndim != 4 or weights.shape[0] != primary.shape[0] \
            or weights.shape[2] != primary.shape[1]:
        raise DimensionError(
            f"votes need primary [P,d] and weights [P,N,d,out], got {primary.shape} and {weights.shape}"
        )
    return T.einsum("pd,pnds->pns", primary, weights)


def compute_votes_shared(primary: Tensor, weights: Tensor, positions: int) -> Tensor:
    """Votes with one weight matrix per capsule channel, shared across positions.

    ``primary`` is [C * positions, d_p] ordered channel-major; ``weights`` is
    [C, N, d_p, out_dim].
    """
    if weights.ndim != 4 or primary.ndim != 2:
        raise DimensionError(f"bad vote shapes: {primary.shape} and {weights.shape}")
    channels = weights.shape[0]
    if primary.shape[0] != channels * positions or primary.shape[1] != weights.shape[2]:
        raise DimensionError(
            f"shared votes need primary [{channels * positions},{weights.shape[2]}], got {primary.shape}"
        )
    grouped = T.reshape(primary, (channels, positions, primary.shape[1]))
    votes = T.einsum("cpd,cnds->cpns", grouped, weights)
    return T.reshape(votes, (channels * positions, weights.shape[1], weights.shape[3]))


def route_couplings(votes: np.ndarray, iterations: int):
    """Plain-array routing loop; returns the per-iteration logits/couplings trail.

    Used by dynamic_routing for the non-differentiated agreement updates and
    by tests that inspect every iteration.
    """
    count, _, _ = votes.shape
    logits = np.zeros((count, votes.shape[1]))
    trail = []
    for _ in range(iterations):
        couplings = _softmax_rows(logits)
        summed = np.einsum("pn,pns->ns", couplings, votes, optimize=True)
        norms = np.sqrt((summed * summed).sum(axis=1, keepdims=True))
        squashed = summed * (norms / (1.0 + norms * norms))
        trail.append((logits.copy(), couplings.copy(), squashed.copy()))
        logits = logits + np.einsum("ns,pns->pn", squashed, votes, optimize=True)
    return trail


def dynamic_routing(votes: Tensor, iterations: int, return_state: bool = False):
    """Iterative agreement routing of votes [P, N, out_dim] to capsules [N, out_dim].

    Each round: couplings = row-softmax of logits; the coupled vote sum is
    squashed into the output capsules; logits grow by the dot product of each
    vote with the capsule it fed. Gradients flow through the final round's
    weighted sum only; couplings are treated as constants.
    """
    if iterations < 1:
        raise ConfigError(f"routing iterations must be >= 1, got {iterations}")
    if votes.ndim != 3:
        raise DimensionError(f"routing expects votes [P,N,dim], got shape {votes.shape}")

    trail = route_couplings(votes.data, iterations)
    final_logits, final_couplings, _ = trail[-1]
    summed = T.einsum("pn,pns->ns", Tensor(final_couplings), votes)
    capsules = T.squash_rows(summed)
    if return_state:
        return capsules, RoutingState(logits=final_logits, couplings=final_couplings)
    return capsules


def capsule_probabilities(capsules: Tensor) -> Tensor:
    """Row norms pushed through softmax: the per-frame class distribution."""
    return T.softmax(T.l2norm_rows(capsules))


def _conv_output_side(side: int, kernel: int, stride: int) -> int:
    return (side - kernel) // stride + 1


class CapsuleEncoder:
    """Frame -> class-capsule matrix, per the configured convolution stack.

    Stack: 3x3 conv stride 1 + relu, 3x3 conv stride 2 + relu, then a 3x3
    stride-2 convolution whose channels are grouped into primary capsule
    vectors, squashed, and routed to the class capsules.
    """

    def __init__(self, cfg: Config, rng: np.random.Generator):
        c1, c2, caps_channels = cfg.conv_channels
        d_p = cfg.primary_capsule_dim
        side = cfg.frame_size
        for kernel, stride in ((3, 1), (3, 2), (3, 2)):
            side = _conv_output_side(side, kernel, stride)
            if side < 1:
                raise ConfigError(f"frame_size {cfg.frame_size} too small for the conv stack")
        self.cfg = cfg
        self.grid_side = side
        self.positions = side * side
        self.capsule_channels = caps_channels
        self.primary_count = caps_channels * self.positions

        def conv_init(shape, fan_in):
            # He-style bound with a small positive bias partner keeps the relu
            # stack responsive; tighter scales were measured to attenuate the
            # primary capsule norms below 0.01, starving squash gradients
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape)

        n, s = cfg.num_classes, cfg.capsule_dim
        self.params = {
            "encoder.conv1.kernels": parameter(conv_init((c1, 1, 3, 3), 9), "encoder.conv1.kernels"),
            "encoder.conv1.bias": parameter(np.full(c1, 0.1), "encoder.conv1.bias"),
            "encoder.conv2.kernels": parameter(conv_init((c2, c1, 3, 3), 9 * c1), "encoder.conv2.kernels"),
            "encoder.conv2.bias": parameter(np.full(c2, 0.1), "encoder.conv2.bias"),
            "encoder.conv3.kernels": parameter(
                conv_init((caps_channels * d_p, c2, 3, 3), 9 * c2), "encoder.conv3.kernels"),
            "encoder.conv3.bias": parameter(np.full(caps_channels * d_p, 0.1), "encoder.conv3.bias"),
        }
        # vote sums run over every primary capsule position, so the weight
        # scale shrinks with the grid to keep class capsule norms off the
        # squash saturation plateau at the start of training
        w_shape = (self.primary_count if cfg.untied_routing else caps_channels, n, d_p, s)
        w_bound = 0.5 / np.sqrt(d_p * self.primary_count)
        self.params["encoder.routing.weights"] = parameter(
            rng.uniform(-w_bound, w_bound, size=w_shape), "encoder.routing.weights")

    def primary_capsules(self, frame: Tensor) -> Tensor:
        """Squashed primary capsule vectors [P, d_p] for one frame."""
        cfg = self.cfg
        if frame.shape != (1, cfg.frame_size, cfg.frame_size):
            raise DimensionError(
                f"encoder expects frame [1,{cfg.frame_size},{cfg.frame_size}], got {frame.shape}")
        p = self.params
        h = T.relu(T.conv2d(frame, p["encoder.conv1.kernels"], 1, p["encoder.conv1.bias"]))
        h = T.relu(T.conv2d(h, p["encoder.conv2.kernels"], 2, p["encoder.conv2.bias"]))
        h = T.conv2d(h, p["encoder.conv3.kernels"], 2, p["encoder.conv3.bias"])
        d_p = cfg.primary_capsule_dim
        # channels [C*d_p, g, g] -> capsule-major rows [C*g*g, d_p]
        grouped = T.reshape(h, (self.capsule_channels, d_p, self.grid_side, self.grid_side))
        ordered = T.transpose(grouped, (0, 2, 3, 1))
        return T.squash_rows(T.reshape(ordered, (self.primary_count, d_p)))

    def forward(self, frame: Tensor) -> Tensor:
        """Class-capsule matrix [num_classes, capsule_dim] for one frame."""
        primary = self.primary_capsules(frame)
        weights = self.params["encoder.routing.weights"]
        if self.cfg.untied_routing:
            votes = compute_votes(primary, weights)
        else:
            votes = compute_votes_shared(primary, weights, self.positions)
        return dynamic_routing(votes, self.cfg.routing_iterations)
