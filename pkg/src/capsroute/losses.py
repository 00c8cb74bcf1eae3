"""The three loss components and their configurable joint sum.

Capsule presence is trained with a two-sided hinge on row norms (bounds 0.9
and 0.1, absent classes down-weighted by 0.5), reconstruction with a scaled
per-pixel squared error (factor 0.0005), and the temporal head with a halved
cross entropy. The joint objective is the plain sum of whichever components a
run enables; the scaling factors already live inside the components.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, LabelError
from .tensor import Tensor

MARGIN_UPPER = 0.9
MARGIN_LOWER = 0.1
ABSENT_WEIGHT = 0.5
RECONSTRUCTION_SCALE = 0.0005
CROSS_ENTROPY_SCALE = 0.5
LOG_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    """Per-component values of one evaluated objective."""

    margin: float
    reconstruction: float
    lstm_ce: float
    total: float


@dataclass(frozen=True)
class LossConfig:
    """One row of the four-way loss ablation."""

    name: str
    use_reconstruction: bool
    lstm_head: str  # "cross_entropy" | "margin"

    @staticmethod
    def from_name(name: str) -> "LossConfig":
        table = {
            "mm": LossConfig("mm", False, "margin"),
            "mrm": LossConfig("mrm", True, "margin"),
            "mrc": LossConfig("mrc", True, "cross_entropy"),
            "mc": LossConfig("mc", False, "cross_entropy"),
        }
        if name not in table:
            raise ContractError(f"unknown loss config {name!r}; expected one of {sorted(table)}")
        return table[name]


def _hinge_margin(scores: Tensor, label: int) -> Tensor:
    count = scores.shape[0]
    if not 0 <= label < count:
        raise LabelError(f"label {label} outside [0, {count})")
    present = np.zeros(count)
    present[label] = 1.0
    upper_gap = T.relu(T.sub(Tensor(MARGIN_UPPER), scores))
    lower_gap = T.relu(T.sub(scores, Tensor(MARGIN_LOWER)))
    present_term = T.mul(Tensor(present), T.mul(upper_gap, upper_gap))
    absent_term = T.scale(T.mul(Tensor(1.0 - present), T.mul(lower_gap, lower_gap)), ABSENT_WEIGHT)
    return T.tensor_sum(T.add(present_term, absent_term))


def margin_loss(capsules: Tensor, label: int) -> Tensor:
    """Two-sided hinge on capsule row norms, summed over all classes."""
    if capsules.ndim != 2:
        raise DimensionError(f"margin_loss expects [N, dim] capsules, got {capsules.shape}")
    return _hinge_margin(T.l2norm_rows(capsules), label)


def margin_loss_on_probs(probs: Tensor, label: int) -> Tensor:
    """The same hinge applied to a probability vector in place of norms."""
    if probs.ndim != 1:
        raise DimensionError(f"margin_loss_on_probs expects [N], got {probs.shape}")
    return _hinge_margin(probs, label)


def reconstruction_loss(original: Tensor, reconstructed: Tensor) -> Tensor:
    """0.0005 * mean squared pixel difference."""
    if original.shape != reconstructed.shape:
        raise DimensionError(
            f"reconstruction shapes differ: {original.shape} vs {reconstructed.shape}")
    diff = T.sub(original, reconstructed)
    return T.scale(T.tensor_mean(T.mul(diff, diff)), RECONSTRUCTION_SCALE)


def lstm_loss(pred: Tensor, true_label: int) -> Tensor:
    """Halved cross entropy against the one-hot label; log floored at 1e-12."""
    if pred.ndim != 1:
        raise DimensionError(f"lstm_loss expects a distribution [N], got {pred.shape}")
    if not 0 <= true_label < pred.shape[0]:
        raise LabelError(f"label {true_label} outside [0, {pred.shape[0]})")
    picked = T.tensor_sum(T.narrow(pred, 0, true_label, 1))
    return T.scale(T.log_clamped(picked, LOG_FLOOR), -CROSS_ENTROPY_SCALE)


def lstm_head_loss(cfg: LossConfig, pred: Tensor, true_label: int) -> Tensor:
    if cfg.lstm_head == "cross_entropy":
        return lstm_loss(pred, true_label)
    return margin_loss_on_probs(pred, true_label)


def total_loss(cfg: LossConfig, margin: Tensor, lstm_head: Tensor,
               reconstruction: Optional[Tensor] = None):
    """Sum the enabled components; returns (total tensor, reported breakdown)."""
    total = T.add(margin, lstm_head)
    recon_value = 0.0
    if cfg.use_reconstruction:
        if reconstruction is None:
            raise ContractError(f"loss config {cfg.name!r} needs a reconstruction term")
        total = T.add(total, reconstruction)
        recon_value = reconstruction.item()
    breakdown = LossBreakdown(margin=margin.item(), reconstruction=recon_value,
                              lstm_ce=lstm_head.item(), total=total.item())
    return total, breakdown
