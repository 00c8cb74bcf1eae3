"""capsroute: a from-scratch capsule-routing video sequence classifier.

The package provides a small reverse-mode autodiff tensor core, a capsule
encoder with iterative agreement routing, a reconstruction decoder, an LSTM
temporal head, the three-part joint loss with its ablation variants, a
frame-clip data pipeline with a synthetic dataset generator, and an Adam
training/evaluation harness. See README.md for the file formats and the CLI.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, load_config, parse_config
from .decoder import CapsuleDecoder, MaskedCapsule, mask
from .encoder import (
    CapsuleEncoder,
    RoutingState,
    capsule_probabilities,
    compute_votes,
    compute_votes_shared,
    dynamic_routing,
    squash,
)
from .lstm import LstmState, TemporalLstm, classify
from .losses import (
    LossBreakdown,
    LossConfig,
    lstm_loss,
    margin_loss,
    margin_loss_on_probs,
    reconstruction_loss,
    total_loss,
)
from .model import SequenceClassifier, build_model
from .pipeline import (
    DatasetManifest,
    FrameSequence,
    augment_x8,
    generate_synthetic,
    load_dataset,
    load_manifest,
    normalize_frame,
    preprocess_tree,
    select_middle_frames,
)
from .tensor import Tape, Tensor, parameter
from .training import (
    AdamState,
    ConfusionMatrix,
    RunRecord,
    adam_step,
    evaluate,
    init_adam,
    run_ablation,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CapsuleDecoder", "CapsuleEncoder", "Config", "ConfusionMatrix",
    "DatasetManifest", "FrameSequence", "LossBreakdown", "LossConfig", "LstmState",
    "MaskedCapsule", "RoutingState", "RunRecord", "SequenceClassifier", "Tape", "TemporalLstm", "Tensor",
    "adam_step", "augment_x8", "build_model", "capsule_probabilities", "classify",
    "compute_votes", "compute_votes_shared", "dynamic_routing", "evaluate",
    "generate_synthetic", "init_adam", "load_checkpoint", "load_config", "load_dataset",
    "load_manifest", "lstm_loss", "margin_loss", "margin_loss_on_probs", "mask",
    "normalize_frame", "parameter", "parse_config", "preprocess_tree",
    "reconstruction_loss", "run_ablation", "save_checkpoint", "select_middle_frames",
    "squash", "total_loss", "train",
]
