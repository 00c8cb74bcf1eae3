"""Exception types shared across the package."""


class CapsrouteError(Exception):
    """Base class for all package errors."""


class DimensionError(CapsrouteError):
    """Shapes of the operands do not satisfy the operation's contract."""


class ContractError(CapsrouteError):
    """An API precondition was violated (non-scalar loss, spent tape, missing gradient)."""


class ConfigError(CapsrouteError):
    """Invalid or inconsistent configuration value."""


class LabelError(CapsrouteError):
    """Class label outside the valid range or unknown to the vocabulary."""


class ManifestError(CapsrouteError):
    """Dataset manifest is malformed or references an unknown label."""


class IngestionError(CapsrouteError):
    """A frame file could not be read or decoded."""


class SequenceTooShortError(CapsrouteError):
    """A sequence has fewer frames than the required window length."""

    def __init__(self, length: int, required: int):
        self.length = length
        self.required = required
        super().__init__(f"sequence has {length} frames, need at least {required}")


class CheckpointError(CapsrouteError):
    """Checkpoint file is unreadable or does not match the architecture."""


class TrainingDiverged(CapsrouteError):
    """Loss became non-finite during training."""
