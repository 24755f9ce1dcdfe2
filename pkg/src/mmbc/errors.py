"""Exception types shared across the package."""


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DomainError(ValueError):
    """Input values outside the mathematical domain of an operation."""


class ContractError(ValueError):
    """A caller violated a documented precondition."""


class TrainingDivergedError(RuntimeError):
    """Loss or gradients became non-finite during training.

    Carries the last finite parameter set on the ``params`` attribute so a
    caller can checkpoint it.
    """

    def __init__(self, message, params=None):
        super().__init__(message)
        self.params = params


class CheckpointError(RuntimeError):
    """Checkpoint file is malformed or incompatible with the requested config."""


class DatasetError(ValueError):
    """Dataset file is malformed; message includes the offending line number."""


class ExpertFailureError(RuntimeError):
    """A scripted expert exhausted its retry budget without succeeding."""


class RolloutError(RuntimeError):
    """A policy produced a non-finite action during a rollout."""
