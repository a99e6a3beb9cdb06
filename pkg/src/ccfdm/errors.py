"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Shapes, dimensions or hyperparameters that cannot work together."""


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition (e.g. backward on a non-scalar)."""


class DivergenceError(FloatingPointError):
    """A loss, gradient or similarity became non-finite."""


class NotReadyError(RuntimeError):
    """The replay buffer holds fewer transitions than requested."""


class CheckpointError(IOError):
    """A checkpoint file is truncated, corrupted or from another format version."""
