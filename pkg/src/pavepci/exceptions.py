"""Exception hierarchy shared by all modules."""


class PavePCIError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(PavePCIError, ValueError):
    """Invalid architecture, training or run configuration."""


class InputError(PavePCIError, ValueError):
    """A tensor, image or array does not satisfy an operation's preconditions."""


class ManifestError(PavePCIError, ValueError):
    """Malformed manifest file. ``rows`` lists the offending 1-based data rows."""

    def __init__(self, message, rows=()):
        super().__init__(message)
        self.rows = list(rows)


class UndefinedMetricError(PavePCIError, ValueError):
    """A metric cannot be computed for the given predictions."""


class CheckpointError(PavePCIError):
    """Checkpoint file is corrupt, from another format version, or does not match the model."""


class SpecMismatchError(CheckpointError):
    pass


class UnsupportedModelError(PavePCIError, TypeError):
    """Operation needs a capability (e.g. CBAM blocks) the model does not have."""


class TrainingDivergedError(PavePCIError, FloatingPointError):
    """Loss or gradients became non-finite during training."""

    def __init__(self, message, epoch=None, batch_index=None, lr=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.lr = lr


class GradientCheckError(PavePCIError, FloatingPointError):
    """Analytic or numeric gradient is non-finite."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate
