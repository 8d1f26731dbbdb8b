"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called with arguments that violate its preconditions."""


class DivergenceError(FloatingPointError):
    """A loss or gradient became non-finite during training."""


class ImageFormatError(ValueError):
    """The file is not an image format/bit depth this package can read."""


class CheckpointError(ValueError):
    """A checkpoint is malformed or does not match the expected model config."""
