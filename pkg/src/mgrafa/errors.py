"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor extents do not agree."""


class ConfigurationError(ValueError):
    """A configuration value is inconsistent with the data it is applied to."""


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class DegenerateBatchError(ValueError):
    """Batch statistics are undefined for the presented batch."""


class NonFiniteError(FloatingPointError):
    """NaN or Inf appeared in a computed value."""


class UnsupportedBuildError(RuntimeError):
    """A feature was requested that this build has disabled."""


class FormatError(ValueError):
    """A file on disk does not follow the expected layout."""


class BatchCompositionError(ValueError):
    """A mini-batch violates the identity/positive/negative requirements."""


class SamplingError(ValueError):
    """Not enough data to draw the requested sample."""


class DataError(ValueError):
    """A tracklet cannot satisfy a sampling request."""
