"""Exception types shared across the package."""


class ParseError(ValueError):
    """A data file row could not be parsed; message carries file:line."""


class IntegrityError(ValueError):
    """A reference points at an entity or file that does not exist."""


class ConfigError(ValueError):
    """A configuration value is outside its allowed range."""


class FormatError(ValueError):
    """A binary container or manifest does not match the expected layout."""


class SamplingError(RuntimeError):
    """A sampling request cannot be satisfied (e.g. no negatives exist)."""


class MetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class DegenerateDataError(ValueError):
    """Input data has no usable structure (e.g. rank-0 PCA input)."""


class NumericError(RuntimeError):
    """Training produced non-finite values; message names the step."""


class DependencyError(FileNotFoundError):
    """A required upstream artifact (checkpoint, dataset) is missing."""
