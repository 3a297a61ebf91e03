"""Exception types shared across the package.

Every failure mode a caller is expected to handle gets its own class so that
tests and the CLI can discriminate without string matching.
"""


class MultimemError(Exception):
    """Base class for all package-specific errors."""


class ZeroVectorError(MultimemError):
    """A vector with (near-)zero norm reached an operation that needs a direction."""


class EmptyInputError(MultimemError):
    """An operation received an empty array where at least one element is required."""


class DimensionMismatchError(MultimemError):
    """Query and storage disagree on the embedding dimension."""


class IndexOutOfRangeError(MultimemError):
    """A slot or sample index is outside the valid range."""


class EmptyClusterError(MultimemError):
    """A cluster id has no members, so no centroid can be formed."""


class InsufficientSamplesError(MultimemError):
    """Too few samples for the requested neighborhood size."""


class NoClustersError(MultimemError):
    """Density clustering labelled every point as noise."""


class NonPositiveProbabilityError(MultimemError):
    """A selected read probability underflowed to zero; upstream has collapsed."""


class EmptyBatchError(MultimemError):
    """A loss was asked to average over zero samples."""


class InvalidLabelError(MultimemError):
    """A class label is outside the classifier's range."""


class InvalidConfigError(MultimemError):
    """A configuration value violates its documented range or type."""


class NoValidQueriesError(MultimemError):
    """No retrieval query has a cross-camera match in the gallery."""


class DivergenceError(MultimemError):
    """Training produced a non-finite loss."""
