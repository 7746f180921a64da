"""Exception types shared across the toolkit."""


class LastLayerError(Exception):
    """Base class for all toolkit errors."""


class FormatError(LastLayerError):
    """A binary or CSV file does not match the expected layout."""


class ValidationError(LastLayerError):
    """Data violates a dataset invariant (shape, range, or finiteness)."""


class ParameterError(LastLayerError):
    """An argument is outside its documented range."""


class MissingAnnotationError(LastLayerError):
    """An operation needs annotations (domains, clean labels) that are absent."""


class ShapeError(LastLayerError):
    """Array dimensions do not line up."""


class DegenerateDataError(LastLayerError):
    """Training data cannot support a fit (e.g. only one class present)."""


class DivergenceError(LastLayerError):
    """An optimizer produced a non-finite loss or objective."""


class DegenerateSelectionError(LastLayerError):
    """A subsampling step produced an unusable (empty or one-sided) set."""


class EvaluationError(LastLayerError):
    """Evaluation preconditions are violated (e.g. an empty group)."""


class AggregationError(LastLayerError):
    """Aggregation was asked for an empty result cell."""


class ConfigError(LastLayerError):
    """A sweep or CLI configuration file is invalid."""
