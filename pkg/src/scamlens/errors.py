"""Exception types raised by the pipeline.

All of these derive from ScamlensError so the CLI can map any pipeline
failure to a nonzero exit with the originating error name.
"""


class ScamlensError(Exception):
    """Base class for all pipeline errors."""


# ingest
class MalformedReport(ScamlensError):
    """Address report is not valid JSON or misses a required field."""


class InvalidRecord(ScamlensError):
    """A transaction record violates a value constraint."""


class SourceUnavailable(ScamlensError):
    """A report source failed after exhausting its retries."""


class DegenerateClass(ScamlensError):
    """A class has too few rows to split."""


# features
class EmptyHistory(ScamlensError):
    """Feature extraction requires at least one transaction."""


class TooFewRows(ScamlensError):
    """An operation needs more rows than the table provides."""


class DimensionMismatch(ScamlensError):
    """Table width does not match the fitted object."""


# resampling
class SingleClass(ScamlensError):
    """Resampling needs at least two classes."""


class TooFewMinority(ScamlensError):
    """A minority class is not larger than the neighbor count k."""


# neural
class ShapeMismatch(ScamlensError):
    """Tensor shapes are inconsistent with the declared hidden size."""


# trees
class EmptyNode(ScamlensError):
    """Gini index is undefined for an empty node."""


class UntrainedModel(ScamlensError):
    """The model holds no trained trees."""


# evaluation
class LengthMismatch(ScamlensError):
    """Prediction and truth sequences differ in length or are empty."""


class EmptyMatrix(ScamlensError):
    """Metrics are undefined for an all-zero confusion matrix."""
