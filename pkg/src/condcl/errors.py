"""Exception hierarchy shared by all condcl modules."""


class CondclError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatchError(CondclError):
    """Operand shapes are inconsistent."""


class ZeroRowError(CondclError):
    """A row with (near-)zero norm cannot be projected onto the sphere."""


class EmptyInputError(CondclError):
    """An operation received an empty vector where at least one entry is required."""


class BandwidthError(CondclError):
    """Kernel bandwidth must be strictly positive."""


class ArityMismatchError(CondclError):
    """Meta-data records in a comparison do not share the same arity."""


class UnknownFamilyError(CondclError):
    """Kernel family name is not one of the shipped families."""


class DegenerateWeightsError(CondclError):
    """An anchor has (near-)zero total similarity mass; the attraction weights are undefined."""


class AllSimilarError(CondclError):
    """Meta-data are effectively identical for an anchor; the dissimilarity-weighted
    negative distribution is undefined and conditional uniformity must not be used."""


class NoPositiveError(CondclError):
    """An anchor has no positive candidate."""


class RejectionBudgetError(CondclError):
    """A rejection sampler exceeded its proposal budget without an acceptance."""


class NonFiniteLossError(CondclError):
    """A (perturbed) loss evaluation returned NaN or infinity."""


class StaleCacheError(CondclError):
    """A backward pass received a cache that does not match the forward inputs."""


class FormatError(CondclError):
    """A binary file does not conform to its documented layout."""


class DegenerateLabelsError(CondclError):
    """A class is absent from the training labels; the probe cannot be fit."""


class ConfigError(CondclError):
    """A run configuration is missing, malformed, or contains unknown keys."""
