"""Exception hierarchy shared by all modules."""


class RnnMimicError(Exception):
    """Base class for all library errors."""


class DimensionError(RnnMimicError):
    """Array shapes or widths do not match the operation's contract."""


class ParameterError(RnnMimicError):
    """A scalar parameter is outside its admissible range."""


class ValidationError(RnnMimicError):
    """Input data violates a structural invariant (e.g. not a probability vector)."""


class NumericError(RnnMimicError):
    """A numerical routine failed or produced non-finite values."""


class StructureError(RnnMimicError):
    """A Markov chain lacks the structure required by the operation."""


class UndefinedRowError(RnnMimicError):
    """A conditional row is undefined because its conditioning event has zero mass."""


class StateError(RnnMimicError):
    """An object is missing stored state required by the operation."""


class DataError(RnnMimicError):
    """A data selection is empty or otherwise unusable."""


class PoleError(RnnMimicError):
    """Evaluation exactly at the pole of a conformal map."""


class ConfigError(RnnMimicError):
    """A configuration file or record failed validation."""


class ConfigDriftError(ConfigError):
    """A stored digest no longer matches the configuration it was computed from."""


class FormatError(RnnMimicError):
    """A serialized file is malformed or truncated."""


class InterventionSpecError(RnnMimicError):
    """An intervention targets the same neuron with incompatible modes."""
