"""Error taxonomy shared by the engine, pipeline, trainer and CLI.

Every error carries a short machine-parseable ``code`` so the CLI can emit
``ERROR <code>: <message>`` on a single line.
"""


class MsrnError(Exception):
    code = "error"


class ShapeError(MsrnError):
    """Tensor extents do not satisfy an operation's contract."""

    code = "shape"


class NumericError(MsrnError):
    """A NaN or Inf was produced; never propagated silently."""

    code = "numeric"


class ConfigError(MsrnError):
    """Invalid configuration value or unknown config key."""

    code = "config"


class DataError(MsrnError):
    """Labels, splits or values violate a data contract."""

    code = "data"


class UsageError(MsrnError):
    """An API object was used outside its lifecycle (e.g. a spent tape)."""

    code = "usage"


class FormatError(MsrnError):
    """A binary artifact could not be decoded."""

    code = "format"


class BadMagicError(FormatError):
    code = "format-magic"


class TruncatedFileError(FormatError):
    code = "format-truncated"


class DimensionMismatchError(FormatError):
    code = "format-dims"
