"""Exception hierarchy shared across the pipeline.

The CLI maps each class to a distinct exit code (see conseq.cli).
"""


class ConseqError(Exception):
    """Base class for all package errors."""


class SchemaError(ConseqError):
    """Malformed input data: missing columns, bad rows, bad manifests."""


class ConfigError(ConseqError):
    """Invalid configuration value or unknown configuration key."""


class NumericError(ConseqError):
    """Non-finite loss, failed gradient check, or other numeric breakdown."""


class ShapeError(ConseqError):
    """Tensor shape mismatch; the message carries both offending shapes."""


class InvalidInputError(ConseqError):
    """Structurally valid input the model cannot process (e.g. empty document)."""
