"""Exception hierarchy shared across the pipeline.

Each error class carries the process exit code the CLI maps it to:
schema errors 2, configuration errors 3, numeric aborts 4, missing inputs 5.
"""


class PipelineError(Exception):
    """Base class for pipeline failures with a CLI exit code."""

    exit_code = 1


class SchemaError(PipelineError):
    """Input file violates a documented schema (missing column, bad rows)."""

    exit_code = 2


class ConfigError(PipelineError):
    """Invalid or inconsistent configuration."""

    exit_code = 3


class NumericError(PipelineError):
    """Numeric abort, e.g. a non-finite training loss."""

    exit_code = 4


class MissingInputError(PipelineError):
    """A required input file or directory does not exist."""

    exit_code = 5


class UndefinedMetricError(NumericError):
    """A metric is mathematically undefined for the given inputs."""
