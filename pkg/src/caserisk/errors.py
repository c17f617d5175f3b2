"""Exception taxonomy shared across the pipeline.

Plain I/O failures (missing files, unreadable paths) are left to the
builtin OSError family; everything the pipeline itself can reject gets a
class here so the CLI can categorize failures.
"""


class PipelineError(Exception):
    """Base class for all pipeline-raised errors."""


class InputError(PipelineError):
    """A precondition on operation inputs was violated."""


class EmptyInputError(InputError):
    """An operation received an empty collection it cannot work with."""


class EmptyCorpusError(PipelineError):
    """A corpus file contained lines but no valid record."""


class MalformedRecordError(PipelineError):
    """A raw record is missing required fields or has bad field types."""


class DegenerateTableError(PipelineError):
    """A contingency table cannot support the requested test."""


class InsufficientPoolError(PipelineError):
    """The sampling pool cannot supply the requested number of clusters."""

    def __init__(self, message, deficits=None):
        super().__init__(message)
        self.deficits = dict(deficits or {})


class UnsplittableError(PipelineError):
    """A labeled set cannot be split while keeping both classes on each side."""


class UndefinedMetricError(PipelineError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class DegenerateTrainingError(PipelineError):
    """Training data does not contain both classes."""


class RuleCompilationError(PipelineError):
    """An indicator rule is malformed; carries the rule name."""

    def __init__(self, rule_name, message):
        super().__init__(f"rule {rule_name!r}: {message}")
        self.rule_name = rule_name


class ConfigError(PipelineError):
    """Pipeline configuration is invalid; message names the offending key."""
