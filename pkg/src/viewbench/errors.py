"""Exception hierarchy shared across the benchmark pipeline.

Everything raised on bad *data* derives from PipelineError so the CLI can
map it to exit code 2; usage problems are handled separately (exit code 1).
"""


class PipelineError(Exception):
    """Base class for data-dependent failures."""


class ParseError(PipelineError):
    """A text input does not follow its declared line format."""


class StructuralError(PipelineError):
    """Inputs are individually well-formed but mutually inconsistent."""


class FormatError(PipelineError):
    """A binary file violates its on-disk format contract."""


class DomainError(PipelineError):
    """An argument is outside the domain an operation is defined on."""


class EmptyBankError(PipelineError):
    """A memory bank build produced zero candidate entries."""
