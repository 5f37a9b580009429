"""Exception hierarchy shared by the whole toolkit.

The CLI maps these onto exit codes: validation/format/parse problems are
exit 2, plain I/O failures (OSError) are exit 1.
"""


class CytoFuseError(Exception):
    """Base class for all toolkit errors."""


class ParseError(CytoFuseError):
    """A file is structurally broken (bad magic, truncated payload, ...)."""


class FormatError(CytoFuseError):
    """A file is well-formed but not in the one supported format."""


class ValidationError(CytoFuseError):
    """Data violates a contract (simplex, label range, manifest, ...)."""
