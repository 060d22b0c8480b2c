"""Exception hierarchy shared by all partgraph modules.

The CLI maps these onto distinct exit codes: usage errors are handled by
argparse (2), InputError -> 3, the parse/validation/config family -> 4.
"""


class PartGraphError(Exception):
    """Base class for every error raised by this package."""


class ParseError(PartGraphError):
    """A byte stream or text document does not conform to its format."""


class ValidationError(PartGraphError):
    """A structurally well-formed object violates a model invariant."""


class ConfigError(PartGraphError):
    """A configuration value is out of its legal range or inconsistent."""


class InputError(PartGraphError):
    """Inputs are missing or mutually inconsistent (e.g. id mismatches)."""


class MetricError(PartGraphError):
    """A metric is undefined for the given inputs (e.g. too few images)."""
