"""Exception types shared across the toolkit.

Everything raised on purpose derives from ToolkitError so the CLI can map
domain failures to a single exit code while genuine bugs still surface as
ordinary tracebacks.
"""


class ToolkitError(Exception):
    """Base class for anticipated domain errors."""


class InfeasibleError(ToolkitError):
    """The linear program / polyhedron has no feasible point."""


class UnboundedError(ToolkitError):
    """The linear program is unbounded in the requested direction."""


class IntegrationDivergedError(ToolkitError):
    """State or density became non-finite during numerical integration."""


class TrainingDivergedError(ToolkitError):
    """Training loss became non-finite."""


class CheckpointFormatError(ToolkitError):
    """Checkpoint payload is malformed."""


class UnsupportedVersionError(CheckpointFormatError):
    """Checkpoint/cache version not understood by this build."""


class CellBudgetError(ToolkitError):
    """Cell enumeration exceeded its cell budget."""


class DimensionalityError(ToolkitError):
    """Estimator cannot operate in this many dimensions."""


class PathologicalTruncationError(ToolkitError):
    """Rejection sampling acceptance rate collapsed."""
