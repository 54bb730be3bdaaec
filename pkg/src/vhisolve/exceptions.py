"""Exception hierarchy shared by the solvers and the command line driver."""


class VHIError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VHIError, ValueError):
    """A required constant or configuration field is missing or invalid."""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        loc = []
        if field is not None:
            loc.append(f"field {field!r}")
        if line is not None:
            loc.append(f"line {line}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)


class WellPosednessError(VHIError):
    """The smallness conditions fail, so the solver refuses to run."""

    def __init__(self, report):
        self.report = report
        failing = ", ".join(report.failing) or "unknown"
        super().__init__(f"smallness condition violated: {failing}")


class NonConvergenceError(VHIError):
    """An iteration hit its cap before reaching the requested tolerance."""

    def __init__(self, message, iterates=None, partial=None, step=None):
        self.iterates = iterates
        self.partial = partial
        self.step = step
        super().__init__(message)


class ProjectionError(VHIError):
    """A projection oracle failed or produced non-finite output."""


class GridMismatchError(VHIError, ValueError):
    """History operators or trajectories live on incompatible time grids."""
