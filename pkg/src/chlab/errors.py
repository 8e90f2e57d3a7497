"""Exception hierarchy. CLI maps ``ChlabError`` subclasses to exit codes."""


class ChlabError(Exception):
    exit_code = 1


class NumericalFailure(ChlabError):
    """A quadrature, eigen-iteration or root find failed to converge."""


class PreconditionError(ChlabError, ValueError):
    """An operation was called outside its domain."""

    exit_code = 2


class NoProfileError(PreconditionError):
    """Gap at or below the bifurcation length: no nontrivial optimal profile."""


class AssociationError(ChlabError):
    """Too few zeros to associate with the reference profile."""

    def __init__(self, message, raw_count=None):
        super().__init__(message)
        self.raw_count = raw_count


class BlowUpError(ChlabError):
    """Non-finite samples after a time step."""


class StiffnessError(ChlabError):
    """Step size fell below dt_min with continued rejections."""


class InfeasibleError(ChlabError):
    """Initial-data targets cannot be met."""


class ConfigError(ChlabError):
    exit_code = 2


class SuiteFailure(ChlabError):
    """A verification suite found violations."""


class InapplicableError(ChlabError):
    """A check does not apply to the given field (e.g. it has no zero)."""


class FitError(ChlabError):
    """Too few usable points for a scaling fit."""
