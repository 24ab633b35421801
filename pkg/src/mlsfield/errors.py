"""Exception hierarchy.

Data problems (bad files, inconsistent shapes) derive from :class:`DataError`;
failures of the numerics (singular moment matrices, lost coverage, divergence)
derive from :class:`NumericalError`.  The command line maps the two families
to distinct exit codes.
"""


class DataError(ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class NumericalError(RuntimeError):
    pass


class SingularMomentError(NumericalError):
    """Moment matrix too close to singular at an evaluation point."""

    def __init__(self, message, sigma_min=None, support_count=None):
        self.sigma_min = sigma_min
        self.support_count = support_count
        super().__init__(message)


class NodeCoincidenceError(NumericalError):
    pass


class CoverageError(NumericalError):
    """Raised when some evaluation points lack 4 non-planar supporting nodes.

    ``uncovered`` holds the indices of the offending points.
    """

    def __init__(self, message, uncovered=()):
        self.uncovered = list(uncovered)
        super().__init__(message)


class RbfConditioningError(NumericalError):
    def __init__(self, message, condition=None):
        self.condition = condition
        super().__init__(message)


class FitDivergenceError(NumericalError):
    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)
