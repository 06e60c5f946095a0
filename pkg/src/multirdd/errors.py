"""Exception hierarchy.

Input problems derive from :class:`RDDValidationError` (a ``ValueError``);
numerical breakdowns derive from :class:`RDDNumericalError` (an
``ArithmeticError``).  The command line maps the first family to exit code 2
and the second to exit code 1.
"""


class RDDError(Exception):
    """Base class for all package errors."""


class RDDValidationError(RDDError, ValueError):
    pass


class RDDNumericalError(RDDError, ArithmeticError):
    pass


class UnorderedCutoffs(RDDValidationError):
    pass


class EmptyWindow(RDDValidationError):
    """Too few distinct forcing-variable values on one side of a cutoff."""

    def __init__(self, j, side, count=None, required=None):
        self.j = j
        self.side = side
        self.count = count
        self.required = required
        msg = f"cutoff {j}: {side} window has too few distinct x values"
        if count is not None:
            msg += f" ({count} < {required})"
        super().__init__(msg)


class WindowCrossesCutoff(RDDValidationError):
    def __init__(self, j, h, limit):
        self.j = j
        super().__init__(
            f"cutoff {j}: bandwidth {h:g} reaches past the adjacent cutoff "
            f"(max {limit:g}); enable clipping or shrink it"
        )


class TooFewNeighbors(RDDValidationError):
    def __init__(self, segment, count, required):
        self.segment = segment
        super().__init__(
            f"segment {segment} has {count} observations, "
            f"nearest-neighbor residuals need {required}"
        )


class InsufficientData(RDDValidationError):
    def __init__(self, j, detail=""):
        self.j = j
        super().__init__(f"cutoff {j}: insufficient data for bandwidth selection {detail}".rstrip())


class EnumerationTooLarge(RDDValidationError):
    pass


class MissingColumn(RDDValidationError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"required column '{column}' is missing")


class SingularDesign(RDDNumericalError):
    def __init__(self, j, side, rcond):
        self.j = j
        self.side = side
        self.rcond = rcond
        super().__init__(
            f"cutoff {j}: {side} local polynomial design is singular (rcond={rcond:.3g})"
        )


class SingularLocalDesign(RDDNumericalError):
    def __init__(self, at, detail=""):
        self.at = tuple(float(a) for a in at)
        super().__init__(f"second-step design singular at point {self.at} {detail}".rstrip())


class QuadratureDivergence(RDDNumericalError):
    pass


class SingularNormalEquations(RDDNumericalError):
    pass


class NoConvergence(RDDNumericalError):
    def __init__(self, max_iter, trajectory=None):
        self.max_iter = max_iter
        self.trajectory = trajectory or []
        super().__init__(f"no convergence within {max_iter} iterations")


class SingularOmega(RDDNumericalError):
    pass


class ZeroDensityEverywhere(RDDNumericalError):
    pass


class AllGridPointsInfeasible(RDDNumericalError):
    pass


class MissingGram(RDDNumericalError):
    pass
