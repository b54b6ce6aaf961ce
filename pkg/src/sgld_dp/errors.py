"""Exception types shared across the package."""


class SgldDpError(Exception):
    """Base class for all package errors."""


class DomainViolation(SgldDpError, ValueError):
    pass


class HypothesisViolated(SgldDpError, ValueError):
    """A lower bound on n (or similar gate) required by a bound was not met.

    Attributes:
        bound: short name of the failed inequality.
        required: the value that had to be exceeded.
        actual: the value supplied.
    """

    def __init__(self, bound: str, required: float, actual: float):
        self.bound = bound
        self.required = required
        self.actual = actual
        super().__init__(f"hypothesis '{bound}' failed: need > {required:.6g}, got {actual:.6g}")


class DivergenceUndefined(SgldDpError, ValueError):
    pass


class NoAdmissibleNu(SgldDpError, ValueError):
    pass


class NonPositiveKdot(SgldDpError, ValueError):
    pass


class DeltaTooLarge(SgldDpError, ValueError):
    pass


class InfeasibleTarget(SgldDpError, ValueError):
    pass


class DegenerateCount(SgldDpError, ValueError):
    pass


class TooFewSamples(SgldDpError, ValueError):
    pass


class RadiusBelowResolution(SgldDpError, ValueError):
    pass


class ConfigError(SgldDpError, ValueError):
    pass
