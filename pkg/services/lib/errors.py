"""
Error hierarchy for the nonlocal smoothness lab.

Every error carries the process exit code the CLI reports:
2 for structural problems with the input, 3 for numerical failures.
"""


class LabError(Exception):
    """Base class for all lab errors"""
    exit_code = 1


class StructuralError(LabError):
    """The problem description violates a structural hypothesis"""
    exit_code = 2


class SpecFormatError(StructuralError):
    """Malformed problem or experiment document"""


class ValidationError(StructuralError):
    """Angle, term, ellipticity or separation invariant violated"""


class ConditionK1Violation(StructuralError):
    """A boundary map is not a rotation composed with a homothety near the vertex"""

    def __init__(self, message: str, deviation: float):
        super().__init__(message)
        self.deviation = deviation


class OrbitError(StructuralError):
    """A transformation maps a conjugation point outside the point set"""


class GridConstructionError(StructuralError):
    """The log-polar grid cannot represent the nonlocal shifts exactly"""


class NoDependence(StructuralError):
    """Hat-operator matrix has full rank; no beta coefficients exist"""


class WitnessRefused(StructuralError):
    """A singular witness was requested for a proper eigenvalue"""


class NumericalError(LabError):
    """A numerical procedure failed to reach a trustworthy answer"""
    exit_code = 3


class ContourOnZero(NumericalError):
    """The determinant vanishes on the integration contour after all dilations"""


class WindingPrecisionError(NumericalError):
    """Winding number did not settle near an integer"""


class AmbiguousSpectrum(NumericalError):
    """Rank or proper/improper decision fell in the ambiguous zone"""


class CrossCheckError(NumericalError):
    """Two modules disagree about the same mathematical object"""


class SingularSystemError(NumericalError):
    """The discrete linear system could not be solved"""


class FitWindowError(NumericalError):
    """The exponent fit window is polluted by the inner truncation"""
