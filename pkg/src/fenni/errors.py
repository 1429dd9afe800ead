"""Exception hierarchy shared by all fenni modules."""


class FenniError(Exception):
    """Base class for every error raised by this package."""


# mesh construction and I/O
class MeshError(FenniError):
    pass


class MalformedHeader(MeshError):
    pass


class UnsupportedVersion(MeshError):
    pass


class DanglingNodeReference(MeshError):
    pass


class InvalidDiscretization(MeshError):
    pass


class InvalidGeometry(MeshError):
    pass


class DegenerateElement(FenniError):
    pass


# autodiff
class NonFiniteValue(FenniError, FloatingPointError):
    pass


class NonFiniteGradient(FenniError, FloatingPointError):
    pass


# quadrature / model configuration
class UnsupportedOrder(FenniError, ValueError):
    pass


class UnsupportedDimension(FenniError, ValueError):
    pass


class UnknownTag(FenniError, KeyError):
    pass


# optimisation and training
class LineSearchFailed(FenniError):
    pass


class DivergenceDetected(FenniError):
    pass


class ElementInversion(FenniError):
    pass


class ZeroPreviousJacobian(FenniError, ZeroDivisionError):
    pass


# oracle
class SingularSystem(FenniError):
    pass


class ZeroReferenceNorm(FenniError, ZeroDivisionError):
    pass


class ConfigError(FenniError, ValueError):
    pass
