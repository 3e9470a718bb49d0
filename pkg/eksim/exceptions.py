class EksimException(Exception):
    def __init__(self, message):
        super().__init__(message)
        self.message = message


# Linear algebra ########################################################

class NonConvergedEigen(EksimException):
    pass


class NotPSD(EksimException):
    pass


class BelowFloor(EksimException):
    pass


# Measures and potentials ###############################################

class SizeMismatch(EksimException):
    pass


class CapExceeded(EksimException):
    pass


class DimNotOne(EksimException):
    pass


class DimMismatch(EksimException):
    pass


class InvalidPotential(EksimException):
    def __init__(self, message, key="potential.kind"):
        super().__init__(message)
        self.key = key


# Dynamics ##############################################################

class NonFinite(EksimException):
    pass


class PathOutOfRange(EksimException):
    pass


class OdeStepRejected(EksimException):
    pass


class CovarianceCollapse(EksimException):
    pass


class NoConvergence(EksimException):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# Experiments ###########################################################

class TooManyFailedReplicates(EksimException):
    pass


class NonPositiveEstimate(EksimException):
    pass


class UnsupportedObservable(EksimException):
    pass


# Configuration #########################################################

class ConfigReadException(EksimException):
    pass


class ConfigValidationException(EksimException):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class ConfigWriteException(EksimException):
    pass
