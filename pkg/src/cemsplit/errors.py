"""Exception hierarchy.

Input problems (bad mesh sizes, config typos, malformed files) derive from
``ValueError``; failures of the numerics derive from ``NumericalError``.
The CLI maps the two families to exit codes 2 and 3.
"""


class CemSplitError(Exception):
    pass


class ConfigError(CemSplitError, ValueError):
    pass


class MeshError(ConfigError):
    pass


class DecompositionError(ConfigError):
    pass


class AssemblyError(ConfigError):
    pass


class LoadError(ConfigError):
    pass


class NumericalError(CemSplitError, ArithmeticError):
    pass


class SolverError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class SymmetryError(NumericalError):
    pass


class SpectralError(NumericalError):
    pass


class BasisError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass


class ConstructionError(NumericalError):
    pass


class InfeasibleSplitError(NumericalError):
    pass
