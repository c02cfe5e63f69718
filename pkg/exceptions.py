"""
Simulator exceptions
One class per failure mode the simulator can report.
"""
from typing import Any, Dict, Optional


class MomaError(Exception):
    """Base class for every simulator error"""


class ConfigError(MomaError, ValueError):
    pass


# ============================================
# CODEBOOK
# ============================================
class InvalidSizeError(MomaError, ValueError):
    pass


class DimensionMismatchError(MomaError, ValueError):
    pass


class ExhaustedCodespaceError(MomaError, ValueError):
    pass


class UnassignedUserError(MomaError, KeyError):
    pass


class MapSizeMismatchError(MomaError, ValueError):
    pass


# ============================================
# CHANNEL / ESTIMATION
# ============================================
class CovarianceNotPSDError(MomaError, ValueError):
    pass


class SingularMatrixError(MomaError, ArithmeticError):
    pass


class CapacityExceededError(MomaError, ValueError):
    pass


# ============================================
# DETECTION / DETERMINISTIC EQUIVALENTS
# ============================================
class NonpositiveDenominatorError(MomaError, ArithmeticError):
    pass


class NonConvergenceError(MomaError, ArithmeticError):
    """Fixed point did not reach tolerance; `diagnostics` holds the last state"""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularSystemError(MomaError, ArithmeticError):
    pass


class ModePreconditionError(MomaError, ValueError):
    pass


# ============================================
# HARNESS
# ============================================
class UnknownSchemeError(MomaError, ValueError):
    pass


class SearchBudgetExceededError(MomaError, RuntimeError):
    pass


class ExportError(MomaError, OSError):
    pass
