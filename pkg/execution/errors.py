"""
Error hierarchy for the SSDU reconstruction toolkit
Every error knows the CLI exit code it maps to
"""
from typing import Optional


class SSDUError(Exception):
    """Base class for all toolkit errors"""

    exit_code = 2


# ============================================
# USAGE ERRORS (exit code 1)
# ============================================

class UsageError(SSDUError):
    """Invalid invocation: unknown flag, missing argument, bad call"""

    exit_code = 1


class ConfigError(UsageError):
    """Configuration value violates its invariant or key is unknown"""


# ============================================
# DATA / CONSISTENCY ERRORS (exit code 2)
# ============================================

class DimensionError(SSDUError, ValueError):
    """Shapes of operands do not agree"""


class ConsistencyError(SSDUError, ValueError):
    """Masks or volumes are inconsistent (e.g. mask not a subset of acquired indices)"""


class SolverError(SSDUError):
    """Linear system is singular or otherwise unsolvable"""


class PolicyError(SSDUError):
    """Partition policy cannot be realized on the given mask"""


class DegenerateReferenceError(SSDUError):
    """Reference tensor has zero norm"""


class LossUndefinedError(SSDUError):
    """Loss cannot be evaluated (e.g. empty loss mask)"""


class FormatError(SSDUError):
    """File is not a valid container or checkpoint"""


class TrainingError(SSDUError):
    """Training aborted; message names the offending slice or sweep value"""

    def __init__(self, message: str, slice_id: Optional[str] = None, rho: Optional[float] = None):
        context = []
        if slice_id is not None:
            context.append(f"slice {slice_id}")
        if rho is not None:
            context.append(f"rho {rho}")
        super().__init__(f"{message} [{', '.join(context)}]" if context else message)
        self.slice_id = slice_id
        self.rho = rho
