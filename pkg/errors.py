"""
Exception hierarchy. Every error knows the CLI exit code it maps to.
"""

from typing import Any, Dict, Optional


class VanishingMassError(Exception):
    """Base class for all toolkit errors"""
    exit_code = 1
    kind = "error"

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """Machine-readable error document written by the CLI"""
        return {
            "error": self.kind,
            "message": self.message,
            "exit_code": self.exit_code,
            "details": self.details,
        }


class InputError(VanishingMassError, ValueError):
    """Invalid argument or violated precondition"""
    exit_code = 3
    kind = "input_error"


class ConfigError(VanishingMassError):
    """Malformed or invalid problem/config file"""
    exit_code = 3
    kind = "config_error"


class InfeasibleProblemError(VanishingMassError):
    """No admissible stress exists (unsupported load, stranded node, empty graph)"""
    exit_code = 4
    kind = "infeasible"


class ConvergenceError(VanishingMassError):
    """Iteration budget exhausted; carries the best primal/dual pair reached"""
    exit_code = 5
    kind = "not_converged"

    def __init__(self, message: str, primal: float = float("nan"), dual: float = float("nan"),
                 iterations: int = 0, details: Optional[Dict[str, Any]] = None):
        merged = {"primal": primal, "dual": dual, "iterations": iterations}
        merged.update(details or {})
        super().__init__(message, merged)
        self.primal = primal
        self.dual = dual
        self.iterations = iterations


class UnresolvedMicrostructureError(VanishingMassError):
    """Grid too coarse for the requested microstructure"""
    exit_code = 6
    kind = "unresolved_microstructure"


class InconsistencyError(VanishingMassError):
    """Two independent evaluations of the same quantity disagree"""
    exit_code = 7
    kind = "inconsistency"


class ComparisonError(VanishingMassError):
    """Runs cannot be compared (different geometry or law)"""
    exit_code = 8
    kind = "comparison_error"
