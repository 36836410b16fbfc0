"""
Shared utilities for the pa CLI.

Error classification, structured responses, and small numeric helpers used by
every solver module.
"""

import logging
from typing import Any, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)


# Error classification
class PAError(Exception):
    code = "UNKNOWN"
    suggestion = ""

    def __init__(self, message: str, suggestion: Optional[str] = None, **details: Any):
        super().__init__(message)
        if suggestion:
            self.suggestion = suggestion
        self.details = details


class DomainError(PAError):
    """Argument outside the domain of an operation."""
    code = "DOMAIN"
    suggestion = "Check the argument against the operation's precondition."


class UnboundedError(PAError):
    """Supremum is not finite on the declared action set."""
    code = "UNBOUNDED"
    suggestion = "Use a compact effort interval or a cost that dominates the reward."


class GridError(PAError):
    """Time or state grid is malformed."""
    code = "GRID"
    suggestion = "Pass a uniform, increasing grid with step at most the configured dt bound."


class NumericError(PAError):
    """NaN, overflow, or a non-converging inner numeric routine."""
    code = "NUMERIC"
    suggestion = "Reduce the step size or check the coefficient magnitudes."


class RangeError(PAError):
    """Value outside the range of a utility or derivative map."""
    code = "RANGE"
    suggestion = "Keep promised values inside the range of the agent's utility."


class ConstructionError(PAError):
    """Closed-form construction preconditions violated."""
    code = "CONSTRUCTION"
    suggestion = "Choose the matching point inside the obstacle region s <= s*."


class InvariantViolationError(PAError):
    """A structural property of a computed object failed."""
    code = "INVARIANT"


class ConcavityError(PAError):
    """Second derivative has the wrong sign in the continuation region."""
    code = "CONCAVITY"


class ConvergenceError(PAError):
    """Iterative solver hit its cap before reaching tolerance."""
    code = "CONVERGENCE"
    suggestion = "Raise max_iterations, refine the grid, or switch solver method."

    def __init__(self, message: str, residual: float = float("nan"), **details: Any):
        super().__init__(message, residual=residual, **details)
        self.residual = residual


class HorizonError(PAError):
    """Too many simulated paths were still alive at the truncation horizon."""
    code = "HORIZON"
    suggestion = "Increase simulation.t_cap."


class AuditError(PAError):
    """A Monte Carlo optimality or martingale audit failed."""
    code = "AUDIT"

    def __init__(self, message: str, audit: str, report: Optional[dict] = None):
        super().__init__(message, audit=audit)
        self.audit = audit
        self.report = report or {}


class RootError(PAError):
    """Bracketing root search found no sign change."""
    code = "ROOT"
    suggestion = "Widen the lambda bracket or check the participation level."

    def __init__(self, message: str, endpoints: Sequence[float] = (), values: Sequence[float] = ()):
        super().__init__(message, endpoints=list(endpoints), values=list(values))
        self.endpoints = list(endpoints)
        self.values = list(values)


class ConfigError(PAError):
    """Configuration file errors."""
    code = "CONFIG"
    suggestion = "Fix the named key in the run config."


class ModelError(PAError):
    """Model primitives fail their declared invariants."""
    code = "MODEL"


# Exit status contract: 1 config, 2 convergence, 3 audit
EXIT_CODES = {
    "CONFIG": 1,
    "DOMAIN": 1,
    "CONSTRUCTION": 1,
    "MODEL": 1,
    "RANGE": 1,
    "GRID": 1,
    "CONVERGENCE": 2,
    "ROOT": 2,
    "NUMERIC": 2,
    "INVARIANT": 2,
    "CONCAVITY": 2,
    "UNBOUNDED": 2,
    "HORIZON": 2,
    "AUDIT": 3,
}


def classify_error(e: Exception) -> str:
    """Classify error for structured output."""
    if isinstance(e, PAError):
        return e.code
    if isinstance(e, (FileNotFoundError, ValueError, KeyError)):
        return "CONFIG"
    return "UNKNOWN"


def exit_code_for(code: str) -> int:
    return EXIT_CODES.get(code, 1)


def error_response(e: Exception, context: str = "") -> dict:
    """
    Create standardized error response dict from exception.

    Args:
        e: The exception that was raised
        context: Optional context about what operation failed

    Returns:
        Dict with success, error, code, suggestion, exit_code and any
        structured details carried by the exception
    """
    code = classify_error(e)
    error_msg = f"{context}: {e}" if context else str(e)
    response = {
        "success": False,
        "error": error_msg,
        "code": code,
        "suggestion": getattr(e, "suggestion", "") or "Check the error message for details.",
        "exit_code": exit_code_for(code),
    }
    details = getattr(e, "details", None)
    if details:
        response["details"] = to_builtin(details)
    if isinstance(e, AuditError):
        response["audit"] = e.audit
        response["report"] = to_builtin(e.report)
    return response


def success_response(**kwargs) -> dict:
    """
    Create standardized success response dict.

    Args:
        **kwargs: Additional fields to include in response

    Returns:
        Dict with success=True, exit_code=0 and any additional fields
    """
    return {"success": True, "exit_code": 0, **kwargs}


# Numeric helpers
def to_builtin(obj: Any) -> Any:
    """Convert numpy scalars/arrays nested in dicts and lists to JSON-ready builtins."""
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_builtin(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        obj = float(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def require_finite(name: str, *values: float) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{name} must be finite, got {v!r}")
