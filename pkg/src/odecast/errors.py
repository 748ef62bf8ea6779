"""Exception hierarchy shared across the package.

Every error a caller is expected to branch on carries a stable ``code``
string (also used by the HTTP layer for machine-readable error bodies).
"""

from __future__ import annotations


class OdecastError(Exception):
    """Base class for all package errors."""

    code = "error"


class ContractViolation(OdecastError):
    """An argument or call sequence violates a documented precondition."""

    code = "contract_violation"


class NumericDomainError(OdecastError):
    """Non-finite values or out-of-domain inputs in a numeric primitive."""

    code = "numeric_domain"


class DivergenceError(OdecastError):
    """Integration produced a non-finite state.

    ``time`` is the solver time at which the state stopped being finite.
    """

    code = "divergence"

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class ModelBlowUpError(DivergenceError):
    """A learned dynamics function diverged while evolving a latent path."""

    code = "model_blow_up"


class StiffnessError(OdecastError):
    """Adaptive step size underflowed; the problem is too stiff at ``time``."""

    code = "stiffness"

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class EmptyWindowError(OdecastError):
    """No observations fall inside the requested encoder window fraction."""

    code = "empty_window"


class EnsembleDegenerateError(OdecastError):
    """Too many ensemble members diverged to report meaningful statistics."""

    code = "ensemble_degenerate"

    def __init__(self, message: str, dropped: int, requested: int):
        super().__init__(message)
        self.dropped = dropped
        self.requested = requested


class QueryInfeasibleError(OdecastError):
    """The model considers a hypothetical point implausible.

    ``best_distance`` is the smallest decoded distance any proposal
    achieved to the queried point, in normalized units.
    """

    code = "query_infeasible"

    def __init__(self, message: str, best_distance: float):
        super().__init__(message)
        self.best_distance = best_distance


class TrainingInstabilityError(OdecastError):
    """More than a quarter of one epoch's minibatches aborted on solver failures."""

    code = "training_instability"


class ParseError(OdecastError):
    """A data or config file failed to parse. ``line`` is 1-based when known."""

    code = "parse_error"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class CheckpointFormatError(OdecastError):
    """Checkpoint bytes do not match the documented container format."""

    code = "checkpoint_format"
