"""
Exception hierarchy for riskbounds.

Every error carries a machine-readable ``code`` so the command-line front end can
surface it without parsing messages. Computation errors map to exit code 2,
configuration errors to exit code 1.
"""


class RiskBoundsError(Exception):
    """
    Base class for all library errors.

    Parameters
    ----------
    message : str
        Human readable description.
    **details
        Extra machine-readable context, copied into ``self.details``.
    """
    code = "riskbounds_error"
    exit_code = 2

    def __init__(self, message, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self):
        return {"code": self.code, "message": self.message, "details": self.details}


# Distribution / functional errors
class NonIntegrableTail(RiskBoundsError):
    code = "non_integrable_tail"


class EmptyIntervalSet(RiskBoundsError):
    code = "empty_interval_set"


class InvalidProbability(RiskBoundsError):
    code = "invalid_probability"


class NonFiniteQuantile(RiskBoundsError):
    code = "non_finite_quantile"


# Bound errors
class ConstraintViolation(RiskBoundsError):
    code = "constraint_violation"


class ConditionNotMet(RiskBoundsError):
    """Raised when a closed form's threshold condition fails; carries the threshold."""
    code = "condition_not_met"

    def __init__(self, message, threshold=None, required=None, **details):
        super().__init__(message, threshold=threshold, required=required, **details)
        self.threshold = threshold
        self.required = required


class OptimizerFailure(RiskBoundsError):
    """Raised when the optimizer finds no finite value; the best candidate is kept."""
    code = "optimizer_failure"

    def __init__(self, message, best_point=None, best_value=None, **details):
        super().__init__(message, best_value=best_value, **details)
        self.best_point = best_point
        self.best_value = best_value


class InfeasibleConstraint(RiskBoundsError):
    code = "infeasible_constraint"


# Oracle errors
class InstanceTooLarge(RiskBoundsError):
    code = "instance_too_large"


# Sharing errors
class NonIntegralMass(RiskBoundsError):
    code = "non_integral_mass"


class InvalidT(RiskBoundsError):
    code = "invalid_t"

    def __init__(self, message, threshold=None, **details):
        super().__init__(message, threshold=threshold, **details)
        self.threshold = threshold


class ShapeMismatch(RiskBoundsError):
    code = "shape_mismatch"


class InvalidParams(RiskBoundsError):
    code = "invalid_params"


# Configuration errors
class ConfigParseError(RiskBoundsError):
    code = "parse_error"
    exit_code = 1


class ConfigValidationError(RiskBoundsError):
    code = "validation_error"
    exit_code = 1
