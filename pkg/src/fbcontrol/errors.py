"""Exception types shared by the solver modules."""


class FBControlError(Exception):
    """Base class for all errors raised by this package."""


class EvaluationError(FBControlError):
    """A coefficient returned a non-finite value; carries the coefficient name."""

    def __init__(self, coefficient, where=None):
        self.coefficient = coefficient
        self.where = where
        msg = f"non-finite evaluation of coefficient '{coefficient}'"
        if where is not None:
            msg += f" at {where}"
        super().__init__(msg)


class DomainError(FBControlError, ValueError):
    """Arguments outside the admissible domain (e.g. r <= s in the heat kernel)."""


class DegeneracyError(FBControlError):
    """Diffusion coefficient fell below the required ellipticity bound."""


class SingularityError(FBControlError):
    """A matrix/denominator inversion failed along a trajectory."""

    def __init__(self, time, detail=""):
        self.time = time
        super().__init__(f"singular denominator at t={time:.6g} {detail}".rstrip())


class BlowUpError(FBControlError):
    """NaN/Inf encountered while integrating; carries the first bad time."""

    def __init__(self, time, detail=""):
        self.time = time
        super().__init__(f"blow-up detected at t={time:.6g} {detail}".rstrip())


class PositivityError(FBControlError):
    """A quantity with a proven positive lower bound became non-positive."""


class YRangeError(FBControlError):
    """A nonlocal evaluation point left the computed y-range."""

    def __init__(self, s, x, y, y_lo, y_hi):
        self.node = (s, x, y)
        super().__init__(
            f"theta value {y:.6g} at (s={s:.6g}, x={x:.6g}) outside the y grid "
            f"[{y_lo:.6g}, {y_hi:.6g}]; widen the y grid"
        )


class UnsupportedCostClassError(FBControlError):
    """Cost functional class not handled by the Monte Carlo evaluator."""
