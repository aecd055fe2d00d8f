"""Exception hierarchy shared by the solver, the cycle finder and the CLI."""


class SwimcycleError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 3

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(SwimcycleError):
    exit_code = 2

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")

    def to_dict(self):
        d = super().to_dict()
        d["key"] = self.key
        return d


class NumericalError(SwimcycleError):
    """Any failure of the time stepper or the cycle search."""


class DegenerateShape(NumericalError):
    pass


class InvalidState(NumericalError):
    pass


class SolverDiverged(NumericalError):
    pass


class CflViolation(NumericalError):
    def __init__(self, cfl, limit):
        self.cfl = cfl
        self.limit = limit
        super().__init__(f"CFL number {cfl:.4g} exceeds {limit}")


class OutOfDomain(NumericalError):
    pass


class ShapeMismatch(NumericalError):
    pass


class PhaseOutOfRange(NumericalError):
    pass


class ReconstitutionResidual(NumericalError):
    def __init__(self, error, limit):
        self.error = error
        self.limit = limit
        super().__init__(
            f"lifting the reduced state back to the grid left a relative error "
            f"{error:.3e} > {limit:.3e}"
        )


class IllConditioned(NumericalError):
    pass


class NoConvergence(NumericalError):
    def __init__(self, best_residual, iterations, message=""):
        self.best_residual = best_residual
        self.iterations = iterations
        text = f"no convergence after {iterations} iterations (best residual {best_residual:.3e})"
        if message:
            text += f": {message}"
        super().__init__(text)

    def to_dict(self):
        d = super().to_dict()
        d.update(best_residual=self.best_residual, iterations=self.iterations)
        return d
