"""Exception hierarchy for the renormalisation toolkit."""


class RenormError(RuntimeError):
    """Base class for numerical failures (CLI exit code 1)."""

    def details(self):
        return {}


class ConfigError(ValueError):
    """Bad configuration or input file (CLI exit code 2)."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key

    def details(self):
        return {"key": self.key} if self.key else {}


class ModeOutOfWindow(ConfigError):
    pass


class NonConvergence(RenormError):
    def __init__(self, message, term_norms=None):
        super().__init__(message)
        self.term_norms = [float(x) for x in ([] if term_norms is None else term_norms)]

    def details(self):
        return {"term_norms": self.term_norms}


class Divergence(RenormError):
    def __init__(self, message, term_norms=None):
        super().__init__(message)
        self.term_norms = [float(x) for x in ([] if term_norms is None else term_norms)]

    def details(self):
        return {"term_norms": self.term_norms}


class ConeViolation(RenormError):
    def __init__(self, message, offending=None, max_ratio=None):
        super().__init__(message)
        self.offending = [list(map(float, x)) for x in ([] if offending is None else offending)]
        self.max_ratio = max_ratio

    def details(self):
        return {"offending": self.offending, "max_ratio": self.max_ratio}


class NotUnimodular(RenormError):
    pass


class BadSpectrum(RenormError):
    pass


class DegenerateEigenvector(RenormError):
    pass


class NoFeasibleParams(RenormError):
    def __init__(self, message, suggestion="increase the basis power p"):
        super().__init__(f"{message} ({suggestion})")
        self.suggestion = suggestion

    def details(self):
        return {"suggestion": self.suggestion}


class ResonantInput(RenormError):
    def __init__(self, message, modes=None):
        super().__init__(message)
        self.modes = [list(map(int, k)) for k in ([] if modes is None else modes)]

    def details(self):
        return {"modes": self.modes}


class SolverDiverged(RenormError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = [float(x) for x in ([] if history is None else history)]

    def details(self):
        return {"history": self.history}


class WindowOverflow(RenormError):
    def __init__(self, message, modes=None, mass=0.0):
        super().__init__(message)
        self.modes = [list(map(int, k)) for k in ([] if modes is None else modes)]
        self.mass = float(mass)

    def details(self):
        return {"modes": self.modes[:10], "mass": self.mass}


class RescaleDegenerate(RenormError):
    def __init__(self, message, rescale=None):
        super().__init__(message)
        self.rescale = rescale

    def details(self):
        if self.rescale is None:
            return {}
        return {"rescale_re": float(self.rescale.real), "rescale_im": float(self.rescale.imag)}


class ShootingFailed(RenormError):
    pass


class StepTooLarge(RenormError):
    def __init__(self, message, error_estimate=None):
        super().__init__(message)
        self.error_estimate = error_estimate

    def details(self):
        return {"error_estimate": self.error_estimate}
