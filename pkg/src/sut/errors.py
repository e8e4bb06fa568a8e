"""Exception hierarchy shared by every module."""


class SutError(Exception):
    """Base class for all errors raised by the package."""


class InputError(SutError):
    """Invalid user input (bad parameters, shapes, arguments)."""


class NumericError(SutError):
    """A numerical routine could not produce a trustworthy result."""


class NotPositiveDefinite(InputError):
    def __init__(self, pivot: int, value: float | None = None, what: str = "matrix"):
        self.pivot = pivot
        self.value = value
        msg = f"{what} is not positive definite (pivot {pivot}"
        if value is not None:
            msg += f", value {value:.3g}"
        super().__init__(msg + ")")


class NonFiniteInput(InputError):
    pass


class ValidationError(InputError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class InvalidPermutation(InputError):
    pass


class PsiNotPSD(InputError):
    pass


class RankDeficient(InputError):
    pass


class ExtendedGammaNotPD(InputError):
    pass


class StructureNotReducible(InputError):
    pass


class CanonicalNotExists(InputError):
    pass


class TauMustBeZero(InputError):
    pass


class DofTooSmall(InputError):
    def __init__(self, nu: float, needed: float, what: str = "moment"):
        self.nu = nu
        self.needed = needed
        super().__init__(f"{what} requires nu > {needed:g}, got nu = {nu:g}")


class DenominatorUnderflow(NumericError):
    pass


class AcceptanceTooLow(NumericError):
    def __init__(self, rate: float, threshold: float):
        self.rate = rate
        super().__init__(
            f"selection probability {rate:.3g} below {threshold:.0e}; reconsider tau"
        )
