"""Exception hierarchy shared by the pipeline modules.

Input problems derive from :class:`InputError` and numerical failures from
:class:`NumericalError`; the CLI maps these to exit codes 1 and 2.
"""


class EEGGCNNError(Exception):
    """Base class for all pipeline errors."""


class InputError(EEGGCNNError, ValueError):
    pass


class NumericalError(EEGGCNNError, ArithmeticError):
    pass


class MissingChannel(InputError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"MissingChannel({self.name!r})"


class InvalidRate(InputError):
    pass


class InvalidCutoff(InputError):
    pass


class LengthMismatch(InputError):
    pass


class BandOutOfRange(InputError):
    pass


class DegenerateSignal(NumericalError):
    pass


class OffSphere(InputError):
    pass


class DegenerateGeometry(NumericalError):
    pass


class KindMismatch(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class SingularDegree(NumericalError):
    pass


class NonFiniteActivation(NumericalError):
    pass


class NonFiniteGradient(NumericalError):
    pass


class NonFiniteLoss(NumericalError):
    def __init__(self, message: str, fold_index: int | None = None):
        super().__init__(message)
        self.fold_index = fold_index


class TooFewSubjects(InputError):
    pass


class EmptyClass(InputError):
    pass


class InvalidFraction(InputError):
    pass


class EmptySubject(InputError):
    pass


class SingleClass(InputError):
    pass


class EmptySample(InputError):
    pass


class MissingCheckpoint(InputError):
    pass


class DigestMismatch(InputError):
    """Raised when artifacts produced under different configs are mixed."""
