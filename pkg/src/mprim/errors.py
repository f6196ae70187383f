"""Exception hierarchy.

Two families matter to callers: :class:`InputError` for bad or inconsistent
input data and :class:`NumericError` for numerical failures on valid input.
The CLI maps them to distinct exit codes.
"""


class MprimError(Exception):
    """Base class for all package errors."""


class InputError(MprimError):
    """Input data is malformed or inconsistent."""


class NumericError(MprimError):
    """A numerical procedure failed on otherwise valid input."""


class MalformedInput(InputError):
    pass


class DegenerateSequence(InputError):
    pass


class PositionOnlyInput(InputError):
    pass


class DegenerateInput(InputError):
    pass


class OutOfDomain(InputError):
    pass


class SingularVelocity(NumericError):
    pass


class VanishingCurvature(NumericError):
    pass


class DegenerateLimb(NumericError):
    pass


class DegenerateDirection(NumericError):
    pass


class TooShort(InputError):
    pass


class EmptyData(InputError):
    pass


class NonFiniteData(InputError):
    pass


class InvalidPrior(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class InconsistentIndicators(InputError):
    pass


class EmptyClass(InputError):
    pass


class EmptyCurve(InputError):
    pass


class UnknownClassRef(InputError):
    pass


class NoFeatures(InputError):
    pass


class EmptyHypotheses(NumericError):
    pass


class EmptyManifold(InputError):
    pass


class DegenerateFrame(NumericError):
    pass


class InvalidScript(InputError):
    pass


class CountMismatch(InputError):
    pass


class DegenerateConfiguration(NumericError):
    pass


class SingleClassData(InputError):
    pass


class NonConvergence(NumericError):
    pass


class DegenerateScores(NumericError):
    pass


class ConfigurationError(InputError):
    pass
