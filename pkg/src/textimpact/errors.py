"""Exception hierarchy. Every user-facing failure derives from TextImpactError."""


class TextImpactError(ValueError):
    """Base class for input, configuration and precondition errors."""


class InvariantError(RuntimeError):
    """An internal consistency check failed. Indicates a bug, not bad input."""


# core data
class SchemaMismatch(TextImpactError):
    pass


class InvalidArm(TextImpactError):
    pass


class MissingFeature(TextImpactError):
    pass


class CodedWithoutScore(TextImpactError):
    pass


class SampleTooLarge(TextImpactError):
    pass


class NonPositiveSample(TextImpactError):
    pass


# learners
class DegenerateTraining(TextImpactError):
    pass


class NonFiniteInput(TextImpactError):
    pass


class WidthMismatch(TextImpactError):
    pass


class EmptyGrid(TextImpactError):
    pass


class InsufficientCoded(TextImpactError):
    pass


# estimators
class LengthMismatch(TextImpactError):
    pass


class NotFullyCoded(TextImpactError):
    pass


class TooFewCoded(TextImpactError):
    pass


class MissingCovariates(TextImpactError):
    pass


# planner / simulation
class InvalidPlan(TextImpactError):
    pass


class InvalidDGP(TextImpactError):
    pass


# features
class EmptyText(TextImpactError):
    pass


class DuplicateId(TextImpactError):
    pass
