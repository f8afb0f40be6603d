EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class WeakRankError(Exception):
    """Base class for all errors raised by weakrank."""
    exit_code = EXIT_RUNTIME


class ValidationError(WeakRankError, ValueError):
    """Bad input, bad configuration or a violated precondition."""
    exit_code = EXIT_VALIDATION


class ConfigError(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class IdMismatch(ValidationError):
    pass


class EmptyEnsemble(ValidationError):
    pass


class EmptyVocab(ValidationError):
    pass


class InvalidAttributeId(ValidationError):
    pass


class EmptyRelevantSet(ValidationError):
    pass


class MissingGroundTruth(ValidationError):
    def __init__(self, query_id: str):
        super().__init__(f"No ground truth for query '{query_id}'")
        self.query_id = query_id


class DuplicateCandidate(ValidationError):
    pass


class TopNTooLarge(ValidationError):
    pass


class InsufficientCandidates(ValidationError):
    pass


class TooFewRows(ValidationError):
    pass


class ZeroNormRow(ValidationError):
    def __init__(self, index: int):
        super().__init__(f"Row {index} has zero norm")
        self.index = index


class ZeroVector(ValidationError):
    pass


class NonFiniteInput(WeakRankError, ArithmeticError):
    pass


class NonFiniteActivation(WeakRankError, ArithmeticError):
    pass


class DivergenceDetected(WeakRankError, ArithmeticError):
    pass


class EigenFailure(WeakRankError, ArithmeticError):
    pass


class CorruptFile(WeakRankError, ValueError):
    pass


class VersionMismatch(WeakRankError, ValueError):
    pass


class StageError(WeakRankError):
    """A pipeline stage failed; wraps the original cause."""
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", EXIT_RUNTIME)
