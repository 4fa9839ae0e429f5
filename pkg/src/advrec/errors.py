"""Exception types shared across the engine."""


class EngineError(Exception):
    """Base class for all engine failures."""


class DimMismatch(EngineError):
    """Vector or matrix shapes do not agree."""


class ZeroNormError(EngineError):
    """Embedding row has (near-)zero Euclidean norm; cosine is undefined."""


class NonFiniteGradient(EngineError):
    """A gradient entry is NaN or Inf."""


class NonFinite(EngineError):
    """A loss input or intermediate is NaN or Inf."""


class ParseError(EngineError):
    """Malformed interaction file; carries path and line number."""

    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class EmptySplitError(EngineError):
    """The training split contains no interactions."""


class NoNegativesError(EngineError):
    """User has interacted with every item; no negatives exist."""


class BadParam(EngineError):
    """Parameter outside its valid range."""


class DegenerateSpec(EngineError):
    """Synthetic generator produced an empty split."""


class IdOutOfRange(EngineError):
    """User or item id outside the dataset's dense id range."""


class BadDistribution(EngineError):
    """Probability vector does not sum to one."""


class NoCandidates(EngineError):
    """User has no candidate items to rank."""


class EmptyEval(EngineError):
    """No user has test positives; metrics are undefined."""


class EmptySample(EngineError):
    """Diagnostic sample is empty."""


class EmptyFnList(EngineError):
    """No planted false negatives available."""


class SkippedAdvStep(EngineError):
    """Adversarial epoch budget exhausted. Control-flow signal, not a failure."""


class IncompatibleCheckpoint(EngineError):
    """Checkpoint does not match the dataset or expected format."""
