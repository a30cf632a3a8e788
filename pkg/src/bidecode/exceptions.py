"""Exception types shared across the package."""


class BidecodeError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(BidecodeError):
    """Operands do not conform to an op's shape rule."""


class NonFiniteError(BidecodeError):
    """A NaN or Inf showed up where only finite values are allowed."""


class GraphError(BidecodeError):
    """Backward called before forward, non-scalar loss, or similar misuse."""


class NonDeterministicError(BidecodeError):
    """Two identical evaluations of a supposedly deterministic fn disagree."""


class VocabularyError(BidecodeError):
    """Token id outside the model's vocabulary."""


class DirectionMismatchError(BidecodeError):
    """Decoder state direction tag does not match the decoder used."""


class FrozenParameterError(BidecodeError):
    """A gradient reached a parameter that was declared frozen."""


class DivergenceError(BidecodeError):
    """Training loss became non-finite."""

    def __init__(self, step, message=""):
        self.step = step
        super().__init__(message or f"non-finite loss at step {step}")


class ConfigError(BidecodeError):
    """Invalid or unknown configuration entry."""


class TopologyMismatchError(BidecodeError):
    """Checkpoint topology does not match the requested model."""


class SeedMismatchError(BidecodeError):
    """Two metrics files do not cover the same seed set."""
