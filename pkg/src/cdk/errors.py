"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class OrderingError(ValueError):
    """Two times were given in the wrong order (s must be < t)."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible."""


class SingularityError(ArithmeticError):
    """A division by a zero noise level was requested."""


class VocabularyError(KeyError):
    """A prompt token is not in the vocabulary."""


class ProtocolError(ValueError):
    """Human-evaluation records violate the rating protocol."""


class ConfigError(ValueError):
    """A run configuration is malformed."""


class NonFiniteError(FloatingPointError):
    """A sampler produced a NaN or Inf."""

    def __init__(self, step: int, what: str = "latent"):
        self.step = step
        super().__init__(f"non-finite {what} at sampler step {step}")
