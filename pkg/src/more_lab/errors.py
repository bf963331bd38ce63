"""Exception types shared across the package."""


class MoreLabError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MoreLabError):
    """Operand shapes are incompatible with the requested operation."""


class InputError(MoreLabError):
    """A model input violates its construction contract."""


class SpanError(InputError):
    """An entity span falls outside its title."""


class GeometryError(MoreLabError):
    """A bounding box is degenerate or outside the image."""


class EmptyPoolError(MoreLabError):
    """Pooling was requested over zero rows."""


class EmptySceneError(MoreLabError):
    """A visual sequence was requested for zero objects."""


class SchemaError(MoreLabError):
    """A relation label is not part of the active schema."""


class EvaluationError(MoreLabError):
    """A checked function produced a non-finite value."""


class AgreementError(MoreLabError):
    """Annotator agreement is undefined for the given sequences."""


class NonFiniteGradientError(MoreLabError):
    """An optimizer step received NaN or Inf gradients."""


class CheckpointError(MoreLabError):
    """A checkpoint file is missing or malformed."""
