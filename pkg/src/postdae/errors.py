"""Exception hierarchy shared by all postdae modules."""


class PostDAEError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatch(PostDAEError, ValueError):
    pass


class InvalidMask(PostDAEError, ValueError):
    pass


class InvalidShape(PostDAEError, ValueError):
    pass


class InvalidConfig(PostDAEError, ValueError):
    pass


class InvalidProbability(PostDAEError, ValueError):
    pass


class InvalidSpec(PostDAEError, ValueError):
    pass


class EmptyMask(PostDAEError, ValueError):
    pass


class EmptyDataset(PostDAEError, ValueError):
    pass


class EmptyManifest(PostDAEError, ValueError):
    pass


class TooFewSamples(PostDAEError, ValueError):
    pass


class DegeneratePatch(PostDAEError, ValueError):
    pass


class UntrainedModel(PostDAEError, RuntimeError):
    pass


class ImageTooLarge(PostDAEError, ValueError):
    pass


class BadFileSize(PostDAEError, ValueError):
    pass


class ValueOutOfRange(PostDAEError, ValueError):
    pass


class NotSquare(PostDAEError, ValueError):
    pass


class SchemaError(PostDAEError, ValueError):
    pass


class CheckpointError(PostDAEError, ValueError):
    """Raised when a checkpoint directory is malformed or fails its hash check."""
