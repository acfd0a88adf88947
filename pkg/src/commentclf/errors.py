"""Exception hierarchy shared across the package."""


class CommentClfError(Exception):
    """Base class for all package errors."""


# corpus
class MissingColumn(CommentClfError, LookupError):
    pass


class BadLabel(CommentClfError, ValueError):
    pass


class BadRow(CommentClfError, ValueError):
    """A row violates the sample schema (bad partition, blank text, bad id)."""


class EmptyFile(CommentClfError, ValueError):
    pass


class UnknownCategory(CommentClfError, ValueError):
    pass


# pairgen / orchestrator
class SingleClassInput(CommentClfError, ValueError):
    pass


class InsufficientSamples(CommentClfError, ValueError):
    pass


# embedder
class BackendUnavailable(CommentClfError, RuntimeError):
    pass


class NonFiniteLoss(CommentClfError, FloatingPointError):
    pass


# head
class SingleClassLabels(CommentClfError, ValueError):
    pass


class NonFiniteObjective(CommentClfError, FloatingPointError):
    pass


class DimensionMismatch(CommentClfError, ValueError):
    pass


# metrics
class LengthMismatch(CommentClfError, ValueError):
    pass


class MissingCategory(CommentClfError, LookupError):
    pass


class CategoryMismatch(CommentClfError, ValueError):
    pass


# orchestrator / cli
class BoundsError(CommentClfError, ValueError):
    pass


class VariantMismatch(CommentClfError, ValueError):
    pass


class ArtifactError(CommentClfError, ValueError):
    """An artifact directory is malformed or of an unsupported version."""
