"""Exception hierarchy shared by all glmmvb modules."""


class GlmmVbError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(GlmmVbError):
    """Malformed or out-of-domain input data."""


class DimensionError(GlmmVbError):
    """Shapes of related objects do not agree."""


class ConfigError(GlmmVbError):
    """Invalid configuration value (iteration counts, pool sizes, ...)."""


class EmptyDataError(GlmmVbError):
    """An operation that needs at least one subject received none."""


class DecompositionError(GlmmVbError):
    """A Cholesky factorization failed on a matrix that must be positive
    definite.

    Attributes
    ----------
    pivot : int or None
        1-based index of the failing pivot for dense factorizations.
    block : int or None
        Index of the failing tail block for block-arrow factorizations;
        -1 denotes the corner/Schur-complement block.
    iteration : int or None
        Iteration at which the failure occurred, when inside a fit loop.
    """

    def __init__(self, message, *, pivot=None, block=None, iteration=None):
        super().__init__(message)
        self.pivot = pivot
        self.block = block
        self.iteration = iteration


class RecombinationError(GlmmVbError):
    """Combining per-piece posteriors produced an invalid factor.

    Usually means the pieces are too small or overdispersed relative to
    the prior, so the prior correction overwhelms the data precision.
    """


class NumericalError(GlmmVbError):
    """An inner numerical routine (e.g. a Newton search) failed to converge.

    Attributes
    ----------
    subject_id : str or None
        Identifier of the subject whose computation failed, if applicable.
    """

    def __init__(self, message, *, subject_id=None):
        super().__init__(message)
        self.subject_id = subject_id


class PieceError(GlmmVbError):
    """A per-piece fit failed inside a partitioned run.

    Attributes
    ----------
    piece : int
        Index of the failing piece.
    """

    def __init__(self, message, *, piece):
        super().__init__(message)
        self.piece = piece
