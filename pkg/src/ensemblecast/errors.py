"""Exception hierarchy shared by all modules."""


class EnsembleCastError(ValueError):
    """Base class for every error raised by the toolkit."""


# griddata
class BadMagic(EnsembleCastError):
    pass


class TruncatedFile(EnsembleCastError):
    pass


class NonMonotoneAxis(EnsembleCastError):
    pass


class MaskMismatch(EnsembleCastError):
    pass


class DegenerateVariance(EnsembleCastError):
    """A normalization std came out as zero.

    ``stats`` carries the statistics computed before the check failed, so the
    finite moments remain inspectable.
    """

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class EmptyOverlap(EnsembleCastError):
    pass


class CadenceMismatch(EnsembleCastError):
    pass


class GridMismatch(EnsembleCastError):
    pass


# noise
class NegativeSigma(EnsembleCastError):
    pass


class ResolutionMismatch(EnsembleCastError):
    pass


class BadOctaves(EnsembleCastError):
    pass


# mesh
class BadLevelSpec(EnsembleCastError):
    pass


# stepper
class ShapeMismatch(EnsembleCastError):
    pass


class InsufficientForcing(EnsembleCastError):
    pass


class HorizonMismatch(EnsembleCastError):
    pass


class DivergedLoss(EnsembleCastError):
    pass


# verify
class SingleMember(EnsembleCastError):
    pass


class LeadOutOfRange(EnsembleCastError):
    pass


class LeadMismatch(EnsembleCastError):
    pass


# config
class ParseError(EnsembleCastError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownKey(EnsembleCastError):
    pass


class MissingSection(EnsembleCastError):
    pass
