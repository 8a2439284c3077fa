"""Exception types shared across the package."""


class NcgaError(Exception):
    """Base class for all errors raised by ncga."""


# netgraph
class CycleDetected(NcgaError):
    pass


class UnreachableReceiver(NcgaError):
    pass


class EmptyReceiverSet(NcgaError):
    pass


class InfeasibleParameters(NcgaError):
    pass


class UnknownLink(NcgaError):
    pass


# galois
class FieldMismatch(NcgaError):
    pass


class DimensionMismatch(NcgaError):
    pass


class RankDeficient(NcgaError):
    pass


# coding evaluation
class InconsistentAssignment(NcgaError):
    pass


class InvalidCoefficients(NcgaError):
    pass


class TooLarge(NcgaError):
    pass


# ga
class LengthMismatch(NcgaError):
    pass


# simulator
class MissingGaResult(NcgaError):
    pass
