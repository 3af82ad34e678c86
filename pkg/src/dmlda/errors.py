"""Exception types raised across the package."""


class DMLError(Exception):
    """Base class for every error raised by dmlda."""


class NormTooSmall(DMLError, ValueError):
    pass


class DimMismatch(DMLError, ValueError):
    pass


class EmptyPairSet(DMLError, ValueError):
    pass


class EmptyTripletSet(DMLError, ValueError):
    pass


class EmptyTupletSet(DMLError, ValueError):
    pass


class EmptyClass(DMLError, ValueError):
    pass


class UnknownClass(DMLError, KeyError):
    pass


class AllSingletonClasses(DMLError, ValueError):
    """No class in the batch has two or more samples, so no density is defined."""


class CacheMismatch(DMLError, ValueError):
    pass


class DivergenceDetected(DMLError, FloatingPointError):
    pass


class InsufficientClasses(DMLError, ValueError):
    pass


class InsufficientSamples(DMLError, ValueError):
    pass


class NoValidTriplets(DMLError, ValueError):
    pass


class NoValidTuplets(DMLError, ValueError):
    pass


class TooFewPoints(DMLError, ValueError):
    pass


class LengthMismatch(DMLError, ValueError):
    pass


class ParseError(DMLError, ValueError):
    def __init__(self, message, line=None, offset=None):
        self.line = line
        self.offset = offset
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class DimInconsistent(DMLError, ValueError):
    pass


class SplitOverlap(DMLError, ValueError):
    """Train and test splits share at least one class label."""


class VersionMismatch(DMLError, ValueError):
    pass


class CorruptCheckpoint(DMLError, ValueError):
    pass
