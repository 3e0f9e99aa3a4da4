"""Exception hierarchy shared by every deepslice module."""


class DeepSliceError(ValueError):
    """Base class; subclasses name the violated contract."""


class NonDivisibleExtent(DeepSliceError):
    pass


class BadSparsity(DeepSliceError):
    pass


class IndexOutOfRange(DeepSliceError, IndexError):
    pass


class EvenSlabWidth(DeepSliceError):
    pass


class InconsistentDims(DeepSliceError):
    pass


class MissingIndex(DeepSliceError):
    pass


class TooFewSlices(DeepSliceError):
    pass


class ShapeMismatch(DeepSliceError):
    pass


class NonOddKernel(DeepSliceError):
    pass


class NonDivisibleChannels(DeepSliceError):
    pass


class KeyMismatch(DeepSliceError, KeyError):
    pass


class InvalidSpec(DeepSliceError):
    pass


class EmptyDataset(DeepSliceError):
    pass


class SpecMismatch(DeepSliceError):
    pass


class TooSmall(DeepSliceError):
    pass


class BadMagic(DeepSliceError):
    pass


class TruncatedFile(DeepSliceError):
    pass


class UnsupportedVersion(DeepSliceError):
    pass


class NonFiniteValue(DeepSliceError):
    pass


class IoError(DeepSliceError):
    pass
