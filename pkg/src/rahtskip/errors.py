"""Exception types raised by the codec."""


class CodecError(Exception):
    """Base class for every error raised by rahtskip."""


class PlyError(CodecError):
    pass


class MalformedHeader(PlyError):
    pass


class MissingColor(PlyError):
    pass


class TruncatedPayload(PlyError):
    pass


class EmptyAfterVoxelize(CodecError):
    pass


class CoordinateOutOfRange(CodecError, ValueError):
    pass


class LayerOutOfRange(CodecError, IndexError):
    pass


class CoefficientCountMismatch(CodecError):
    pass


class LengthMismatch(CodecError, ValueError):
    pass


class BitstreamError(CodecError):
    pass


class BadMagic(BitstreamError):
    pass


class BadVersion(BitstreamError):
    pass


class Truncated(BitstreamError):
    pass


class FlagOutOfRange(BitstreamError):
    pass


class MissingReference(CodecError):
    pass


class GeometryMismatch(CodecError, ValueError):
    pass


class InsufficientPoints(CodecError, ValueError):
    pass


class NoOverlap(CodecError, ValueError):
    pass
