"""Exception hierarchy shared by all codec modules."""


class CodecError(Exception):
    """Base class for every error raised by the codec."""


# mesh ingestion / metrics


class ParseError(CodecError, ValueError):
    """A mesh or label file could not be parsed."""


class LabelMismatch(CodecError, ValueError):
    """Label sidecar length differs from the vertex count."""


class ShapeMismatch(CodecError, ValueError):
    """Two meshes compared vertex-by-vertex have different vertex counts."""


class MeshIOError(CodecError, OSError):
    """Reading or writing a mesh file failed."""


# affine algebra


class NonPositiveScale(CodecError, ValueError):
    """A scale factor (1 + residual) is not strictly positive."""


class SingularMatrix(CodecError, ValueError):
    """Matrix is singular or has a non-positive determinant."""


class GimbalLock(CodecError, ValueError):
    """Euler extraction hit |cos(theta_y)| ~ 0."""


# deformation / key nodes


class EmptyNodeSet(CodecError, ValueError):
    pass


class NoValidNodes(CodecError, ValueError):
    """Manual segmentation left a body part without any key node."""


class AlignmentError(CodecError, ValueError):
    """Arrays that must be aligned (vertices, nodes, transforms) are not."""


class DivergenceError(CodecError, ArithmeticError):
    """The solver produced a non-finite loss."""


class TooFewVertices(CodecError, ValueError):
    pass


# entropy / predictive coding


class EmptyStream(CodecError, ValueError):
    pass


class TruncatedStream(CodecError, EOFError):
    """The payload ended before all expected symbols were read."""

    def __init__(self, message: str = "truncated stream", gof: int | None = None):
        if gof is not None:
            message = f"{message} (GoF {gof})"
        super().__init__(message)
        self.gof = gof


class BadEscape(CodecError, ValueError):
    pass


class UnlabeledNodes(CodecError, ValueError):
    pass


class MissingPreviousModel(CodecError, ValueError):
    """Spatio-temporal prediction needs the Cauchy model of a previous P-frame."""


# container


class BadMagic(CodecError, ValueError):
    pass


class VersionUnsupported(CodecError, ValueError):
    pass


class CorruptBlock(CodecError, ValueError):
    def __init__(self, message: str, gof: int | None = None, frame: int | None = None):
        location = []
        if gof is not None:
            location.append(f"GoF {gof}")
        if frame is not None:
            location.append(f"frame {frame}")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.gof = gof
        self.frame = frame


class ConfigError(CodecError, ValueError):
    pass


class UnknownScenario(CodecError, ValueError):
    pass
