"""
Exception hierarchy for protoconv
Every error the engine raises on purpose derives from ProtoconvError
"""


class ProtoconvError(Exception):
    """Base class for all protoconv errors"""


class ShapeMismatch(ProtoconvError, ValueError):
    """Operand shapes are incompatible and no broadcast rule applies"""


class NonOddKernel(ProtoconvError, ValueError):
    """Same-padding convolution needs odd kernel sizes"""


class ChannelMismatch(ProtoconvError, ValueError):
    """Dynamic kernel channel count differs from the feature channel count"""


class EmptyMask(ProtoconvError, ValueError):
    """Mask sums below the pooling threshold"""


class EmptyForeground(ProtoconvError, ValueError):
    """No foreground vectors could be extracted"""


class UnsupportedWindow(ProtoconvError, ValueError):
    """Region window must have odd positive height and width"""


class NonFiniteValue(ProtoconvError, ValueError):
    """NaN or Inf found while constructing a tensor in checked mode"""


class NonFiniteLoss(ProtoconvError, ArithmeticError):
    """Loss evaluated to NaN or Inf"""


class DegenerateGeometry(ProtoconvError, RuntimeError):
    """Renderer could not satisfy the foreground-fraction bounds"""


class EmptyPool(ProtoconvError, ValueError):
    """Requested phase has no classes to sample from"""


class IoError(ProtoconvError, OSError):
    """File could not be read or written"""


class MalformedHeader(ProtoconvError, ValueError):
    """PGM header could not be parsed"""


class MalformedTensorFile(ProtoconvError, ValueError):
    """Tensor dump or checkpoint is truncated or has a bad header"""


class ConfigError(ProtoconvError, ValueError):
    """Configuration file or values are invalid"""
