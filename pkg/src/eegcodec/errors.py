"""Exception hierarchy shared by all eegcodec modules."""


class CodecError(Exception):
    """Base class for every error raised by eegcodec."""


class ConfigError(CodecError, ValueError):
    pass


class InvalidConfig(ConfigError):
    pass


class DataError(CodecError, ValueError):
    """Input data is missing, unreadable or malformed."""


class UnreadableFile(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonFiniteSamples(DataError):
    pass


class MissingGroups(DataError):
    pass


class TooFewChannels(DataError):
    pass


class InvalidBand(ConfigError):
    pass


class NonIntegerWindow(ConfigError):
    pass


class MissingPatch(DataError):
    pass


class IndexCollision(DataError):
    pass


class TooShort(DataError):
    pass


class GeometryMismatch(CodecError, ValueError):
    pass


# quantizer
class QuantizerError(CodecError):
    pass


class TooFewVectors(QuantizerError, ValueError):
    pass


class AlreadyInitialized(QuantizerError, RuntimeError):
    pass


class NotInitialized(QuantizerError, RuntimeError):
    pass


class DimMismatch(QuantizerError, ValueError):
    pass


class IndexOutOfRange(QuantizerError, IndexError):
    pass


# losses / training
class EmptyScaleSet(ConfigError):
    pass


class ScaleMismatch(CodecError, ValueError):
    pass


class NestingMismatch(CodecError, ValueError):
    pass


class NonFiniteTerm(CodecError, ArithmeticError):
    pass


class NonFiniteGradient(CodecError, ArithmeticError):
    pass


class NonFiniteLoss(CodecError, ArithmeticError):
    """Training aborted before a non-finite update could corrupt parameters."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class StepOutOfRange(CodecError, ValueError):
    pass


class EmptyDataset(DataError):
    pass


# bitstream
class ContainerError(CodecError, ValueError):
    """Structural problem with a compressed container."""


class BadMagic(ContainerError):
    pass


class VersionUnsupported(ContainerError):
    pass


class TruncatedPayload(ContainerError):
    pass


class ChecksumMismatch(ContainerError):
    pass


class IndexOverflow(ContainerError):
    pass


class ModelMismatch(ContainerError):
    """Container was written by a different checkpoint than the one decoding it."""


# metrics
class MetricError(CodecError, ValueError):
    pass


class ZeroReference(MetricError):
    pass


class NonFiniteInput(MetricError):
    pass


class EmptyReport(MetricError):
    pass


# harness
class NoLabels(DataError):
    pass


class InsufficientEvents(DataError):
    pass


class InvalidSpec(ConfigError):
    pass
