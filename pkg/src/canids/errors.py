"""Exception hierarchy shared across the toolkit.

Every error that crosses a module boundary derives from CanIdsError so the
CLI can map failures to stable exit codes.
"""


class CanIdsError(Exception):
    """Base class for all toolkit errors."""


class IdOutOfRange(CanIdsError):
    """CAN identifier does not fit in the 12-bit input encoding."""


class ParseError(CanIdsError):
    """A log record could not be parsed.

    Carries the 1-based line number and the offending field name.
    """

    def __init__(self, message, line_no=0, field=""):
        super().__init__(message)
        self.line_no = line_no
        self.field = field

    def __str__(self):
        loc = f"line {self.line_no}" if self.line_no else "record"
        field = f", field '{self.field}'" if self.field else ""
        return f"{loc}{field}: {super().__str__()}"


class MalformedHex(ParseError):
    """A hex field (CAN ID or payload byte) is not valid hexadecimal."""


class DlcMismatch(ParseError):
    """The number of payload bytes in a record does not match its DLC."""


class InvalidSpec(CanIdsError):
    """Split fractions do not describe a valid partition."""


class InvalidProfile(CanIdsError):
    """Synthetic traffic profile violates its invariants."""


class InvalidWindow(CanIdsError):
    """Attack injection window is empty or outside the dataset time range."""


class RateNonPositive(CanIdsError):
    """Attack injection rate is negative (rate 0 is allowed and a no-op)."""


class InsufficientData(CanIdsError):
    """Fewer frames or blocks available than the operation requires."""


class ShapeMismatch(CanIdsError):
    """Tensor shapes are inconsistent with the operation's contract."""


class MissingIntermediates(CanIdsError):
    """Backward pass invoked without a recorded forward tape."""


class EmptyDataset(CanIdsError):
    """Training requires at least one block."""


class NonFiniteLoss(CanIdsError):
    """Training loss became NaN or infinite; aborted with diagnostics."""


class EmptyCalibrationSet(CanIdsError):
    """Calibration requires at least one block."""


class AccumulatorOverflow(CanIdsError):
    """Quantized accumulator left the int32 range; indicates a scale bug."""


class ModelFormatError(CanIdsError):
    """Model file is unreadable."""


class VersionMismatch(ModelFormatError):
    """Model file format version is not supported."""


class ChecksumMismatch(ModelFormatError):
    """Model file failed its integrity check (truncated or corrupted)."""


class LengthMismatch(CanIdsError):
    """Verdict and label sequences have different lengths."""


class UnlabeledData(CanIdsError):
    """Evaluation requires ground-truth labels on every block."""


class BufferOverrun(CanIdsError):
    """Classifier still busy when its buffer was needed again."""


class NoSamples(CanIdsError):
    """Latency statistics requested before any block was processed."""


class ModelMissing(CanIdsError):
    """Replay started without a usable model."""
