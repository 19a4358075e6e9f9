"""CAN frame domain model, ID binarization, and log-record parsing.

Log records are comma-separated: timestamp, hex ID (no 0x prefix,
case-insensitive), DLC, then exactly DLC payload bytes in hex, then an
optional flag column ('R' = benign, 'T' = attack). Attack captures carry the
flag on every row; benign captures usually omit it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DlcMismatch, IdOutOfRange, MalformedHex, ParseError

ID_BITS = 12
MAX_CAN_ID = (1 << ID_BITS) - 1


class Label(enum.Enum):
    BENIGN = "benign"
    ATTACK = "attack"
    UNLABELED = "unlabeled"


_FLAG_TO_LABEL = {"R": Label.BENIGN, "T": Label.ATTACK}
_LABEL_TO_FLAG = {Label.BENIGN: "R", Label.ATTACK: "T"}


@dataclass(frozen=True, slots=True)
class CanFrame:
    """One timestamped CAN message with an optional ground-truth label."""

    timestamp: float
    can_id: int
    dlc: int
    payload: bytes
    label: Label = Label.UNLABELED

    def __post_init__(self):
        if not 0 <= self.can_id <= MAX_CAN_ID:
            raise IdOutOfRange(f"CAN ID 0x{self.can_id:X} outside 12-bit range")
        if not 0 <= self.dlc <= 8:
            raise ValueError(f"DLC {self.dlc} outside 0..8")
        if len(self.payload) != self.dlc:
            raise ValueError(
                f"payload length {len(self.payload)} != DLC {self.dlc}"
            )


@dataclass(frozen=True)
class LogSchema:
    """Column layout of a CSV capture.

    flag: "required" (every row must end with R/T), "optional" (honored when
    present), or "none" (a trailing R/T field is a format error).
    default_label applies when a row has no flag.
    """

    name: str
    flag: str = "optional"
    default_label: Label = Label.UNLABELED

    def __post_init__(self):
        if self.flag not in ("required", "optional", "none"):
            raise ValueError(f"unknown flag mode {self.flag!r}")


# Attack captures of the public car-hacking corpus label every row; the
# benign capture has no flag column and is attack-free by construction.
SCHEMA_ATTACK = LogSchema("attack", flag="required")
SCHEMA_BENIGN = LogSchema("benign", flag="optional", default_label=Label.BENIGN)
SCHEMA_RAW = LogSchema("raw", flag="optional", default_label=Label.UNLABELED)

SCHEMAS = {s.name: s for s in (SCHEMA_ATTACK, SCHEMA_BENIGN, SCHEMA_RAW)}


def binarize_id(can_id: int) -> np.ndarray:
    """12-bit big-endian binary expansion of a CAN ID (MSB first)."""
    if not 0 <= can_id <= MAX_CAN_ID:
        raise IdOutOfRange(f"CAN ID 0x{can_id:X} outside 12-bit range")
    bits = np.empty(ID_BITS, dtype=np.uint8)
    for i in range(ID_BITS):
        bits[i] = (can_id >> (ID_BITS - 1 - i)) & 1
    return bits


def binarize_ids(can_ids: np.ndarray) -> np.ndarray:
    """Vectorized binarize_id: (N,) integer IDs -> (N, 12) uint8 bit matrix."""
    ids = np.asarray(can_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() > MAX_CAN_ID):
        bad = ids[(ids < 0) | (ids > MAX_CAN_ID)][0]
        raise IdOutOfRange(f"CAN ID 0x{int(bad):X} outside 12-bit range")
    shifts = np.arange(ID_BITS - 1, -1, -1, dtype=np.int64)
    return ((ids[:, None] >> shifts) & 1).astype(np.uint8)


def debinarize_id(bits: np.ndarray) -> int:
    """Inverse of binarize_id."""
    bits = np.asarray(bits)
    if bits.shape != (ID_BITS,):
        raise ValueError(f"expected {ID_BITS} bits, got shape {bits.shape}")
    value = 0
    for b in bits:
        value = (value << 1) | int(b)
    return value


def _parse_hex_byte(text: str, line_no: int, field: str) -> int:
    text = text.strip()
    try:
        value = int(text, 16)
    except ValueError:
        raise MalformedHex(f"bad hex byte {text!r}", line_no, field) from None
    if not 0 <= value <= 0xFF:
        raise MalformedHex(f"byte {text!r} out of range", line_no, field)
    return value


def parse_log_record(line: str, schema: LogSchema, line_no: int = 0) -> CanFrame:
    """Parse one CSV record into a CanFrame."""
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) < 3:
        raise ParseError("record has fewer than 3 fields", line_no, "record")

    try:
        timestamp = float(fields[0])
    except ValueError:
        raise ParseError(f"bad timestamp {fields[0]!r}", line_no, "timestamp") from None

    try:
        can_id = int(fields[1], 16)
    except ValueError:
        raise MalformedHex(f"bad CAN ID {fields[1]!r}", line_no, "can_id") from None
    if can_id > MAX_CAN_ID:
        raise ParseError(f"CAN ID 0x{can_id:X} exceeds 12 bits", line_no, "can_id")

    try:
        dlc = int(fields[2])
    except ValueError:
        raise ParseError(f"bad DLC {fields[2]!r}", line_no, "dlc") from None
    if not 0 <= dlc <= 8:
        raise ParseError(f"DLC {dlc} outside 0..8", line_no, "dlc")

    rest = fields[3:]
    if len(rest) < dlc:
        raise DlcMismatch(
            f"expected {dlc} payload bytes, found {len(rest)}", line_no, "payload"
        )
    payload = bytes(
        _parse_hex_byte(rest[i], line_no, f"byte{i}") for i in range(dlc)
    )

    trailing = rest[dlc:]
    if not trailing:
        if schema.flag == "required":
            raise ParseError("missing R/T flag", line_no, "flag")
        label = schema.default_label
    elif len(trailing) == 1:
        if schema.flag == "none":
            raise DlcMismatch(
                f"expected {dlc} payload bytes, found {dlc + 1}", line_no, "payload"
            )
        flag = trailing[0].upper()
        if flag not in _FLAG_TO_LABEL:
            raise ParseError(f"bad flag {trailing[0]!r}", line_no, "flag")
        label = _FLAG_TO_LABEL[flag]
    else:
        raise DlcMismatch(
            f"{len(trailing) - 1} extra fields after payload", line_no, "payload"
        )

    return CanFrame(timestamp, can_id, dlc, payload, label)


def serialize_record(frame: CanFrame) -> str:
    """Render a frame in the canonical CSV layout (inverse of parsing)."""
    parts = [repr(frame.timestamp), f"{frame.can_id:04x}", str(frame.dlc)]
    parts.extend(f"{b:02x}" for b in frame.payload)
    if frame.label is not Label.UNLABELED:
        parts.append(_LABEL_TO_FLAG[frame.label])
    return ",".join(parts)
