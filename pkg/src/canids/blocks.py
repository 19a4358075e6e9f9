"""Fixed-size binarized ID blocks: the detector's input representation.

A block is 100 consecutive CAN IDs binarized into a 100x12 matrix. Windows do
not overlap (stride 100) and a trailing remainder of fewer than 100 frames is
dropped, so a capture of N frames yields exactly floor(N/100) blocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frames import ID_BITS, CanFrame, Label, binarize_ids

logger = logging.getLogger(__name__)

BLOCK_SIZE = 100


@dataclass(frozen=True)
class MessageBlock:
    """100x12 binary matrix of consecutive CAN IDs plus a block label.

    The label is Attack if any constituent frame is an attack, Benign if all
    frames are benign, Unlabeled otherwise.
    """

    matrix: np.ndarray
    label: Label
    start_timestamp: float
    block_index: int

    def __post_init__(self):
        if self.matrix.shape != (BLOCK_SIZE, ID_BITS):
            raise ValueError(f"block matrix shape {self.matrix.shape}")
        self.matrix.flags.writeable = False


def block_label(frame_labels: Sequence[Label]) -> Label:
    """OR over frame labels: one attack frame taints the whole block."""
    if any(l is Label.ATTACK for l in frame_labels):
        return Label.ATTACK
    if all(l is Label.BENIGN for l in frame_labels):
        return Label.BENIGN
    return Label.UNLABELED


def build_blocks(frames: Sequence[CanFrame]) -> list[MessageBlock]:
    """Group frames into consecutive non-overlapping blocks of 100."""
    n_blocks = len(frames) // BLOCK_SIZE
    remainder = len(frames) - n_blocks * BLOCK_SIZE
    if remainder:
        logger.info("dropping trailing remainder of %d frames", remainder)
    if n_blocks == 0:
        return []

    used = frames[: n_blocks * BLOCK_SIZE]
    ids = np.fromiter((f.can_id for f in used), dtype=np.int64, count=len(used))
    bits = binarize_ids(ids).reshape(n_blocks, BLOCK_SIZE, ID_BITS)

    blocks = []
    for b in range(n_blocks):
        chunk = used[b * BLOCK_SIZE : (b + 1) * BLOCK_SIZE]
        blocks.append(
            MessageBlock(
                matrix=bits[b],
                label=block_label([f.label for f in chunk]),
                start_timestamp=chunk[0].timestamp,
                block_index=b,
            )
        )
    return blocks


def block_to_tensor(block: MessageBlock) -> np.ndarray:
    """Single-block float tensor of shape (1, 100, 12, 1), values 0.0/1.0."""
    return block.matrix.astype(np.float32).reshape(1, BLOCK_SIZE, ID_BITS, 1)


def blocks_to_batch(blocks: Sequence[MessageBlock]) -> np.ndarray:
    """Stack blocks into an (N, 100, 12, 1) float tensor."""
    if not blocks:
        return np.zeros((0, BLOCK_SIZE, ID_BITS, 1), dtype=np.float32)
    mats = np.stack([b.matrix for b in blocks])
    return mats.astype(np.float32).reshape(-1, BLOCK_SIZE, ID_BITS, 1)


def tensor_to_matrix(tensor: np.ndarray) -> np.ndarray:
    """Round-trip helper: (1, 100, 12, 1) or (100, 12) tensor -> uint8 matrix."""
    mat = np.asarray(tensor).reshape(BLOCK_SIZE, ID_BITS)
    return (mat >= 0.5).astype(np.uint8)


_LABEL_CHAR = {Label.BENIGN: "B", Label.ATTACK: "A", Label.UNLABELED: "U"}
_CHAR_LABEL = {v: k for k, v in _LABEL_CHAR.items()}


def dump_blocks(path, blocks: Sequence[MessageBlock]) -> None:
    """Golden-test dump: one block per line, 1200 '0'/'1' chars plus label."""
    with open(path, "w", encoding="utf-8") as fh:
        for b in blocks:
            bits = "".join(str(int(v)) for v in b.matrix.ravel())
            fh.write(f"{bits},{_LABEL_CHAR[b.label]}\n")


def load_block_dump(path) -> list[MessageBlock]:
    blocks = []
    with open(path, "r", encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            bits_str, label_char = line.strip().split(",")
            if len(bits_str) != BLOCK_SIZE * ID_BITS:
                raise ValueError(f"line {idx + 1}: expected 1200 bits")
            mat = np.frombuffer(bits_str.encode(), dtype=np.uint8) - ord("0")
            blocks.append(
                MessageBlock(
                    matrix=mat.reshape(BLOCK_SIZE, ID_BITS).copy(),
                    label=_CHAR_LABEL[label_char],
                    start_timestamp=0.0,
                    block_index=idx,
                )
            )
    return blocks
