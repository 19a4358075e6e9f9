"""Verdicts from reconstructions: binarize, hamming distance, threshold.

The threshold is calibrated on benign blocks by sweeping 0..20 and
taking the smallest value with zero false positives; a block is flagged
as an attack when its distance is >= the threshold (boundary inclusive,
and sigmoid outputs of exactly 0.5 binarize to 1).
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .blocks import MessageBlock, blocks_to_batch
from .errors import EmptyCalibrationSet, ShapeMismatch
from .frames import Label

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 10
SWEEP_RANGE = range(0, 21)
MIN_CALIBRATION_BLOCKS = 100

__all__ = [
    "DEFAULT_THRESHOLD",
    "DetectionVerdict",
    "ThresholdCalibration",
    "calibrate_from_distances",
    "calibrate_threshold",
    "classify_block",
    "classify_blocks",
    "hamming",
    "reconstruct_and_binarize",
    "reconstruction_distances",
    "write_calibration_csv",
    "write_verdicts_csv",
]


@dataclass(frozen=True)
class DetectionVerdict:
    block_index: int
    hamming_distance: int
    verdict: Label
    threshold_used: int

    def __post_init__(self):
        expected = Label.ATTACK if self.hamming_distance >= self.threshold_used else Label.BENIGN
        if self.verdict is not expected:
            raise ShapeMismatch(
                f"verdict {self.verdict} inconsistent with distance "
                f"{self.hamming_distance} at threshold {self.threshold_used}"
            )


@dataclass(frozen=True)
class ThresholdCalibration:
    """False-positive counts per candidate threshold and the chosen value."""

    sweep: dict[int, int]
    chosen: int


def reconstruct_and_binarize(model, tensor: np.ndarray) -> np.ndarray:
    """Forward one block tensor (1,h,w,1) and cut at 0.5; 0.5 maps to 1."""
    out = model.forward(tensor)
    if out.shape != tensor.shape:
        raise ShapeMismatch(f"reconstruction {out.shape} does not match input {tensor.shape}")
    return (out[0, :, :, 0] >= 0.5).astype(np.uint8)


def hamming(a: np.ndarray, b: np.ndarray) -> int:
    if a.shape != b.shape:
        raise ShapeMismatch(f"hamming needs equal shapes, got {a.shape} and {b.shape}")
    return int(np.count_nonzero(a != b))


def reconstruction_distances(model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Per-block hamming distances between input bits and binarized output."""
    out = []
    for start in range(0, x.shape[0], batch_size):
        xb = x[start : start + batch_size]
        rec = model.forward(xb) >= 0.5
        out.append(np.count_nonzero(rec != (xb >= 0.5), axis=(1, 2, 3)))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def calibrate_from_distances(distances) -> ThresholdCalibration:
    """Sweep thresholds over a benign distance multiset.

    Chosen is the smallest threshold with zero false positives; if every
    candidate has false positives, the one minimizing them, largest on
    ties.
    """
    dist = np.asarray(list(distances))
    if dist.size == 0:
        raise EmptyCalibrationSet("no benign distances to calibrate on")
    sweep = {t: int(np.count_nonzero(dist >= t)) for t in SWEEP_RANGE}
    for t in SWEEP_RANGE:
        if sweep[t] == 0:
            return ThresholdCalibration(sweep, t)
    chosen = min(SWEEP_RANGE, key=lambda t: (sweep[t], -t))
    return ThresholdCalibration(sweep, chosen)


def calibrate_threshold(model, x: np.ndarray) -> ThresholdCalibration:
    """Calibrate on benign block tensors (n, h, w, 1)."""
    if x is None or x.ndim != 4 or x.shape[0] == 0:
        raise EmptyCalibrationSet("no benign blocks to calibrate on")
    if x.shape[0] < MIN_CALIBRATION_BLOCKS:
        logger.warning("calibrating on only %d blocks (recommended >= %d)",
                       x.shape[0], MIN_CALIBRATION_BLOCKS)
    cal = calibrate_from_distances(reconstruction_distances(model, x))
    logger.info("calibrated threshold %d (fp sweep at 0/10/20: %d/%d/%d)",
                cal.chosen, cal.sweep[0], cal.sweep[10], cal.sweep[20])
    return cal


def _verdict(index: int, distance: int, threshold: int) -> DetectionVerdict:
    label = Label.ATTACK if distance >= threshold else Label.BENIGN
    return DetectionVerdict(index, distance, label, threshold)


def classify_block(model, block: MessageBlock, threshold: int) -> DetectionVerdict:
    tensor = block.matrix[None, :, :, None].astype(np.float32)
    distance = hamming(reconstruct_and_binarize(model, tensor), block.matrix)
    return _verdict(block.block_index, distance, threshold)


def classify_blocks(
    model, blocks: list[MessageBlock], threshold: int, batch_size: int = 256
) -> list[DetectionVerdict]:
    distances = reconstruction_distances(model, blocks_to_batch(blocks), batch_size)
    return [_verdict(b.block_index, int(d), threshold) for b, d in zip(blocks, distances)]


def write_verdicts_csv(verdicts, path, blocks=None) -> None:
    """CSV verdict stream; label column filled when blocks are given."""
    by_index = {b.block_index: b for b in blocks} if blocks else {}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block_index", "start_timestamp", "distance", "verdict", "label"])
        for v in verdicts:
            block = by_index.get(v.block_index)
            writer.writerow(
                [
                    v.block_index,
                    "" if block is None else repr(block.start_timestamp),
                    v.hamming_distance,
                    v.verdict.name.lower(),
                    "" if block is None else block.label.name.lower(),
                ]
            )


def write_calibration_csv(cal: ThresholdCalibration, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "fp_count"])
        for t in sorted(cal.sweep):
            writer.writerow([t, cal.sweep[t]])
