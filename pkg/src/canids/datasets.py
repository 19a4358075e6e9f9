"""Dataset loading, deterministic splits, and synthetic traffic generation.

Splits are contiguous in time, never shuffled: the detector learns message
ordering, which shuffling would destroy. Synthetic corpora are written in the
same CSV layout as real captures so every downstream path is format-uniform.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientData,
    InvalidProfile,
    InvalidSpec,
    InvalidWindow,
    ParseError,
    RateNonPositive,
)
from .frames import CanFrame, Label, LogSchema, parse_log_record, serialize_record

logger = logging.getLogger(__name__)

DOS_CAN_ID = 0x000  # highest-priority ID, mirrors the known DoS construction
FUZZY_ID_MAX = 0x7FF


class DatasetSource(enum.Enum):
    BENIGN_LOG = "benign-log"
    DOS_LOG = "dos-log"
    FUZZY_LOG = "fuzzy-log"
    GEAR_SPOOF_LOG = "gear-spoof-log"
    RPM_SPOOF_LOG = "rpm-spoof-log"
    SYNTHETIC = "synthetic"


class AttackKind(enum.Enum):
    DOS = "dos"
    FUZZY = "fuzzy"
    SPOOF = "spoof"


@dataclass
class Dataset:
    """An ordered CAN capture; timestamps are non-decreasing."""

    frames: list[CanFrame]
    source: DatasetSource = DatasetSource.SYNTHETIC

    def __len__(self):
        return len(self.frames)

    def label_counts(self) -> dict[Label, int]:
        counts = {label: 0 for label in Label}
        for f in self.frames:
            counts[f.label] += 1
        return counts

    def time_range(self) -> tuple[float, float]:
        if not self.frames:
            raise InsufficientData("dataset is empty")
        return self.frames[0].timestamp, self.frames[-1].timestamp


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train/validation/test fractions; must sum to 1."""

    train_frac: float = 0.75
    val_frac: float = 0.15
    test_frac: float = 0.10
    seed: int = 0  # unused by the order-based split; kept for config symmetry

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if any(f < 0 for f in (self.train_frac, self.val_frac, self.test_frac)):
            raise InvalidSpec("split fractions must be non-negative")
        if abs(total - 1.0) > 1e-9:
            raise InvalidSpec(f"split fractions sum to {total}, expected 1.0")


@dataclass(frozen=True)
class IdSchedule:
    """One periodic transmitter: fixed CAN ID, period, phase, and jitter."""

    can_id: int
    period_s: float
    phase_s: float = 0.0
    jitter: float = 0.0


@dataclass
class TrafficProfile:
    """Synthetic benign traffic model: a pool of periodic IDs."""

    id_pool: list[IdSchedule]
    duration_s: float
    seed: int = 0

    def __post_init__(self):
        if not self.id_pool:
            raise InvalidProfile("id_pool is empty")
        if self.duration_s <= 0:
            raise InvalidProfile("duration must be positive")
        for sched in self.id_pool:
            if sched.period_s <= 0:
                raise InvalidProfile(f"period {sched.period_s} must be positive")
            if sched.phase_s < 0:
                raise InvalidProfile(f"phase {sched.phase_s} must be non-negative")
            if not 0 <= sched.jitter < 1:
                raise InvalidProfile(f"jitter {sched.jitter} outside [0, 1)")

    def expected_frame_count(self) -> int:
        """Approximate frame count: sum of duration/period over the pool."""
        return sum(int(self.duration_s / s.period_s) for s in self.id_pool)


def load_dataset(
    path,
    schema: LogSchema,
    source: DatasetSource = DatasetSource.SYNTHETIC,
    on_error: str = "raise",
) -> Dataset:
    """Load a CSV capture.

    on_error: "raise" fails on the first bad record; "skip" drops bad records
    and logs an aggregate count.
    """
    if on_error not in ("raise", "skip"):
        raise ValueError(f"unknown on_error mode {on_error!r}")
    frames = []
    skipped = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                frames.append(parse_log_record(line, schema, line_no))
            except ParseError:
                if on_error == "raise":
                    raise
                skipped += 1
    if skipped:
        logger.warning("%s: skipped %d malformed records", path, skipped)
    if not frames:
        logger.warning("%s: no records parsed", path)

    for i in range(1, len(frames)):
        if frames[i].timestamp < frames[i - 1].timestamp:
            raise ParseError(
                f"timestamp regression {frames[i].timestamp} after "
                f"{frames[i - 1].timestamp}",
                line_no=i + 1,
                field="timestamp",
            )

    ds = Dataset(frames, source)
    counts = ds.label_counts()
    logger.info(
        "%s: %d frames (benign=%d attack=%d unlabeled=%d)",
        path, len(frames), counts[Label.BENIGN], counts[Label.ATTACK],
        counts[Label.UNLABELED],
    )
    return ds


def save_dataset(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame in dataset.frames:
            fh.write(serialize_record(frame))
            fh.write("\n")


def split_contiguous(
    dataset: Dataset, spec: SplitSpec
) -> tuple[Dataset, Dataset, Dataset]:
    """Cut the capture into contiguous train/val/test segments in time order.

    Boundaries sit at floor(n * cumulative_fraction), so each segment is
    within one frame of its exact share and any rounding deficit accumulates
    to the last segment (7 frames at 75:15:10 -> 5/1/1).
    """
    if dataset.source not in (DatasetSource.BENIGN_LOG, DatasetSource.SYNTHETIC):
        raise InvalidSpec(
            f"contiguous split is defined for benign captures, got {dataset.source}"
        )
    n = len(dataset.frames)
    b1 = math.floor(n * spec.train_frac)
    b2 = math.floor(n * (spec.train_frac + spec.val_frac))
    parts = (dataset.frames[:b1], dataset.frames[b1:b2], dataset.frames[b2:])
    return tuple(Dataset(list(p), dataset.source) for p in parts)


def take_test_prefix(dataset: Dataset, n_messages: int) -> Dataset:
    """First n_messages frames in original order."""
    if n_messages < 0:
        raise ValueError("n_messages must be non-negative")
    if len(dataset.frames) < n_messages:
        raise InsufficientData(
            f"need {n_messages} frames, dataset has {len(dataset.frames)}"
        )
    return Dataset(list(dataset.frames[:n_messages]), dataset.source)


def generate_benign(profile: TrafficProfile) -> Dataset:
    """Merge per-ID periodic schedules with uniform jitter into one capture.

    Deterministic given the profile seed. Frame k of a schedule nominally
    fires at phase + k*period; jitter shifts it by period*jitter*U(-0.5, 0.5).
    Jittered times falling outside (0, duration] are dropped.
    """
    rng = np.random.default_rng(profile.seed)
    times, ids = [], []
    for sched in profile.id_pool:
        count = int(profile.duration_s / sched.period_s) + 1
        t = sched.phase_s + np.arange(count, dtype=np.float64) * sched.period_s
        if sched.jitter > 0:
            t = t + sched.period_s * sched.jitter * rng.uniform(-0.5, 0.5, count)
        keep = (t > 0) & (t <= profile.duration_s)
        times.append(t[keep])
        ids.append(np.full(int(keep.sum()), sched.can_id, dtype=np.int64))
    all_times = np.concatenate(times)
    all_ids = np.concatenate(ids)
    order = np.lexsort((all_ids, all_times))
    payloads = rng.integers(0, 256, size=(all_times.size, 8), dtype=np.uint8)

    frames = [
        CanFrame(
            float(all_times[i]),
            int(all_ids[i]),
            8,
            payloads[k].tobytes(),
            Label.BENIGN,
        )
        for k, i in enumerate(order)
    ]
    return Dataset(frames, DatasetSource.SYNTHETIC)


def inject_attack(
    dataset: Dataset,
    kind: AttackKind,
    rate: float,
    window: tuple[float, float],
    seed: int = 0,
    spoof_id: int | None = None,
) -> Dataset:
    """Merge floor(rate * window) attack frames into a capture.

    DoS frames carry ID 0x000, fuzzy frames a uniform random ID in
    [0, 0x7FF], spoof frames the given legitimate ID. Pre-existing frames are
    never relabeled or reordered; on timestamp ties the original frame sorts
    first.
    """
    if rate < 0:
        raise RateNonPositive(f"injection rate {rate} is negative")
    t0, t1 = window
    lo, hi = dataset.time_range()
    if not (t0 < t1):
        raise InvalidWindow(f"window ({t0}, {t1}) is empty")
    if t0 < lo or t1 > hi:
        raise InvalidWindow(
            f"window ({t0}, {t1}) outside dataset range ({lo}, {hi})"
        )
    if kind is AttackKind.SPOOF and spoof_id is None:
        raise InvalidSpec("spoof injection requires spoof_id")

    count = int(rate * (t1 - t0))
    if count == 0:
        return Dataset(list(dataset.frames), dataset.source)

    rng = np.random.default_rng(seed)
    times = np.sort(rng.uniform(t0, t1, count))
    if kind is AttackKind.DOS:
        ids = np.zeros(count, dtype=np.int64)
        payloads = np.zeros((count, 8), dtype=np.uint8)
    elif kind is AttackKind.FUZZY:
        ids = rng.integers(0, FUZZY_ID_MAX + 1, count, dtype=np.int64)
        payloads = rng.integers(0, 256, size=(count, 8), dtype=np.uint8)
    else:
        ids = np.full(count, spoof_id, dtype=np.int64)
        payloads = rng.integers(0, 256, size=(count, 8), dtype=np.uint8)

    injected = [
        CanFrame(float(times[k]), int(ids[k]), 8, payloads[k].tobytes(), Label.ATTACK)
        for k in range(count)
    ]

    merged = []
    i = j = 0
    original = dataset.frames
    while i < len(original) and j < len(injected):
        if original[i].timestamp <= injected[j].timestamp:
            merged.append(original[i])
            i += 1
        else:
            merged.append(injected[j])
            j += 1
    merged.extend(original[i:])
    merged.extend(injected[j:])
    return Dataset(merged, dataset.source)


def make_profile(name: str, seed: int = 0, jitter: float = 0.0) -> TrafficProfile:
    """Named benign traffic profiles.

    "small" generates ~12k frames for quick runs; "desk" generates 200k+
    frames for full desk-scale training. Periods are harmonic (10/20/50/
    100 ms) as on production buses, so message order repeats on a 100 ms
    hyperperiod, and golden-ratio phase stagger keeps transmitters from
    colliding. Arbitration on a healthy bus resolves each contention the
    same way every time, so the canonical profiles are jitter-free; pass
    jitter > 0 to model a noisier bus (it raises the reconstruction
    floor, since transmission-order swaps are inherently unpredictable).
    """
    # Curated 12-bit IDs spread over the arbitration range with varied bit
    # patterns.
    ids = [
        0x110, 0x153, 0x1A7, 0x1F0, 0x220, 0x25C, 0x2B3, 0x2E9, 0x316, 0x34D,
        0x391, 0x3D6, 0x412, 0x45B, 0x4A1, 0x4EF, 0x520, 0x57A, 0x5C8, 0x60E,
    ]
    periods_ms = [10] * 4 + [20] * 6 + [50] * 6 + [100] * 4
    pool = [
        IdSchedule(
            can_id,
            p / 1000.0,
            phase_s=(p / 1000.0) * ((i * 0.381966) % 1.0),
            jitter=jitter,
        )
        for i, (can_id, p) in enumerate(zip(ids, periods_ms))
    ]
    if name == "small":
        return TrafficProfile(pool[:8], duration_s=20.0, seed=seed)
    if name == "desk":
        return TrafficProfile(pool, duration_s=240.0, seed=seed)
    raise InvalidProfile(f"unknown profile {name!r}")
