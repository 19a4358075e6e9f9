"""Streaming replay of a dataset through the detector.

Two actors: a producer that delivers frames in timestamp order at the
requested rate, and a classifier that consumes whole 100-frame buffers.
The ping-pong pair lets accumulation overlap inference; when the
classifier still holds a buffer the producer needs, the producer blocks
(backpressure) and the event is counted, never dropped.

Rate control is simulated by default (virtual clock): deadline misses
are computed by comparing measured inference latency against the block
accumulation window.  Wall-clock pacing actually sleeps between frames,
so buffer overruns there reflect real timing.
"""

import logging
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .blocks import BLOCK_SIZE
from .detector import DEFAULT_THRESHOLD, DetectionVerdict, _verdict
from .errors import ModelMissing, NoSamples, RateNonPositive
from .frames import binarize_ids

logger = logging.getLogger(__name__)

__all__ = ["LatencyStats", "PingPongBuffer", "replay", "report_stats"]


class PingPongBuffer:
    """Two fixed-size frame buffers exchanged between one writer and one reader.

    The writer fills the active buffer frame by frame; on the last slot
    the buffer is handed over and the writer flips to the other one,
    blocking while the reader still holds it.  Handoffs go through a
    condition variable, which also gives the reader a visibility barrier
    for the completed buffer's contents.
    """

    def __init__(self, slots: int = BLOCK_SIZE):
        self._slots = slots
        self._bufs = ([None] * slots, [None] * slots)
        self._writer = 0
        self._fill = 0
        self._ready: list = []
        self._reader_holds: int | None = None
        self._closed = False
        self._cond = threading.Condition()
        self.overruns = 0
        self.frames_in = 0

    def push(self, frame) -> None:
        buf = self._bufs[self._writer]
        buf[self._fill] = frame
        self._fill += 1
        self.frames_in += 1
        if self._fill < self._slots:
            return
        nxt = 1 - self._writer
        with self._cond:
            self._ready.append(self._writer)
            self._cond.notify_all()
            if self._reader_holds == nxt or nxt in self._ready:
                # both buffers in flight: inference has overrun its window
                self.overruns += 1
                self._cond.wait_for(
                    lambda: self._reader_holds != nxt and nxt not in self._ready
                )
        self._writer = nxt
        self._fill = 0

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def leftover(self) -> int:
        """Frames in the active buffer that never filled a block."""
        return self._fill

    def take(self) -> list | None:
        """Block until a filled buffer is ready; None once closed and drained."""
        with self._cond:
            self._cond.wait_for(lambda: self._ready or self._closed)
            if not self._ready:
                return None
            idx = self._ready.pop(0)
            self._reader_holds = idx
        return self._bufs[idx]

    def release(self) -> None:
        with self._cond:
            self._reader_holds = None
            self._cond.notify_all()


@dataclass
class LatencyStats:
    """Per-block inference latencies in microseconds plus counters."""

    samples_us: list = field(default_factory=list)
    deadline_misses: int = 0
    overruns: int = 0
    window_us: float | None = None

    @property
    def blocks(self) -> int:
        return len(self.samples_us)

    def _summary(self) -> tuple[float, float, float, float]:
        if not self.samples_us:
            raise NoSamples("no blocks were processed")
        arr = np.asarray(self.samples_us)
        return (
            float(arr.mean()),
            float(np.percentile(arr, 50)),
            float(np.percentile(arr, 99)),
            float(arr.max()),
        )


def replay(
    dataset,
    model,
    threshold: int = DEFAULT_THRESHOLD,
    rate: float | None = None,
    pacing: str = "virtual",
    classify_fn=None,
) -> tuple[list[DetectionVerdict], LatencyStats]:
    """Stream dataset frames through the ping-pong pair and classify.

    rate is frames/second; None replays as fast as possible with no
    deadline accounting.  pacing 'virtual' only computes deadlines,
    'wall' really sleeps.  classify_fn(matrix) -> distance may replace
    the model path (used to exercise overrun behaviour).
    """
    if model is None and classify_fn is None:
        raise ModelMissing("replay needs a model or an explicit classify_fn")
    if rate is not None and rate <= 0:
        raise RateNonPositive(f"replay rate must be positive, got {rate}")
    if pacing not in ("virtual", "wall"):
        raise ValueError(f"unknown pacing {pacing!r}")

    stats = LatencyStats()
    if rate is not None:
        stats.window_us = BLOCK_SIZE / rate * 1e6

    if classify_fn is None:

        def classify_fn(matrix: np.ndarray) -> int:
            tensor = matrix[None, :, :, None].astype(np.float32)
            rec = model.forward(tensor) >= 0.5
            return int(np.count_nonzero(rec != matrix[None, :, :, None].astype(bool)))

    buffer = PingPongBuffer()

    def produce() -> None:
        if pacing == "wall" and rate is not None:
            start = time.monotonic()
            for i, frame in enumerate(dataset.frames):
                due = start + i / rate
                delay = due - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                buffer.push(frame)
        else:
            for frame in dataset.frames:
                buffer.push(frame)
        buffer.close()

    producer = threading.Thread(target=produce, name="replay-producer", daemon=True)
    producer.start()

    verdicts: list[DetectionVerdict] = []
    index = 0
    while True:
        frames = buffer.take()
        if frames is None:
            break
        matrix = binarize_ids(np.array([f.can_id for f in frames], dtype=np.int64))
        t0 = time.perf_counter()
        distance = classify_fn(matrix)
        elapsed_us = (time.perf_counter() - t0) * 1e6
        buffer.release()
        stats.samples_us.append(elapsed_us)
        if stats.window_us is not None and elapsed_us > stats.window_us:
            stats.deadline_misses += 1
        verdicts.append(_verdict(index, distance, threshold))
        index += 1

    producer.join()
    stats.overruns = buffer.overruns
    logger.info("replayed %d frames -> %d blocks (%d leftover), %d deadline misses",
                buffer.frames_in, len(verdicts), buffer.leftover, stats.deadline_misses)
    return verdicts, stats


def report_stats(stats: LatencyStats) -> str:
    """Human-readable latency summary against the accumulation window."""
    mean, p50, p99, worst = stats._summary()
    lines = [
        f"blocks processed : {stats.blocks}",
        f"latency mean     : {mean / 1000:.3f} ms",
        f"latency p50      : {p50 / 1000:.3f} ms",
        f"latency p99      : {p99 / 1000:.3f} ms",
        f"latency max      : {worst / 1000:.3f} ms",
    ]
    if stats.window_us is not None:
        lines.append(f"accumulation window: {stats.window_us / 1000:.3f} ms per block")
        lines.append(f"deadline misses  : {stats.deadline_misses}")
    lines.append(f"buffer overruns  : {stats.overruns}")
    return "\n".join(lines)
