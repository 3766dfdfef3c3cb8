"""Satellite-to-ground downlink confined to contact windows with FIFO queueing."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

from .constellation import ContactWindow
from .domain import ByteSize

DEFAULT_BANDWIDTH_BPS = 110.67e6


@dataclass(frozen=True)
class LinkSpec:
    bandwidth_bps: float = DEFAULT_BANDWIDTH_BPS
    per_message_overhead_bytes: int = 0

    def __post_init__(self):
        if not self.bandwidth_bps > 0:
            raise ValueError("bandwidth_bps must be > 0")
        if self.per_message_overhead_bytes < 0:
            raise ValueError("per_message_overhead_bytes must be >= 0")

    def airtime(self, nbytes) -> float:
        return (int(nbytes) + self.per_message_overhead_bytes) * 8 / self.bandwidth_bps


@dataclass(frozen=True)
class TransmissionRecord:
    release_s: float
    start_s: float
    complete_s: float
    bytes: ByteSize
    # (start, end) of every in-window burst
    segments: Tuple[Tuple[float, float], ...] = ()

    @property
    def active_s(self) -> float:
        return sum(b - a for a, b in self.segments)


@dataclass
class SatelliteQueue:
    """FIFO tail of one satellite's downlink: the time the link frees up."""

    tail_s: float = 0.0


class HorizonExceeded(RuntimeError):
    def __init__(self, remaining_s, sent_s, start_s=None):
        self.remaining_s = remaining_s
        self.sent_s = sent_s
        self.start_s = start_s
        super().__init__(f"payload incomplete at horizon: {sent_s:.6f} s sent, "
                         f"{remaining_s:.6f} s of air time left")


def schedule_transmission(nbytes, release_s: float, windows: Sequence[ContactWindow],
                          link: LinkSpec, queue: SatelliteQueue) -> TransmissionRecord:
    """Place one payload on the downlink and advance the queue tail.

    Bits flow only inside contact windows; a payload interrupted by a window
    closing resumes at the next window.
    """
    nbytes = nbytes if isinstance(nbytes, ByteSize) else ByteSize(int(nbytes))
    need = link.airtime(nbytes.bytes)
    t = max(release_s, queue.tail_s)
    segments: List[Tuple[float, float]] = []
    start = None
    sent = 0.0
    for w in windows:
        if w.end_s <= t and not (need == 0 and w.end_s == t):
            continue
        begin = max(t, w.start_s)
        if start is None:
            start = begin
        if need - sent <= w.end_s - begin:
            complete = begin + (need - sent)
            segments.append((begin, complete))
            queue.tail_s = complete
            return TransmissionRecord(release_s, start, complete, nbytes, tuple(segments))
        segments.append((begin, w.end_s))
        sent += w.end_s - begin
        t = w.end_s
    if windows:
        queue.tail_s = max(queue.tail_s, windows[-1].end_s)
    raise HorizonExceeded(need - sent, sent, start)
