"""Poisson arrivals, per-slice FIFO queues, and delay accounting.

Queues are lossless: packets wait until drained by the slice's per-slot
capacity. Delay of a completed packet is ``serve_slot - arrival_slot + 1``
so same-slot service counts as one slot. A packet breaches the latency
deadline at most once — either when it completes late or on the first
slot its age exceeds the deadline while still queued.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class TrafficRequest:
    """Per-slice traffic descriptor: required rate, arrival rate, deadline."""

    required_rate_bps: float
    arrival_rate_per_slot: float
    deadline_slots: int

    def __post_init__(self):
        if self.required_rate_bps < 0 or self.arrival_rate_per_slot < 0:
            raise ValueError("rates must be >= 0")
        if self.deadline_slots < 1:
            raise ValueError("deadline must be >= 1 slot")


class Completion(NamedTuple):
    """A finished packet: its delay and whether it was already counted late."""

    delay: int
    precounted: bool


# Packets are plain [arrival_slot, bits_left, counted_late] lists; the hot
# loop moves tens of them per slot and attribute access would dominate.
ARRIVAL, BITS, COUNTED = 0, 1, 2


@dataclass
class SliceQueue:
    """FIFO packet queue for one slice of one cell.

    ``bits_backlog`` and ``arrivals_total`` are maintained incrementally so
    per-slot accounting stays O(packets moved), not O(queue length).
    """

    slice_id: int
    packet_bits: float
    packets: deque = field(default_factory=deque)
    served_delays: list = field(default_factory=list)
    bits_backlog: float = 0.0
    arrivals_total: int = 0

    def __len__(self) -> int:
        return len(self.packets)

    def clear(self):
        self.packets.clear()
        self.served_delays.clear()
        self.bits_backlog = 0.0
        self.arrivals_total = 0


def sample_arrivals(lam: float, rng: np.random.Generator) -> int:
    """Poisson packet count for one slot."""
    if lam < 0:
        raise ValueError("arrival rate must be >= 0")
    return int(rng.poisson(lam))


def enqueue(queue: SliceQueue, count: int, slot: int) -> SliceQueue:
    """Append ``count`` packets arriving at ``slot``."""
    if count < 0:
        raise ValueError("packet count must be >= 0")
    bits = queue.packet_bits
    packets = queue.packets
    for _ in range(count):
        packets.append([slot, bits, False])
    queue.bits_backlog += count * bits
    queue.arrivals_total += count
    return queue


def serve(queue: SliceQueue, capacity_bits: float, slot: int):
    """Drain FIFO until capacity is spent; return completions.

    Partially-served head packets keep their residual bits. Returns
    ``(queue, completions, served_bits)``; completions are
    (delay, counted_before) pairs.
    """
    if capacity_bits < 0:
        raise ValueError("capacity must be >= 0")
    remaining = capacity_bits
    served = 0.0
    completions = []
    packets = queue.packets
    delays = queue.served_delays
    while packets and remaining > 0.0:
        head = packets[0]
        bits_left = head[BITS]
        if bits_left <= remaining:
            remaining -= bits_left
            served += bits_left
            packets.popleft()
            delay = slot - head[ARRIVAL] + 1
            completions.append((delay, head[COUNTED]))
            delays.append(delay)
        else:
            head[BITS] = bits_left - remaining
            served += remaining
            remaining = 0.0
    queue.bits_backlog = max(0.0, queue.bits_backlog - served)
    return queue, completions, served


def deadline_violations(completed, backlog: SliceQueue, deadline: int, slot: int) -> int:
    """Late completions plus backlogged packets newly older than the deadline.

    ``completed`` entries may be (delay, counted_before) pairs or plain
    delays (treated as not previously counted). Backlogged packets are
    marked so each contributes exactly once over its lifetime.
    """
    if deadline < 1:
        raise ValueError("deadline must be >= 1 slot")
    count = 0
    for item in completed:
        if isinstance(item, tuple):
            if item[0] > deadline and not item[1]:
                count += 1
        elif item > deadline:
            count += 1
    age_cut = slot - deadline  # arrived at or before this -> age > deadline
    for packet in backlog.packets:
        if packet[ARRIVAL] > age_cut:
            break  # FIFO: everything behind is younger
        if not packet[COUNTED]:
            packet[COUNTED] = True
            count += 1
    return count
