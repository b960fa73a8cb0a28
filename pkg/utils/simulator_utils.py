# simulator_utils.py
# Statistics helpers for the slotted simulator: delay summaries, strided queue
# traces and trend estimation.

import math
import logging
from dataclasses import dataclass

import numpy as np
from scipy import stats

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DelayStats:
    """Source-injection to destination-decode delay, in slots."""
    mean: float
    p99: float
    samples: int

    @classmethod
    def empty(cls) -> "DelayStats":
        return cls(mean=math.nan, p99=math.nan, samples=0)


def summarize_delays(delays) -> DelayStats:
    if not len(delays):
        return DelayStats.empty()
    values = np.asarray(delays, dtype=float)
    return DelayStats(mean=float(values.mean()), p99=float(np.percentile(values, 99)), samples=len(values))


def binomial_stderr(rate: float, trials: int) -> float:
    if trials <= 0:
        return 0.0
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / trials)


# --- Queue traces ---

class TraceRecorder:
    """Records every relay's queue length once per `stride` measured slots."""

    def __init__(self, relay_ids, first_slot: int, last_slot: int, stride: int):
        self.relay_ids = list(relay_ids)
        self.stride = stride
        self.first_slot = first_slot
        count = max(0, (last_slot - first_slot + stride - 1) // stride)
        self.slots = first_slot + stride * np.arange(count)
        self.lengths = np.zeros((len(self.relay_ids), count), dtype=np.int64)

    def due(self, slot: int) -> bool:
        return slot >= self.first_slot and (slot - self.first_slot) % self.stride == 0

    def record(self, slot: int, queue_lengths) -> None:
        column = (slot - self.first_slot) // self.stride
        self.lengths[:, column] = queue_lengths

    def traces(self) -> dict[int, np.ndarray]:
        return {rid: self.lengths[k] for k, rid in enumerate(self.relay_ids)}


def queue_trend(slots: np.ndarray, lengths: np.ndarray) -> float:
    """Least-squares slope of queue length over time, packets/slot."""
    if len(slots) < 2:
        return 0.0
    if not np.any(lengths != lengths[0]):
        return 0.0  # flat trace
    return float(stats.linregress(slots, lengths).slope)
