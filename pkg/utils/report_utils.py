# report_utils.py
# Sweep parsing, rate overrides and CSV writing with an audit header line.

import io
import math
import sys
import logging
from dataclasses import dataclass
from pathlib import Path

import pandas as pd

from config import TOOL_VERSION, CLI_CONFIG
from utils.errors import UsageError

logger = logging.getLogger(__name__)


# --- Sweeps ---

@dataclass(frozen=True)
class SweepSpec:
    """SINR thresholds applied uniformly to every node, one report row each."""
    gamma_values: tuple[float, ...]

    def __post_init__(self):
        if not self.gamma_values:
            raise UsageError("sweep has no gamma values")
        bad = [g for g in self.gamma_values if not g > 0]
        if bad:
            raise UsageError(f"gamma values must be positive, got {bad}")


def parse_sweep(text: str) -> SweepSpec:
    """start:stop:step, stop included when it lands on the grid."""
    parts = text.split(":")
    if len(parts) != 3:
        raise UsageError(f"sweep must look like start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError:
        raise UsageError(f"sweep bounds must be numbers, got {text!r}") from None
    if not step > 0:
        raise UsageError(f"sweep step must be positive, got {step}")
    if stop < start:
        raise UsageError(f"sweep stop {stop} lies below start {start}")
    count = math.floor((stop - start) / step + 1e-9) + 1
    return SweepSpec(tuple(round(start + k * step, 12) for k in range(count)))


def single_gamma(value: float) -> SweepSpec:
    return SweepSpec((float(value),))


# --- Rates ---

def parse_rate_overrides(text: str, flow_ids) -> dict[int, float]:
    """ID=RATE,... -> {flow id: rate}; flows not listed get rate 0."""
    known = set(flow_ids)
    rates = {fid: 0.0 for fid in flow_ids}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"rate override {item!r} must look like ID=RATE")
        try:
            flow_id, rate = int(key), float(value)
        except ValueError:
            raise UsageError(f"rate override {item!r} must look like ID=RATE") from None
        if flow_id not in known:
            raise UsageError(f"rate override names unknown flow {flow_id}")
        if not 0.0 <= rate <= 1.0:
            raise UsageError(f"rate of flow {flow_id} must lie in [0, 1], got {rate}")
        rates[flow_id] = rate
    return rates


# --- CSV ---

def audit_header(command: str, seed: int, digest: str) -> str:
    return f"# mpath-alloc {TOOL_VERSION} command={command} seed={seed} scenario_sha256={digest}"


def render_csv(frame: pd.DataFrame, header: str) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=CLI_CONFIG["float_format"], lineterminator="\n")
    return header + "\n" + buffer.getvalue()


def write_csv(frame: pd.DataFrame, header: str, out: str | Path | None = None) -> None:
    """Writes the report to `out`, or to stdout when no path is given."""
    text = render_csv(frame, header)
    if out is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    Path(out).write_text(text, encoding="utf-8")
    logger.info("Report written to %s (%d rows)", out, len(frame))
