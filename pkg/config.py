# Central configuration settings for the multipath flow allocator.
import os
import logging
from dotenv import load_dotenv

load_dotenv()

TOOL_VERSION = "0.4.0"

SOLVER_CONFIG = {
    "seed": 7,
    "restarts": 8,
    "initial_temperature": 1.0,
    "cooling_factor": 0.95,
    "iterations_per_temperature": 200,
    "min_temperature": 1e-4,
    "step_sigma": 0.05,
    "penalty_coefficient": 100.0,
    "tolerance": 1e-6,
    "polish_min_step": 1e-7,
    "polish_max_rounds": 400,
    "repair_rounds": 50,
    "stall_levels": 12,         # a restart freezes after this many levels without progress
    "stall_temperature": 0.05,  # and only at or below this temperature
    "stall_tolerance": 1e-9,
    "subset_flow_cap": 4,       # all flow subsets get a chain up to this many flows, singletons above
}

SIMULATION_CONFIG = {
    "seed": 11,
    "slots": 1_000_000,
    "warmup_slots": 10_000,
    "block_slots": 4096,
    "trace_stride": 10,
    "trend_epsilon": 1e-4,  # packets/slot
    "min_trend_slots": 100_000,
}

THROUGHPUT_CONFIG = {
    "enumeration_cap": 24,
    "chunk_bits": 16,
    "fused_bits": 9,           # links with at most this many interferers are evaluated in one pass
    "unused_rate": 1e-4,       # a flow below this rate is not employed: its nodes stay silent
}

CLI_CONFIG = {
    "workers": 1,
    "float_format": "%.6f",
    "default_sweep": "0.25:2.0:0.25",
}

LOGGING_CONFIG = {
    "level": "WARNING",
    "format": "%(asctime)s %(levelname)s %(name)s: %(message)s",
}


def _env_override(prefix: str, name: str, default, cast):
    """Resolves MPATH_<NAME> from the environment, falling back to the dict default."""
    raw = os.getenv(f"{prefix}_{name.upper()}")
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError:
        logging.getLogger(__name__).warning(
            "Ignoring %s_%s=%r (not a valid %s)", prefix, name.upper(), raw, cast.__name__
        )
        return default


SOLVER_CONFIG["seed"] = _env_override("MPATH", "seed", SOLVER_CONFIG["seed"], int)
SOLVER_CONFIG["restarts"] = _env_override("MPATH", "restarts", SOLVER_CONFIG["restarts"], int)
THROUGHPUT_CONFIG["enumeration_cap"] = _env_override(
    "MPATH", "enumeration_cap", THROUGHPUT_CONFIG["enumeration_cap"], int
)
CLI_CONFIG["workers"] = _env_override("MPATH", "workers", CLI_CONFIG["workers"], int)
LOGGING_CONFIG["level"] = _env_override("MPATH", "log_level", LOGGING_CONFIG["level"], str)


def setup_logging(level: str | None = None) -> None:
    """Sends log records to stderr so CSV written to stdout stays parseable."""
    logging.basicConfig(
        level=(level or LOGGING_CONFIG["level"]).upper(),
        format=LOGGING_CONFIG["format"],
    )
