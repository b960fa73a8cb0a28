# Physical-layer math shared by the analytic model and the simulator.
#
# Received power factor g(i,j), Rayleigh-fading link success probability and
# fading sampling. Everything here is a pure function of its inputs except the
# samplers, which advance an explicitly passed numpy Generator.

import math
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from utils.errors import ContractViolation, HalfDuplexViolation

logger = logging.getLogger(__name__)

Geometry = Callable[[int, int], float]

# Above this many interferer factors the product is accumulated in log-space.
LOG_SPACE_FACTORS = 32


@dataclass(frozen=True)
class ChannelParams:
    alpha: float = 4.0      # path-loss exponent
    v_default: float = 1.0  # Rayleigh fading mean parameter, uniform over links

    def __post_init__(self):
        if not 2.0 <= self.alpha <= 6.0:
            raise ValueError(f"alpha must lie in [2, 6], got {self.alpha}")
        if not self.v_default > 0:
            raise ValueError(f"v_default must be positive, got {self.v_default}")


@dataclass(frozen=True)
class RadioSpec:
    tx_power: float        # watts
    noise: float           # watts
    sinr_threshold: float  # gamma, dimensionless

    def __post_init__(self):
        if not self.tx_power > 0:
            raise ValueError(f"tx_power must be positive, got {self.tx_power}")
        if not self.noise >= 0:
            raise ValueError(f"noise must be non-negative, got {self.noise}")
        if not self.sinr_threshold > 0:
            raise ValueError(f"sinr_threshold must be positive, got {self.sinr_threshold}")


def rx_power_factor(tx_power: float, distance: float, alpha: float) -> float:
    """g(i,j) = P_tx(i) * r(i,j)^-alpha."""
    if not distance > 0:
        raise ContractViolation(f"distance must be positive (a node cannot link to itself), got {distance}")
    return tx_power * distance ** (-alpha)


def sinr(signal: float, interference: float, noise: float) -> float:
    """SINR(i,j) = P_rx(i,j) / (eta_j + sum of interfering received powers)."""
    denominator = noise + interference
    if denominator == 0:
        return math.inf if signal > 0 else 0.0
    return signal / denominator


def _link_terms(tx: int, rx: int, interferers: Iterable[int],
                radios: Mapping[int, RadioSpec], channel: ChannelParams, geometry: Geometry):
    """Returns the noise exponent and the per-interferer ratios gamma*v*g(k,j)/(v*g(i,j))."""
    v = channel.v_default
    gamma = radios[rx].sinr_threshold
    g_signal = rx_power_factor(radios[tx].tx_power, geometry(tx, rx), channel.alpha)
    noise_exponent = gamma * radios[rx].noise / (v * g_signal)
    ratios = [
        gamma * v * rx_power_factor(radios[k].tx_power, geometry(k, rx), channel.alpha) / (v * g_signal)
        for k in interferers
    ]
    return noise_exponent, ratios


def success_probability(tx: int, rx: int, active_set: Iterable[int],
                        radios: Mapping[int, RadioSpec], channel: ChannelParams,
                        geometry: Geometry) -> float:
    """Probability that rx decodes tx while every node in active_set transmits.

    p = exp(-gamma_j*eta_j/(v*g(i,j))) * prod_k (1 + gamma_j*v*g(k,j)/(v*g(i,j)))^-1
    over k in active_set minus tx.
    """
    active = set(active_set)
    if tx not in active:
        raise ContractViolation(f"transmitter {tx} must belong to the active set {sorted(active)}")
    if rx in active:
        raise HalfDuplexViolation(f"receiver {rx} is transmitting in the same slot (half-duplex)")

    interferers = sorted(active - {tx})
    noise_exponent, ratios = _link_terms(tx, rx, interferers, radios, channel, geometry)

    if len(ratios) > LOG_SPACE_FACTORS:
        log_p = -noise_exponent - math.fsum(math.log1p(r) for r in ratios)
        return math.exp(log_p)

    p = math.exp(-noise_exponent)
    for r in ratios:
        p /= 1.0 + r
    return p


def success_probability_table(tx: int, rx: int, interferers: list[int],
                              radios: Mapping[int, RadioSpec], channel: ChannelParams,
                              geometry: Geometry) -> np.ndarray:
    """Success probability for every subset of interferers.

    Entry l uses the active set {tx} plus interferers[n] for each bit n set in l,
    so the table has 2**len(interferers) entries.
    """
    if rx in interferers or tx in interferers:
        raise HalfDuplexViolation(f"link ({tx},{rx}) cannot list its own endpoints as interferers")
    noise_exponent, ratios = _link_terms(tx, rx, interferers, radios, channel, geometry)
    table = np.array([math.exp(-noise_exponent)])
    for r in ratios:
        table = np.concatenate([table, table / (1.0 + r)])
    return table


def sample_fading(rng: np.random.Generator, v: float, size=None):
    """Rayleigh power fading A(i,j): exponential with mean v, so P(A > x) = exp(-x/v)."""
    return rng.exponential(scale=v, size=size)


def estimate_success_probability(tx: int, rx: int, active_set: Iterable[int],
                                 radios: Mapping[int, RadioSpec], channel: ChannelParams,
                                 geometry: Geometry, rng: np.random.Generator,
                                 samples: int = 100_000) -> tuple[float, float]:
    """Monte Carlo estimate of P(SINR(tx,rx) >= gamma_rx) with its binomial standard error."""
    active = sorted(set(active_set))
    if tx not in active:
        raise ContractViolation(f"transmitter {tx} must belong to the active set {active}")
    if rx in active:
        raise HalfDuplexViolation(f"receiver {rx} is transmitting in the same slot (half-duplex)")

    g = np.array([rx_power_factor(radios[k].tx_power, geometry(k, rx), channel.alpha) for k in active])
    fading = sample_fading(rng, channel.v_default, size=(samples, len(active)))
    received = fading * g
    signal_col = active.index(tx)
    signal = received[:, signal_col]
    interference = received.sum(axis=1) - signal
    decoded = signal >= radios[rx].sinr_threshold * (radios[rx].noise + interference)
    estimate = float(decoded.mean())
    stderr = math.sqrt(max(estimate * (1.0 - estimate), 1e-300) / samples)
    return estimate, stderr
