# Slotted Monte Carlo harness for validating the analytic throughput model.
#
# Bernoulli (slotted ALOHA) transmissions, per-slot Rayleigh fading, SINR
# decoding with multi-packet reception, half-duplex radios, unbounded FIFO
# relay queues and infinite retransmission. Nodes off every flow's path never
# hold packets and stay silent.
# With saturated relays every relay transmits with its q whether or not it
# holds a packet, which is the activity the analytic link model assumes.

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from config import SIMULATION_CONFIG
from channel_module import rx_power_factor, sample_fading
from topology import InterferencePolicy, Role, Scenario, Link, interferer_set
from throughput import RateVector, node_tx_prob, effective_tx_prob
from utils.errors import LinkNotOnPathError
from utils.simulator_utils import (
    DelayStats,
    TraceRecorder,
    binomial_stderr,
    queue_trend,
    summarize_delays,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    slots: int = SIMULATION_CONFIG["slots"]
    warmup_slots: int = SIMULATION_CONFIG["warmup_slots"]
    seed: int = SIMULATION_CONFIG["seed"]
    rates: RateVector = field(default_factory=RateVector)
    run_index: int = 0
    trace_stride: int = SIMULATION_CONFIG["trace_stride"]
    block_slots: int = SIMULATION_CONFIG["block_slots"]
    saturated_relays: bool = False  # relays send a filler packet when their queue is empty

    def __post_init__(self):
        if self.warmup_slots < 0:
            raise ValueError(f"warmup_slots must be non-negative, got {self.warmup_slots}")
        if not self.warmup_slots < self.slots:
            raise ValueError(f"warmup_slots ({self.warmup_slots}) must be below slots ({self.slots})")
        if self.trace_stride < 1 or self.block_slots < 1:
            raise ValueError("trace_stride and block_slots must be >= 1")
        if self.seed < 0 or self.run_index < 0:
            raise ValueError("seed and run_index must be non-negative")

    @property
    def measured_slots(self) -> int:
        return self.slots - self.warmup_slots


@dataclass(frozen=True)
class SimStats:
    per_flow_throughput: dict[int, float]
    aat: float
    per_link_success_rate: dict[Link, float]   # decodes / attempts
    per_link_throughput: dict[Link, float]     # decodes / measured slot
    delay: dict[int, DelayStats]
    max_queue: dict[int, int]
    queue_traces: dict[int, np.ndarray]
    trace_slots: np.ndarray
    injected: dict[int, int]                   # whole run, per flow
    delivered: dict[int, int]                  # whole run, per flow
    backlog: dict[int, int]                    # relay queues plus source head-of-line, per flow
    measured_slots: int
    seed: int
    run_index: int = 0


# --- Slot decoding ---

class _SlotNetwork:
    """Transmitters, receivers and gains of the scenario's path nodes.

    Fading is drawn per (transmitter, receiver) pair, so transmitters that
    share a next hop see the same fading realization of every interferer.
    """

    def __init__(self, scenario: Scenario, rates: RateVector):
        destination = scenario.destination.id
        members = []
        for f in scenario.flows:
            for hop, (i, j) in enumerate(f.links):
                members.append((i, j, f.id, hop == 0))
        members.sort()
        self.node_ids = [m[0] for m in members]
        self.next_hop = [m[1] for m in members]
        self.flow_ids = [m[2] for m in members]
        self.is_source = [m[3] for m in members]
        self.q = np.array([node_tx_prob(n, rates, scenario) for n in self.node_ids])

        receivers = sorted(set(self.next_hop))
        column = {r: c for c, r in enumerate(receivers)}
        position = {n: k for k, n in enumerate(self.node_ids)}
        self.receivers = receivers
        self.rx_column = np.array([column[j] for j in self.next_hop], dtype=int)
        # index of the receiver among transmitters, -1 for the destination
        self.rx_position = [position.get(j, -1) if j != destination else -1 for j in self.next_hop]
        self.hop_position = [position.get(j) for j in self.next_hop]

        gains = np.zeros((len(self.node_ids), len(receivers)))
        for k, node in enumerate(self.node_ids):
            for c, r in enumerate(receivers):
                if node != r:
                    gains[k, c] = rx_power_factor(scenario.node(node).radio.tx_power,
                                                  scenario.distance(node, r), scenario.channel.alpha)
        self.gains = gains
        self.gamma = np.array([scenario.node(j).radio.sinr_threshold for j in self.next_hop])
        self.noise = np.array([scenario.node(j).radio.noise for j in self.next_hop])
        self.v = scenario.channel.v_default
        self._listening_pairs = [(m, p) for m, p in enumerate(self.rx_position) if p >= 0]

    def __len__(self):
        return len(self.node_ids)

    def received_power(self, rng: np.random.Generator, slots: int) -> np.ndarray:
        return sample_fading(rng, self.v, size=(slots, len(self), len(self.receivers))) * self.gains

    def decode(self, power: np.ndarray, active: np.ndarray) -> np.ndarray:
        """power (B, M, R), active (B, M) -> decoded (B, M)."""
        total = np.einsum("bm,bmr->br", active.astype(float), power)
        m = np.arange(len(self))
        signal = power[:, m, self.rx_column]
        interference = total[:, self.rx_column] - signal
        decoded = active & (signal >= self.gamma * (self.noise + interference))
        for k, p in self._listening_pairs:
            decoded[:, k] &= ~active[:, p]  # half-duplex receiver
        return decoded


# --- Simulation ---

def run(scenario: Scenario, config: SimConfig) -> SimStats:
    """Simulates config.slots slots; statistics cover the slots after warmup."""
    rng = np.random.default_rng([config.seed, config.run_index])
    net = _SlotNetwork(scenario, config.rates)
    if scenario.interference_policy is InterferencePolicy.ALL_NODES:
        silent = sorted(n.id for n in scenario.nodes
                        if n.role is Role.RELAY and n.id not in scenario.path_nodes)
        if silent:
            logger.warning("Policy all_nodes: nodes %s are off every path and stay silent in simulation, "
                           "but the analytic model counts them as interferers", silent)
    M = len(net)
    warmup, slots = config.warmup_slots, config.slots

    relay_positions = [k for k in range(M) if not net.is_source[k]]
    relay_ids = [net.node_ids[k] for k in relay_positions]
    queues = [deque() for _ in range(M)]     # relays: injection slots, FIFO
    pending = [None] * M                     # sources: head-of-line injection slot
    injected = {f.id: 0 for f in scenario.flows}
    delivered = {f.id: 0 for f in scenario.flows}
    measured_delivered = {f.id: 0 for f in scenario.flows}
    delays = {f.id: [] for f in scenario.flows}
    attempts = np.zeros(M, dtype=np.int64)
    decodes = np.zeros(M, dtype=np.int64)
    max_queue = {rid: 0 for rid in relay_ids}
    recorder = TraceRecorder(relay_ids, warmup, slots, config.trace_stride)

    for start in range(0, slots, config.block_slots):
        size = min(config.block_slots, slots - start)
        coins = rng.random((size, M)) < net.q
        power = net.received_power(rng, size)
        # Outcome assuming every coined relay has a packet; recomputed when one is empty.
        optimistic = net.decode(power, coins).tolist()
        coin_rows = coins.tolist()

        for t in range(size):
            slot = start + t
            row = coin_rows[t]
            if config.saturated_relays:
                active = row
            else:
                active = [row[k] and (net.is_source[k] or len(queues[k]) > 0) for k in range(M)]
            if active == row:
                decoded = optimistic[t]
            else:
                decoded = net.decode(power[t:t + 1], np.array([active]))[0].tolist()

            measuring = slot >= warmup
            arrivals = []
            for k in range(M):
                if not active[k]:
                    continue
                if net.is_source[k] and pending[k] is None:
                    pending[k] = slot
                    injected[net.flow_ids[k]] += 1
                if measuring:
                    attempts[k] += 1
                if not decoded[k]:
                    continue  # retained for retransmission
                if measuring:
                    decodes[k] += 1
                if net.is_source[k]:
                    stamp, pending[k] = pending[k], None
                elif queues[k]:
                    stamp = queues[k].popleft()
                else:
                    continue  # filler packet
                target = net.hop_position[k]
                if target is None:
                    flow_id = net.flow_ids[k]
                    delivered[flow_id] += 1
                    if measuring:
                        measured_delivered[flow_id] += 1
                        delays[flow_id].append(slot - stamp + 1)
                else:
                    arrivals.append((target, stamp))
            for target, stamp in arrivals:
                queues[target].append(stamp)

            if measuring:
                for k, rid in zip(relay_positions, relay_ids):
                    if len(queues[k]) > max_queue[rid]:
                        max_queue[rid] = len(queues[k])
                if recorder.due(slot):
                    recorder.record(slot, [len(queues[k]) for k in relay_positions])

    measured = config.measured_slots
    per_flow = {fid: measured_delivered[fid] / measured for fid in measured_delivered}
    links = {(net.node_ids[k], net.next_hop[k]): k for k in range(M)}
    backlog = {f.id: 0 for f in scenario.flows}
    for k in range(M):
        backlog[net.flow_ids[k]] += len(queues[k]) + (pending[k] is not None)

    stats = SimStats(
        per_flow_throughput=per_flow,
        aat=sum(per_flow.values()),
        per_link_success_rate={l: (decodes[k] / attempts[k] if attempts[k] else 0.0) for l, k in links.items()},
        per_link_throughput={l: decodes[k] / measured for l, k in links.items()},
        delay={fid: summarize_delays(d) for fid, d in delays.items()},
        max_queue=max_queue,
        queue_traces=recorder.traces(),
        trace_slots=recorder.slots,
        injected=injected,
        delivered=delivered,
        backlog=backlog,
        measured_slots=measured,
        seed=config.seed,
        run_index=config.run_index,
    )
    logger.debug("Simulated %d slots (seed=%d run=%d): aat=%.6f", slots, config.seed, config.run_index, stats.aat)
    return stats


def delay_bounded(stats: SimStats, scenario: Scenario) -> bool:
    """True iff no relay queue on a flow path shows a positive linear trend."""
    if stats.measured_slots < SIMULATION_CONFIG["min_trend_slots"]:
        logger.warning("Queue trend over only %d slots; %d or more recommended",
                       stats.measured_slots, SIMULATION_CONFIG["min_trend_slots"])
    epsilon = SIMULATION_CONFIG["trend_epsilon"]
    relays = [n for f in scenario.flows for n in f.path[1:-1]]
    for relay in relays:
        trace = stats.queue_traces.get(relay)
        if trace is None:
            continue
        slope = queue_trend(stats.trace_slots, trace)
        if slope > epsilon:
            logger.info("Relay %d queue grows at %.3g packets/slot", relay, slope)
            return False
    return True


# --- Link oracle ---

def saturated_link_rate(scenario: Scenario, link: Link, rates: RateVector,
                        slots: int = 200_000, seed: int = SIMULATION_CONFIG["seed"]) -> tuple[float, float]:
    """Empirical throughput of one link with every node saturated.

    Each slot the link's transmitter and every interferer transmit with their
    q; the receiver must be silent (unless it is the destination). This is the
    setting the analytic link throughput describes.
    """
    i, j = link
    if scenario.flow_of_link((i, j)) is None:
        raise LinkNotOnPathError(f"link ({i},{j}) is not on any flow's path")
    interferers = list(interferer_set(scenario, (i, j)))
    transmitters = [i, *interferers]
    listener = [] if j == scenario.destination.id else [j]
    q = np.array([node_tx_prob(n, rates, scenario) for n in transmitters + listener])
    gains = np.array([rx_power_factor(scenario.node(k).radio.tx_power, scenario.distance(k, j),
                                      scenario.channel.alpha) for k in transmitters])
    radio = scenario.node(j).radio

    rng = np.random.default_rng([seed, 0])
    successes, block = 0, SIMULATION_CONFIG["block_slots"] * 16
    for start in range(0, slots, block):
        size = min(block, slots - start)
        coins = rng.random((size, len(q))) < q
        power = sample_fading(rng, scenario.channel.v_default, size=(size, len(transmitters))) * gains
        active = coins[:, :len(transmitters)]
        interference = (power[:, 1:] * active[:, 1:]).sum(axis=1)
        ok = active[:, 0] & (power[:, 0] >= radio.sinr_threshold * (radio.noise + interference))
        if listener:
            ok &= ~coins[:, -1]
        successes += int(ok.sum())
    rate = successes / slots
    logger.debug("Link (%d,%d): saturated rate %.6f (q_ij=%.3f)", i, j, rate,
                 effective_tx_prob(i, j, rates, scenario))
    return rate, binomial_stderr(rate, slots)
