# Analytic throughput engine: per-link subset enumeration, path minimum and
# aggregate objective used by the optimizer and the reports.

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from config import THROUGHPUT_CONFIG
from channel_module import success_probability_table
from topology import Scenario, Flow, Link, Role, interferer_set
from utils.errors import IntractableEnumerationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateVector:
    """Source injection rates (packets/slot) keyed by flow id."""
    q_src: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for flow_id, q in self.q_src.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"rate of flow {flow_id} must lie in [0, 1], got {q}")

    def rate(self, flow_id: int) -> float:
        return float(self.q_src.get(flow_id, 0.0))

    def with_rate(self, flow_id: int, q: float) -> "RateVector":
        return RateVector({**self.q_src, flow_id: q})

    def as_list(self, scenario: Scenario) -> list[float]:
        return [self.rate(f.id) for f in scenario.flows]

    @classmethod
    def zeros(cls, scenario: Scenario) -> "RateVector":
        return cls({f.id: 0.0 for f in scenario.flows})

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "RateVector":
        """Uses each source node's q placeholder as its flow rate."""
        return cls({f.id: float(scenario.node(f.source).q) for f in scenario.flows})

    @classmethod
    def from_values(cls, scenario: Scenario, values) -> "RateVector":
        return cls({f.id: float(v) for f, v in zip(scenario.flows, values)})


@dataclass(frozen=True)
class LinkThroughputResult:
    link: Link
    value: float            # packets/slot
    terms_evaluated: int    # 2**L


# --- Transmit probabilities ---

def flow_employed(flow_id: int, rates: RateVector) -> bool:
    """A flow below the unused-rate threshold leaves its whole path silent."""
    return rates.rate(flow_id) >= THROUGHPUT_CONFIG["unused_rate"]


def node_tx_prob(node_id: int, rates: RateVector, scenario: Scenario) -> float:
    """q_n: flow rate for an originator, fixed q for a relay, 0 for the sink.

    Originators and relays of a flow that is not employed transmit with
    probability 0. Relays on no path keep their q (all_nodes interference).
    """
    node = scenario.node(node_id)
    if node.role is Role.DESTINATION:
        return 0.0
    flow = scenario.flow_of_node(node_id)
    if node.role is Role.SOURCE:
        if flow is None or flow.source != node_id:
            return 0.0
        return rates.rate(flow.id) if flow_employed(flow.id, rates) else 0.0
    if flow is not None and not flow_employed(flow.id, rates):
        return 0.0
    return float(node.q)


def effective_tx_prob(i: int, j: int, rates: RateVector, scenario: Scenario) -> float:
    """q_{i,j} = q_i if j is the destination, else q_i * (1 - q_j) (j must be listening)."""
    q_i = node_tx_prob(i, rates, scenario)
    if j == scenario.destination.id:
        return q_i
    return q_i * (1.0 - node_tx_prob(j, rates, scenario))


# --- Subset enumeration ---

def _check_cap(link: Link, size: int) -> None:
    cap = THROUGHPUT_CONFIG["enumeration_cap"]
    if size > cap:
        raise IntractableEnumerationError(
            f"link {link}: {size} interferers need 2^{size} subsets, above the enumeration cap of {cap}"
        )


def subset_weights(q: np.ndarray) -> np.ndarray:
    """Activity probability of every interferer subset.

    q has shape (..., L); the result has shape (..., 2**L) and entry l is
    prod_n q_n^b(l,n) * (1 - q_n)^(1 - b(l,n)) with b(l,n) the n-th bit of l.
    """
    q = np.asarray(q, dtype=float)
    weights = np.ones(q.shape[:-1] + (1,))
    for n in range(q.shape[-1]):
        qn = q[..., n:n + 1]
        weights = np.concatenate([weights * (1.0 - qn), weights * qn], axis=-1)
    return weights


def enumerate_link(success: np.ndarray, q_interferers: np.ndarray) -> np.ndarray:
    """sum_l P_{i,j,l} * weight_l over all 2**L subsets, for a batch of interferer activities.

    The subsets are visited in blocks of 2**chunk_bits; block sums are kept
    and reduced together, so the result does not depend on how blocks are
    scheduled.
    """
    q = np.atleast_2d(np.asarray(q_interferers, dtype=float))
    size = q.shape[-1]
    low_bits = min(size, THROUGHPUT_CONFIG["chunk_bits"])
    low = subset_weights(q[:, :low_bits])                  # (R, 2**low_bits)
    high = subset_weights(q[:, low_bits:])                 # (R, 2**(L - low_bits))
    block = low.shape[-1]
    partials = np.empty((q.shape[0], high.shape[-1]))
    for c in range(high.shape[-1]):
        partials[:, c] = (low * success[c * block:(c + 1) * block]).sum(axis=-1) * high[:, c]
    return partials.sum(axis=-1)


def link_throughput(link: Link, rates: RateVector, scenario: Scenario) -> LinkThroughputResult:
    """Average throughput of link (i,j), enumerating every subset of active interferers."""
    i, j = link
    interferers = interferer_set(scenario, link)
    _check_cap(link, len(interferers))
    success = success_probability_table(i, j, list(interferers), scenario.radios,
                                        scenario.channel, scenario.distance)
    q_int = np.array([[node_tx_prob(n, rates, scenario) for n in interferers]])
    value = effective_tx_prob(i, j, rates, scenario) * float(enumerate_link(success, q_int)[0])
    return LinkThroughputResult(link=(i, j), value=value, terms_evaluated=2 ** len(interferers))


def path_links(flow: Flow, rates: RateVector, scenario: Scenario) -> list[LinkThroughputResult]:
    return [link_throughput(link, rates, scenario) for link in flow.links]


def path_throughput(flow: Flow, rates: RateVector, scenario: Scenario) -> float:
    """T_{r_k}: minimum link throughput along the flow's path."""
    return min(r.value for r in path_links(flow, rates, scenario))


def path_bottleneck(flow: Flow, rates: RateVector, scenario: Scenario) -> tuple[int, Link, float]:
    """(hop index, link, value) of the minimum link; ties resolve to the lowest hop index."""
    results = path_links(flow, rates, scenario)
    hop = min(range(len(results)), key=lambda h: (results[h].value, h))
    return hop, results[hop].link, results[hop].value


def aggregate_throughput(rates: RateVector, scenario: Scenario) -> float:
    """Average aggregate throughput: sum of path throughputs over all flows."""
    return sum(path_throughput(f, rates, scenario) for f in scenario.flows)


# --- Batch evaluation ---

class ThroughputModel:
    """Scenario compiled once for repeated evaluation over many rate vectors.

    Links are laid out flow by flow in path order. When every interferer set
    is small, all links are evaluated in one pass over a padded subset table
    (padding interferers are silent, so their subsets carry zero weight);
    otherwise each link goes through enumerate_link() as in link_throughput().
    Every row of a batch is computed independently of the others.
    """

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.flows = scenario.flows
        self.node_ids = [n.id for n in scenario.nodes]
        position = {nid: k for k, nid in enumerate(self.node_ids)}
        silent = len(self.node_ids)  # padding column, always 0

        base = np.zeros(silent + 1)
        for n in scenario.nodes:
            if n.role is Role.RELAY:
                base[position[n.id]] = n.q
        self._base = base
        self._source_pos = np.array([position[f.source] for f in self.flows], dtype=int)
        relays = [(position[n], k) for k, f in enumerate(self.flows) for n in f.path[1:-1]]
        self._relay_pos = np.array([p for p, _ in relays], dtype=int)
        self._relay_flow = np.array([k for _, k in relays], dtype=int)

        destination = scenario.destination.id
        tx, rx, interferers, tables, offsets = [], [], [], [], []
        upstream, downstream, s2_flow = [], [], []
        for k, f in enumerate(self.flows):
            offsets.append(len(tx))
            for hop, (i, j) in enumerate(f.links):
                members = interferer_set(scenario, (i, j))
                _check_cap((i, j), len(members))
                if hop:
                    upstream.append(len(tx) - 1)
                    downstream.append(len(tx))
                    s2_flow.append(k)
                tx.append(position[i])
                rx.append(silent if j == destination else position[j])
                interferers.append([position[n] for n in members])
                tables.append(success_probability_table(i, j, list(members), scenario.radios,
                                                        scenario.channel, scenario.distance))
        self._tx = np.array(tx, dtype=int)
        self._rx = np.array(rx, dtype=int)
        self._offsets = np.array(offsets, dtype=int)
        self._upstream = np.array(upstream, dtype=int)
        self._downstream = np.array(downstream, dtype=int)
        self._s2_flow = np.array(s2_flow, dtype=int)

        width = max((len(m) for m in interferers), default=0)
        self._fused = width <= THROUGHPUT_CONFIG["fused_bits"]
        if self._fused:
            self._interferers = np.array([m + [silent] * (width - len(m)) for m in interferers],
                                         dtype=int).reshape(len(tx), width)
            self._success = np.array([np.tile(t, 2 ** (width - len(m))) for t, m in zip(tables, interferers)])
            self._bits = (np.arange(2 ** width)[:, None] >> np.arange(width)) & 1 == 1
        else:
            self._tables = [(t, np.array(m, dtype=int)) for t, m in zip(tables, interferers)]
        logger.debug("Compiled throughput model: %d flows, %d links, widest interferer set %d (%s)",
                     len(self.flows), len(tx), width, "fused" if self._fused else "per link")

    def node_probs(self, rate_matrix: np.ndarray) -> np.ndarray:
        """Per row, the transmit probability of every node (plus the silent padding column)."""
        rate_matrix = np.atleast_2d(np.asarray(rate_matrix, dtype=float))
        employed = rate_matrix >= THROUGHPUT_CONFIG["unused_rate"]
        probs = np.repeat(self._base[None, :], rate_matrix.shape[0], axis=0)
        if len(self._source_pos):
            probs[:, self._source_pos] = np.where(employed, rate_matrix, 0.0)
        if len(self._relay_pos):
            probs[:, self._relay_pos] = self._base[self._relay_pos] * employed[:, self._relay_flow]
        return probs

    def link_matrix(self, rate_matrix: np.ndarray) -> np.ndarray:
        """(batch, links) throughput of every link, flows in order, hops in path order."""
        probs = self.node_probs(rate_matrix)
        attempt = probs[:, self._tx] * (1.0 - probs[:, self._rx])
        if self._fused:
            q = probs[:, self._interferers][:, :, None, :]
            weights = np.where(self._bits, q, 1.0 - q).prod(axis=-1)
            return attempt * (weights * self._success).sum(axis=-1)
        columns = [enumerate_link(table, probs[:, members]) for table, members in self._tables]
        return attempt * np.stack(columns, axis=1)

    def path_values(self, links: np.ndarray) -> np.ndarray:
        """(batch, flows) path throughput from a link matrix."""
        return np.minimum.reduceat(links, self._offsets, axis=1)

    def delay_gaps(self, links: np.ndarray) -> np.ndarray:
        """(batch, S2 pairs) incoming minus outgoing throughput at every relay."""
        return links[:, self._upstream] - links[:, self._downstream]

    def flow_violations(self, rates) -> np.ndarray:
        """Summed S2 violation per flow at one rate vector."""
        gaps = np.maximum(self.delay_gaps(self.link_matrix(np.asarray(rates, dtype=float)[None, :]))[0], 0.0)
        return np.bincount(self._s2_flow, weights=gaps, minlength=len(self.flows))

    def link_values(self, rate_matrix: np.ndarray) -> list[np.ndarray]:
        """Per flow, an array (batch, hops) of link throughputs."""
        return np.split(self.link_matrix(rate_matrix), self._offsets[1:], axis=1)

    def aggregate(self, rate_matrix: np.ndarray) -> np.ndarray:
        return self.path_values(self.link_matrix(rate_matrix)).sum(axis=1)
