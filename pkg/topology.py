# Scenario ingestion and validation: nodes, flows over disjoint paths,
# interferer sets and end-to-end path metrics.

import math
import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property
from pathlib import Path

import json5

from channel_module import ChannelParams, RadioSpec, success_probability
from utils.errors import (
    SchemaError,
    UnknownNodeError,
    LinkNotOnPathError,
    EmptyFlowSetError,
)
from utils.topology_utils import parse_document, validate_topology, scenario_to_document

logger = logging.getLogger(__name__)

Link = tuple[int, int]


class Role(str, Enum):
    SOURCE = "source"
    RELAY = "relay"
    DESTINATION = "destination"


class InterferencePolicy(str, Enum):
    ALL_NODES = "all_nodes"
    PATH_NODES = "path_nodes"


@dataclass(frozen=True)
class NodeSpec:
    id: int
    x: float
    y: float
    radio: RadioSpec
    role: Role
    q: float | None = None  # relay transmit probability; rate placeholder for sources

    def __post_init__(self):
        if self.q is not None and not 0.0 <= self.q <= 1.0:
            raise ValueError(f"node {self.id}: q must lie in [0, 1], got {self.q}")


@dataclass(frozen=True)
class Flow:
    id: int
    source: int
    path: tuple[int, ...]  # source ... destination

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(zip(self.path[:-1], self.path[1:]))

    @property
    def hops(self) -> int:
        return len(self.path) - 1

    def describe(self) -> str:
        return "-".join(str(n) for n in self.path)


@dataclass(frozen=True)
class Scenario:
    nodes: tuple[NodeSpec, ...]
    flows: tuple[Flow, ...]
    channel: ChannelParams
    interference_policy: InterferencePolicy = InterferencePolicy.PATH_NODES

    # --- Lookups ---

    @cached_property
    def _node_index(self) -> dict[int, NodeSpec]:
        return {n.id: n for n in self.nodes}

    def node(self, node_id: int) -> NodeSpec:
        try:
            return self._node_index[node_id]
        except KeyError:
            raise UnknownNodeError(f"unknown node {node_id}") from None

    @cached_property
    def destination(self) -> NodeSpec:
        return next(n for n in self.nodes if n.role is Role.DESTINATION)

    @cached_property
    def radios(self) -> dict[int, RadioSpec]:
        return {n.id: n.radio for n in self.nodes}

    def distance(self, i: int, j: int) -> float:
        a, b = self.node(i), self.node(j)
        return math.hypot(a.x - b.x, a.y - b.y)

    def flow(self, flow_id: int) -> Flow:
        for f in self.flows:
            if f.id == flow_id:
                return f
        raise KeyError(f"unknown flow {flow_id}")

    @cached_property
    def _source_flows(self) -> dict[int, Flow]:
        return {f.source: f for f in self.flows}

    def flow_of_source(self, node_id: int) -> Flow | None:
        return self._source_flows.get(node_id)

    @cached_property
    def _link_flows(self) -> dict[Link, Flow]:
        return {link: f for f in self.flows for link in f.links}

    def flow_of_link(self, link: Link) -> Flow | None:
        return self._link_flows.get(tuple(link))

    @cached_property
    def _carrier_flows(self) -> dict[int, Flow]:
        return {n: f for f in self.flows for n in f.path[:-1]}

    def flow_of_node(self, node_id: int) -> Flow | None:
        """Flow whose path carries node_id as originator or relay (never the destination)."""
        return self._carrier_flows.get(node_id)

    @cached_property
    def path_nodes(self) -> frozenset[int]:
        return frozenset(n for f in self.flows for n in f.path)

    @property
    def links(self) -> tuple[Link, ...]:
        return tuple(link for f in self.flows for link in f.links)

    # --- Derived scenarios ---

    def with_sinr_threshold(self, gamma: float) -> "Scenario":
        """Applies one SINR threshold to every node (sweep helper)."""
        nodes = tuple(replace(n, radio=replace(n.radio, sinr_threshold=gamma)) for n in self.nodes)
        return replace(self, nodes=nodes)

    def with_policy(self, policy: InterferencePolicy | str) -> "Scenario":
        return replace(self, interference_policy=InterferencePolicy(policy))

    def restricted_to(self, flows) -> "Scenario":
        """Same nodes and channel, employing only the given flows."""
        return replace(self, flows=tuple(flows))

    def uniform_sinr_threshold(self) -> float | None:
        values = {n.radio.sinr_threshold for n in self.nodes}
        return values.pop() if len(values) == 1 else None


# --- Loading / serialization ---

def _scenario_from_parsed(parsed: dict) -> Scenario:
    validate_topology(parsed["nodes"], parsed["flows"])
    try:
        channel = ChannelParams(**parsed["channel"])
        nodes = tuple(
            NodeSpec(
                id=n["id"],
                x=n["x_m"],
                y=n["y_m"],
                radio=RadioSpec(n["tx_power_w"], n["noise_w"], n["sinr_threshold"]),
                role=Role(n["role"]),
                q=n["q"],
            )
            for n in parsed["nodes"]
        )
    except ValueError as e:
        raise SchemaError(str(e)) from e
    flows = tuple(Flow(f["id"], f["source"], tuple(f["path"])) for f in parsed["flows"])
    return Scenario(nodes, flows, channel, InterferencePolicy(parsed["interference_policy"]))


def load_scenario(document: str) -> Scenario:
    """Parses and validates a JSON5 scenario document."""
    try:
        data = json5.loads(document)
    except ValueError as e:
        raise SchemaError(f"scenario is not valid JSON5: {e}") from e
    scenario = _scenario_from_parsed(parse_document(data))
    logger.debug("Loaded scenario: %d nodes, %d flows, policy=%s",
                 len(scenario.nodes), len(scenario.flows), scenario.interference_policy.value)
    return scenario


def load_scenario_file(path: str | Path) -> Scenario:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def serialize_scenario(scenario: Scenario) -> str:
    return json5.dumps(scenario_to_document(scenario), indent=2)


# --- Queries ---

def interferer_set(scenario: Scenario, link: Link) -> tuple[int, ...]:
    """I_{i,j}: nodes that may interfere on (i,j), ascending id (bit order for enumeration)."""
    i, j = link
    if scenario.flow_of_link((i, j)) is None:
        raise LinkNotOnPathError(f"link ({i},{j}) is not on any flow's path")
    if scenario.interference_policy is InterferencePolicy.ALL_NODES:
        candidates = {n.id for n in scenario.nodes}
    else:
        candidates = set(scenario.path_nodes)
    candidates -= {i, j, scenario.destination.id}
    return tuple(sorted(candidates))


def end_to_end_success(scenario: Scenario, path: Flow) -> float:
    """P_{r_k}: product of interference-free link success probabilities along the path."""
    p = 1.0
    for i, j in path.links:
        p *= success_probability(i, j, {i}, scenario.radios, scenario.channel, scenario.distance)
    return p


def best_path(scenario: Scenario) -> Flow:
    """Flow with the highest end-to-end success probability; ties go to the lowest flow id."""
    if not scenario.flows:
        raise EmptyFlowSetError("best_path needs at least one flow")
    best, best_p = None, -1.0
    for flow in sorted(scenario.flows, key=lambda f: f.id):
        p = end_to_end_success(scenario, flow)
        if p > best_p:
            best, best_p = flow, p
    logger.debug("Best path: flow %d (%s), P=%.6f", best.id, best.describe(), best_p)
    return best
