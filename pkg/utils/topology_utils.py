# topology_utils.py
# Schema checks, validation and (de)serialization helpers for scenario documents.

import hashlib
import numbers

from utils.errors import (
    SchemaError,
    DuplicateIdError,
    UnknownNodeError,
    MissingDestinationError,
    DisjointPathError,
    InvalidFlowError,
)

TOP_LEVEL_FIELDS = {"channel", "interference_policy", "nodes", "flows"}
REQUIRED_TOP_LEVEL = {"channel", "nodes", "flows"}
CHANNEL_FIELDS = {"alpha", "v_default"}
NODE_FIELDS = {"id", "x_m", "y_m", "tx_power_w", "noise_w", "sinr_threshold", "role", "q"}
FLOW_FIELDS = {"id", "source", "path"}
ROLES = ("source", "relay", "destination")
POLICIES = ("all_nodes", "path_nodes")


# --- Schema helpers ---

def _check_fields(obj, allowed: set, required: set, where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {unknown}")
    missing = sorted(required - set(obj))
    if missing:
        raise SchemaError(f"{where}: missing field(s) {missing}")


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise SchemaError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _integer(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise SchemaError(f"{where}: expected an integer, got {value!r}")
    return int(value)


def parse_channel(raw, where: str = "channel") -> dict:
    _check_fields(raw, CHANNEL_FIELDS, {"alpha"}, where)
    parsed = {"alpha": _number(raw["alpha"], f"{where}.alpha")}
    if raw.get("v_default") is not None:
        parsed["v_default"] = _number(raw["v_default"], f"{where}.v_default")
    return parsed


def parse_node(raw, index: int) -> dict:
    where = f"nodes[{index}]"
    _check_fields(raw, NODE_FIELDS, NODE_FIELDS - {"q"}, where)
    node = {
        "id": _integer(raw["id"], f"{where}.id"),
        "x_m": _number(raw["x_m"], f"{where}.x_m"),
        "y_m": _number(raw["y_m"], f"{where}.y_m"),
        "tx_power_w": _number(raw["tx_power_w"], f"{where}.tx_power_w"),
        "noise_w": _number(raw["noise_w"], f"{where}.noise_w"),
        "sinr_threshold": _number(raw["sinr_threshold"], f"{where}.sinr_threshold"),
        "role": raw["role"],
        "q": raw.get("q"),
    }
    where = f"node {node['id']}"
    if node["role"] not in ROLES:
        raise SchemaError(f"{where}: role must be one of {list(ROLES)}, got {node['role']!r}")
    if node["q"] is None:
        # q has no default for sources and relays; only the sink may omit it.
        if node["role"] != "destination":
            raise SchemaError(f"{where}: field 'q' is required for role {node['role']!r}")
    else:
        node["q"] = _number(node["q"], f"{where}.q")
        if not 0.0 <= node["q"] <= 1.0:
            raise SchemaError(f"{where}: q must lie in [0, 1], got {node['q']}")
    return node


def parse_flow(raw, index: int) -> dict:
    where = f"flows[{index}]"
    _check_fields(raw, FLOW_FIELDS, FLOW_FIELDS, where)
    path = raw["path"]
    if not isinstance(path, list) or not path:
        raise SchemaError(f"{where}.path: expected a non-empty list of node ids")
    return {
        "id": _integer(raw["id"], f"{where}.id"),
        "source": _integer(raw["source"], f"{where}.source"),
        "path": [_integer(n, f"{where}.path[{k}]") for k, n in enumerate(path)],
    }


def parse_document(data) -> dict:
    """Checks the document structure and returns a normalized plain dict."""
    _check_fields(data, TOP_LEVEL_FIELDS, REQUIRED_TOP_LEVEL, "scenario")
    policy = data.get("interference_policy") or "path_nodes"
    if policy not in POLICIES:
        raise SchemaError(f"interference_policy must be one of {list(POLICIES)}, got {policy!r}")
    if not isinstance(data["nodes"], list):
        raise SchemaError("nodes: expected a list")
    if not isinstance(data["flows"], list):
        raise SchemaError("flows: expected a list")
    return {
        "channel": parse_channel(data["channel"]),
        "interference_policy": policy,
        "nodes": [parse_node(n, k) for k, n in enumerate(data["nodes"])],
        "flows": [parse_flow(f, k) for k, f in enumerate(data["flows"])],
    }


# --- Invariant checks ---

def validate_topology(nodes: list[dict], flows: list[dict]) -> None:
    """Raises a distinct ScenarioError subclass naming the first offending element."""
    seen = set()
    for node in nodes:
        if node["id"] in seen:
            raise DuplicateIdError(f"duplicate node id {node['id']}")
        seen.add(node["id"])

    destinations = [n["id"] for n in nodes if n["role"] == "destination"]
    if not destinations:
        raise MissingDestinationError("scenario has no node with role 'destination'")
    if len(destinations) > 1:
        raise MissingDestinationError(f"scenario must have exactly one destination, found nodes {destinations}")
    destination = destinations[0]
    roles = {n["id"]: n["role"] for n in nodes}

    flow_ids = set()
    owner = {}  # node id -> flow id, destination excluded
    for flow in flows:
        fid = flow["id"]
        if fid in flow_ids:
            raise DuplicateIdError(f"duplicate flow id {fid}")
        flow_ids.add(fid)

        path = flow["path"]
        for n in [flow["source"], *path]:
            if n not in roles:
                raise UnknownNodeError(f"flow {fid} references unknown node {n}")
        if len(path) < 2:
            raise InvalidFlowError(f"flow {fid}: path needs at least one link, got {path}")
        if path[0] != flow["source"]:
            raise InvalidFlowError(f"flow {fid}: path starts at {path[0]}, not at its source {flow['source']}")
        if path[-1] != destination:
            raise InvalidFlowError(f"flow {fid}: path ends at {path[-1]}, not at destination {destination}")
        if len(set(path)) != len(path):
            raise InvalidFlowError(f"flow {fid}: path {path} repeats a node")
        if roles[path[0]] != "source":
            raise InvalidFlowError(f"flow {fid}: originator {path[0]} has role {roles[path[0]]!r}, expected 'source'")
        for n in path[1:-1]:
            if roles[n] != "relay":
                raise InvalidFlowError(f"flow {fid}: intermediate node {n} has role {roles[n]!r}, expected 'relay'")

        for n in path[:-1]:
            if n in owner:
                raise DisjointPathError(
                    f"flows {owner[n]} and {fid} share node {n}; paths may share only the destination"
                )
            owner[n] = fid


# --- Serialization ---

def node_to_document(node) -> dict:
    return {
        "id": node.id,
        "x_m": node.x,
        "y_m": node.y,
        "tx_power_w": node.radio.tx_power,
        "noise_w": node.radio.noise,
        "sinr_threshold": node.radio.sinr_threshold,
        "role": node.role.value,
        "q": node.q,
    }


def scenario_to_document(scenario) -> dict:
    return {
        "channel": {"alpha": scenario.channel.alpha, "v_default": scenario.channel.v_default},
        "interference_policy": scenario.interference_policy.value,
        "nodes": [node_to_document(n) for n in scenario.nodes],
        "flows": [{"id": f.id, "source": f.source, "path": list(f.path)} for f in scenario.flows],
    }


def scenario_digest(document: bytes | str) -> str:
    """sha256 of the raw scenario document, used in report audit headers."""
    if isinstance(document, str):
        document = document.encode("utf-8")
    return hashlib.sha256(document).hexdigest()
