import math

import json5
import pytest

from topology import (
    InterferencePolicy,
    Role,
    best_path,
    end_to_end_success,
    interferer_set,
    load_scenario,
    load_scenario_file,
    serialize_scenario,
)
from utils.errors import (
    DisjointPathError,
    DuplicateIdError,
    EmptyFlowSetError,
    InvalidFlowError,
    LinkNotOnPathError,
    MissingDestinationError,
    SchemaError,
    ScenarioError,
    UnknownNodeError,
)
from utils.topology_utils import scenario_digest
from conftest import document, node


def two_flow_nodes():
    return [
        node(0, 0, 0, "destination"),
        node(1, 100, 0, "source", q=1.0),
        node(2, 200, 0, "source", q=1.0),
        node(3, 0, 100, "source", q=1.0),
        node(4, 0, 200, "relay", q=0.5),
    ]


def load(doc):
    return load_scenario(json5.dumps(doc))


def test_toy_scenario_loads(toy):
    assert [n.id for n in toy.nodes] == [0, 1, 2, 3]
    assert toy.destination.id == 0
    assert toy.interference_policy is InterferencePolicy.ALL_NODES
    assert [f.describe() for f in toy.flows] == ["1-2-0", "3-0"]
    assert toy.node(2).role is Role.RELAY and toy.node(2).q == 0.5
    assert toy.distance(3, 0) == pytest.approx(400 * math.sqrt(5))
    assert toy.distance(3, 2) == pytest.approx(400 * math.sqrt(2))


def test_json5_comments_and_defaults():
    text = """
    // minimal scenario, policy and v_default omitted
    {
      channel: { alpha: 4 },
      nodes: [
        { id: 0, x_m: 0, y_m: 0, tx_power_w: 0.1, noise_w: 7e-11, sinr_threshold: 1, role: "destination" },
        { id: 1, x_m: 100, y_m: 0, tx_power_w: 0.1, noise_w: 7e-11, sinr_threshold: 1, role: "source", q: 1 },
      ],
      flows: [ { id: 1, source: 1, path: [1, 0] }, ],
    }
    """
    scenario = load_scenario(text)
    assert scenario.interference_policy is InterferencePolicy.PATH_NODES
    assert scenario.channel.v_default == 1.0
    assert scenario.destination.q is None


def test_interferer_sets_on_toy(toy):
    assert interferer_set(toy, (1, 2)) == (3,)
    assert interferer_set(toy, (2, 0)) == (1, 3)
    assert interferer_set(toy, (3, 0)) == (1, 2)


def test_interferer_set_path_nodes_on_grid(grid_three):
    assert interferer_set(grid_three, (3, 7)) == (0, 5, 10, 11, 12, 13, 14)
    assert interferer_set(grid_three, (11, 15)) == (0, 3, 5, 7, 10, 12, 13, 14)


def test_interferer_set_path_nodes_on_two_flow_grid(grid_two):
    assert interferer_set(grid_two, (3, 7)) == (0, 5, 10, 11)
    assert interferer_set(grid_two, (10, 15)) == (0, 3, 5, 7, 11)


def test_interferer_set_all_nodes_on_grid(grid_two):
    everyone = grid_two.with_policy("all_nodes")
    assert interferer_set(everyone, (3, 7)) == tuple(n for n in range(15) if n not in (3, 7))
    # path_nodes excludes the unused corner nodes
    assert 12 not in interferer_set(grid_two, (3, 7))


def test_interferer_set_rejects_links_off_every_path(toy):
    with pytest.raises(LinkNotOnPathError):
        interferer_set(toy, (1, 0))


def test_end_to_end_success_single_link(single_link):
    assert end_to_end_success(single_link, single_link.flows[0]) == pytest.approx(math.exp(-0.07), rel=1e-12)


def test_best_path_on_grid_is_the_edge_path(grid_two, grid_three):
    assert best_path(grid_two).describe() == "3-7-11-15"
    # f1 and f3 tie exactly; the lower flow id wins
    assert end_to_end_success(grid_three, grid_three.flow(1)) == end_to_end_success(grid_three, grid_three.flow(3))
    assert best_path(grid_three).id == 1


def test_best_path_toy_prefers_two_hop_path(toy):
    for gamma in (0.25, 1.0, 2.0):
        assert best_path(toy.with_sinr_threshold(gamma)).describe() == "1-2-0"


def test_best_path_needs_flows(toy):
    with pytest.raises(EmptyFlowSetError):
        best_path(toy.restricted_to([]))


def test_derived_scenarios(toy):
    swept = toy.with_sinr_threshold(1.75)
    assert swept.uniform_sinr_threshold() == 1.75
    assert toy.uniform_sinr_threshold() == 1.0
    only_direct = toy.restricted_to([toy.flow(2)])
    assert [f.id for f in only_direct.flows] == [2]
    assert only_direct.nodes == toy.nodes


def test_serialize_round_trip(toy, grid_three):
    for scenario in (toy, grid_three):
        assert load_scenario(serialize_scenario(scenario)) == scenario


def test_load_scenario_file_missing(tmp_path):
    with pytest.raises(OSError):
        load_scenario_file(tmp_path / "absent.json5")


def test_scenario_digest():
    assert scenario_digest(b"") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert scenario_digest("abc") == scenario_digest(b"abc")


# --- Validation ---

def test_valid_two_flow_document():
    scenario = load(document(two_flow_nodes(), [
        {"id": 1, "source": 1, "path": [1, 0]},
        {"id": 2, "source": 3, "path": [3, 4, 0]},
    ]))
    assert scenario.flow_of_source(3).id == 2
    assert scenario.flow_of_link((4, 0)).id == 2
    assert scenario.path_nodes == frozenset({0, 1, 3, 4})


def test_duplicate_node_id():
    nodes = two_flow_nodes() + [node(2, 50, 50, "relay", q=0.5)]
    with pytest.raises(DuplicateIdError, match="duplicate node id 2"):
        load(document(nodes, [{"id": 1, "source": 1, "path": [1, 0]}]))


def test_duplicate_flow_id():
    with pytest.raises(DuplicateIdError, match="flow id 1"):
        load(document(two_flow_nodes(), [
            {"id": 1, "source": 1, "path": [1, 0]},
            {"id": 1, "source": 2, "path": [2, 0]},
        ]))


def test_missing_destination():
    nodes = [node(1, 100, 0, "source", q=1.0), node(2, 0, 0, "relay", q=0.5)]
    with pytest.raises(MissingDestinationError):
        load(document(nodes, []))


def test_two_destinations():
    nodes = two_flow_nodes() + [node(9, 500, 500, "destination")]
    with pytest.raises(MissingDestinationError, match="exactly one"):
        load(document(nodes, []))


def test_paths_must_be_disjoint():
    with pytest.raises(DisjointPathError, match="share node 4"):
        load(document(two_flow_nodes(), [
            {"id": 1, "source": 1, "path": [1, 4, 0]},
            {"id": 2, "source": 3, "path": [3, 4, 0]},
        ]))


def test_unknown_node_in_path():
    with pytest.raises(UnknownNodeError, match="unknown node 42"):
        load(document(two_flow_nodes(), [{"id": 1, "source": 1, "path": [1, 42, 0]}]))


@pytest.mark.parametrize("flow", [
    {"id": 1, "source": 1, "path": [1]},            # no link
    {"id": 1, "source": 1, "path": [2, 0]},         # does not start at its source
    {"id": 1, "source": 1, "path": [1, 4]},         # does not end at the destination
    {"id": 1, "source": 1, "path": [1, 4, 1, 0]},   # repeats a node
    {"id": 1, "source": 4, "path": [4, 0]},         # originator is a relay
    {"id": 1, "source": 1, "path": [1, 2, 0]},      # intermediate node is a source
])
def test_invalid_flows(flow):
    with pytest.raises(InvalidFlowError):
        load(document(two_flow_nodes(), [flow]))


def test_schema_errors():
    nodes = two_flow_nodes()
    nodes[1]["colour"] = "red"
    with pytest.raises(SchemaError, match="colour"):
        load(document(nodes, []))

    nodes = two_flow_nodes()
    del nodes[1]["q"]
    with pytest.raises(SchemaError, match="'q' is required"):
        load(document(nodes, []))

    nodes = two_flow_nodes()
    nodes[4]["q"] = 1.5
    with pytest.raises(SchemaError, match="q must lie"):
        load(document(nodes, []))

    nodes = two_flow_nodes()
    nodes[0]["x_m"] = True
    with pytest.raises(SchemaError, match="expected a number"):
        load(document(nodes, []))

    with pytest.raises(SchemaError, match="interference_policy"):
        load(document(two_flow_nodes(), [], policy="nearby"))


def test_channel_range_is_a_scenario_error():
    with pytest.raises(ScenarioError):
        load(document(two_flow_nodes(), [], alpha=9.0))


def test_invalid_json5_is_a_schema_error():
    with pytest.raises(SchemaError):
        load_scenario("{ nodes: [ ")
