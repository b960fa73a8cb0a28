import logging
from dataclasses import replace

import json5
import numpy as np
import pytest

from channel_module import success_probability
from config import THROUGHPUT_CONFIG
from optimizer import (
    SolverConfig,
    audit,
    build_problem,
    evaluate,
    nonconvexity_condition,
    render_problem,
    solve,
    solve_best_path,
    solve_distributed,
)
from throughput import RateVector, ThroughputModel, link_throughput
from topology import load_scenario
from utils.errors import DimensionMismatchError, EmptyFlowSetError, TopologyShapeError
from conftest import document, node

TOY_SWEEP = [0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0]


def relay_limited_scenario():
    """Relay 2 forwards far more than relay 1 can drain, whatever the source does."""
    nodes = [
        node(0, 0, 0, "destination"),
        node(1, 100, 0, "relay", q=0.1),
        node(2, 200, 0, "relay", q=0.9),
        node(3, 300, 0, "source", q=1.0),
    ]
    return load_scenario(json5.dumps(document(nodes, [{"id": 1, "source": 3, "path": [3, 2, 1, 0]}])))


def grid_search(scenario, points=101):
    """Best S2-feasible aggregate throughput over a uniform grid of rate pairs."""
    model = ThroughputModel(scenario)
    axis = np.linspace(0.0, 1.0, points)
    q1, q3 = np.meshgrid(axis, axis, indexing="ij")
    matrix = np.column_stack([q1.ravel(), q3.ravel()])
    values = model.link_values(matrix)
    feasible = np.ones(len(matrix), dtype=bool)
    total = np.zeros(len(matrix))
    for v in values:
        total += v.min(axis=1)
        if v.shape[1] > 1:
            feasible &= np.all(v[:, :-1] <= v[:, 1:], axis=1)
    return total[feasible].max()


# --- Problem construction ---

def test_toy_problem_shape(toy):
    problem = build_problem(toy)
    assert [v.name for v in problem.variables] == ["q1", "q3", "q1'"]
    assert [c.label for c in problem.constraints] == [f"g{k}" for k in range(1, 10)]
    assert [c.family for c in problem.constraints] == ["S1"] * 4 + ["S2"] + ["S4"] * 2 + ["S3"] * 2
    assert problem.constraints[4].links == ((1, 2), (2, 0))
    assert [c.links for c in problem.constraints[5:7]] == [((1, 2),), ((2, 0),)]


def test_single_hop_problem(single_link):
    problem = build_problem(single_link)
    assert len(problem.variables) == 1
    assert {c.family for c in problem.constraints} == {"S1"}
    assert problem.objective[0].kind == "link" and problem.objective[0].link == (1, 0)


def test_grid_three_flow_problem(grid_three):
    problem = build_problem(grid_three)
    assert len(problem.variables) == 6
    for f in grid_three.flows:
        assert sum(1 for c in problem.constraints if c.family == "S2" and c.flow_id == f.id) == 2
        assert sum(1 for c in problem.constraints if c.family == "S4" and c.flow_id == f.id) == 3


def test_build_problem_needs_a_flow(toy):
    with pytest.raises(EmptyFlowSetError):
        build_problem(toy.restricted_to([]))


def test_problem_dump(toy):
    text = render_problem(build_problem(toy))
    assert text.splitlines()[0] == "# variables"
    assert "maximize q1' + T(3,0)" in text
    assert "[S2] T(1,2) <= T(2,0)" in text
    assert "[S4] q1' <= T(2,0)" in text
    assert text == build_problem(toy).dump()


# --- Evaluation ---

def test_zero_point(toy):
    evaluation = evaluate(build_problem(toy), [0.0, 0.0, 0.0])
    assert evaluation.objective == 0.0
    assert evaluation.max_violation == 0.0


def test_bounded_delay_violation_is_reported(toy):
    problem = build_problem(toy)
    rates = RateVector({1: 1.0, 2: 0.0})
    t12 = link_throughput((1, 2), rates, toy).value
    t20 = link_throughput((2, 0), rates, toy).value
    assert t12 > t20
    evaluation = evaluate(problem, [1.0, 0.0, 0.0])
    assert evaluation.violations[4] == pytest.approx(t12 - t20, rel=1e-12)


def test_eliminated_and_explicit_auxiliaries_agree(toy, grid_two):
    rng = np.random.default_rng(4)
    for scenario in (toy, grid_two):
        problem = build_problem(scenario)
        m = problem.rate_count
        for _ in range(100):
            rates = rng.uniform(0, 1, size=m)
            eliminated = evaluate(problem, rates, eliminate=True)
            explicit = evaluate(problem, eliminated.point)
            assert explicit.objective == pytest.approx(eliminated.objective, abs=1e-12)
            assert explicit.violations == pytest.approx(eliminated.violations, abs=1e-12)


def test_dimension_mismatch(toy):
    problem = build_problem(toy)
    with pytest.raises(DimensionMismatchError):
        evaluate(problem, [0.5, 0.5])
    with pytest.raises(DimensionMismatchError):
        evaluate(problem, [0.5], eliminate=True)


# --- Solver ---

@pytest.mark.parametrize("kwargs", [
    {"cooling_factor": 1.0},
    {"cooling_factor": 0.0},
    {"restarts": 0},
    {"iterations_per_temperature": 0},
    {"step_sigma": 0.0},
    {"min_temperature": 2.0},
    {"stall_levels": 0},
    {"stall_temperature": -1.0},
])
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_single_link_runs_at_full_rate(single_link, fast_solver):
    result = solve(build_problem(single_link), fast_solver)
    assert result.feasible
    assert result.rates.rate(1) == pytest.approx(1.0, abs=1e-9)
    assert result.aat == pytest.approx(np.exp(-0.07), rel=1e-9)


def test_toy_low_threshold_uses_both_paths_fully(toy, fast_solver):
    for gamma in (0.5, 1.0):
        result = solve(build_problem(toy.with_sinr_threshold(gamma)), fast_solver)
        assert result.feasible
        assert result.rates.as_list(toy) == pytest.approx([1.0, 1.0], abs=1e-3)


def test_solution_passes_independent_audit(toy, grid_two, fast_solver):
    for scenario in (toy.with_sinr_threshold(1.5), grid_two):
        problem = build_problem(scenario)
        result = solve(problem, fast_solver)
        assert result.feasible
        assert result.max_violation <= 1e-6
        assert audit(problem, result) <= 1e-6
        assert result.aat == pytest.approx(sum(result.per_flow.values()), rel=1e-12)


def test_solve_is_reproducible(toy, fast_solver):
    problem = build_problem(toy.with_sinr_threshold(1.5))
    first, second = solve(problem, fast_solver), solve(problem, fast_solver)
    assert first.rates == second.rates
    assert first.aat == second.aat
    assert first.restart == second.restart


def test_unused_paths_report_zero(toy, fast_solver):
    result = solve(build_problem(toy), fast_solver)
    for flow_id in (1, 2):
        rate = result.rates.rate(flow_id)
        assert rate == 0.0 or rate >= 1e-4


def test_relay_limited_path_is_left_unused(fast_solver):
    result = solve(build_problem(relay_limited_scenario()), fast_solver)
    assert result.feasible
    assert result.rates.rate(1) == 0.0
    assert result.aat == 0.0


def test_relay_limited_path_is_reported_infeasible(fast_solver, caplog, monkeypatch):
    # with every rate counted as employed the relays transmit even when the source is silent
    monkeypatch.setitem(THROUGHPUT_CONFIG, "unused_rate", 0.0)
    with caplog.at_level(logging.WARNING, logger="optimizer"):
        result = solve(build_problem(relay_limited_scenario()), fast_solver)
    assert not result.feasible
    assert result.max_violation > 1e-6
    assert "No feasible allocation" in caplog.text


def test_multipath_dominates_best_path(toy, grid_two, fast_solver):
    for scenario in (toy, grid_two, grid_two.with_sinr_threshold(1.5), toy.with_sinr_threshold(2.0)):
        multipath = solve(build_problem(scenario), fast_solver)
        single = solve_best_path(scenario, fast_solver)
        assert multipath.aat >= single.aat - 1e-6


def test_best_path_uses_only_the_edge_flow(grid_two, fast_solver):
    result = solve_best_path(grid_two, fast_solver)
    assert result.rates.rate(1) > 0
    assert result.rates.rate(2) == 0.0
    assert result.per_flow[2] == 0.0


def test_best_path_on_single_flow_matches_solve(single_link, fast_solver):
    assert solve_best_path(single_link, fast_solver).rates == solve(build_problem(single_link), fast_solver).rates


def test_annealing_stops_once_every_chain_stalls(toy, caplog):
    config = SolverConfig()
    with caplog.at_level(logging.DEBUG, logger="optimizer"):
        result = solve(build_problem(toy.with_sinr_threshold(0.5)), config)
    assert result.feasible
    [record] = [r for r in caplog.records if r.getMessage().startswith("Annealing ran")]
    levels, total = record.args
    assert total == len(config.temperatures)
    assert levels < total


def test_best_path_chain_is_shared_with_solve(grid_two, fast_solver):
    scenario = grid_two.with_sinr_threshold(1.5)
    multipath = solve(build_problem(scenario), fast_solver)
    single = solve_best_path(scenario, fast_solver)
    assert single.rates.rate(2) == 0.0
    assert multipath.aat >= single.aat - 1e-6


def test_distributed_originators_agree(toy, fast_solver):
    scenario = toy.with_sinr_threshold(1.5)
    central = solve(build_problem(scenario), fast_solver)
    distributed = solve_distributed(scenario, fast_solver)
    assert distributed.agreed
    assert set(distributed.per_originator) == {1, 3}
    assert distributed.rates == central.rates
    assert distributed.aat == pytest.approx(central.aat, rel=1e-12)
    assert distributed.feasible == central.feasible


def test_distributed_independent_seeds_stay_feasible(toy, fast_solver):
    distributed = solve_distributed(toy.with_sinr_threshold(1.5), fast_solver, independent_seeds=True)
    seeds = {origin: result.seed for origin, result in distributed.per_originator.items()}
    assert seeds == {1: fast_solver.seed + 1, 3: fast_solver.seed + 3}
    assert distributed.aat == pytest.approx(sum(distributed.per_flow.values()), rel=1e-12)


# --- Non-convexity check ---

def test_nonconvexity_terms(toy):
    def p(tx, rx, active):
        return success_probability(tx, rx, active, toy.radios, toy.channel, toy.distance)

    check = nonconvexity_condition(toy)
    lhs = p(2, 0, {2, 3}) - p(2, 0, {1, 2, 3})
    rhs = (0.5 / 0.5) * (p(1, 2, {1}) - p(1, 2, {1, 3})) + p(2, 0, {2}) - p(2, 0, {1, 2})
    assert check.lhs == pytest.approx(lhs, rel=1e-12)
    assert check.rhs == pytest.approx(rhs, rel=1e-12)
    assert check.holds == (lhs < rhs)


def test_nonconvexity_saturated_relay_limit(toy):
    nodes = tuple(replace(n, q=1.0) if n.id == 2 else n for n in toy.nodes)
    check = nonconvexity_condition(replace(toy, nodes=nodes))

    def p(active):
        return success_probability(2, 0, active, toy.radios, toy.channel, toy.distance)

    assert check.rhs == pytest.approx(p({2}) - p({1, 2}), rel=1e-12)


def test_nonconvexity_degenerate_case(toy):
    # a vanishing threshold makes every success probability 1
    check = nonconvexity_condition(toy.with_sinr_threshold(1e-18))
    assert check.lhs == 0.0 and check.rhs == 0.0
    assert not check.holds


def test_nonconvexity_needs_toy_shape(grid_two):
    with pytest.raises(TopologyShapeError):
        nonconvexity_condition(grid_two)


# --- Reproduction runs ---

@pytest.mark.slow
def test_toy_sweep_rate_policy(toy):
    results = [solve(build_problem(toy.with_sinr_threshold(g))) for g in TOY_SWEEP]
    for gamma, result in zip(TOY_SWEEP, results):
        assert result.feasible, gamma
        if gamma <= 1.0:
            assert result.rates.as_list(toy) == pytest.approx([1.0, 1.0], abs=1e-3)
    direct = [r.rates.rate(2) for g, r in zip(TOY_SWEEP, results) if g > 1.0]
    assert all(a > b for a, b in zip(direct, direct[1:]))
    aat = [r.aat for r in results]
    assert all(a >= b - 1e-6 for a, b in zip(aat, aat[1:]))


@pytest.mark.slow
def test_toy_matches_grid_search(toy):
    for gamma in TOY_SWEEP:
        scenario = toy.with_sinr_threshold(gamma)
        assert solve(build_problem(scenario)).aat >= grid_search(scenario) - 1e-3, gamma


@pytest.mark.slow
def test_grid_three_flow_rates(grid_three):
    result = solve(build_problem(grid_three.with_sinr_threshold(0.5)))
    assert result.feasible
    assert result.rates.as_list(grid_three) == pytest.approx([0.496, 0.222, 0.496], abs=0.02)


@pytest.mark.slow
def test_three_flows_gain_more_over_best_path(grid_two, grid_three):
    def mean_improvement(scenario):
        ratios = []
        for gamma in TOY_SWEEP:
            at = scenario.with_sinr_threshold(gamma)
            multipath, single = solve(build_problem(at)), solve_best_path(at)
            assert multipath.aat >= single.aat - 1e-6
            ratios.append(multipath.aat / single.aat)
        return np.mean(ratios) - 1.0

    assert mean_improvement(grid_three) > mean_improvement(grid_two)
