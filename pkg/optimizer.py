# Throughput-optimal source rate allocation.
#
# build_problem() materializes the smooth problem (objective with one auxiliary
# per multi-hop path, constraint families S1-S4). solve() works on the
# equivalent non-smooth form with auxiliaries eliminated (q' := min link
# throughput), using penalized simulated annealing over the source rates.

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from config import SOLVER_CONFIG, THROUGHPUT_CONFIG
from channel_module import success_probability
from topology import Scenario, Link, best_path, load_scenario, serialize_scenario
from throughput import RateVector, ThroughputModel
from utils.errors import (
    DimensionMismatchError,
    EmptyFlowSetError,
    TopologyShapeError,
    ContractViolation,
)
from utils.optimizer_utils import repair_rates, render_problem

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variable:
    index: int
    name: str
    kind: str      # "rate" or "aux"
    flow_id: int


@dataclass(frozen=True)
class ObjectiveTerm:
    kind: str                 # "link" for single-hop paths, "aux" for multi-hop
    flow_id: int
    link: Link | None = None
    variable: int | None = None


@dataclass(frozen=True)
class Constraint:
    label: str                # g1, g2, ...
    family: str               # S1..S4
    flow_id: int
    variable: int | None = None
    bound: str | None = None  # "lower" / "upper" for box constraints
    links: tuple[Link, ...] = ()


@dataclass(frozen=True)
class AllocationProblem:
    scenario: Scenario
    variables: tuple[Variable, ...]
    objective: tuple[ObjectiveTerm, ...]
    constraints: tuple[Constraint, ...]

    @cached_property
    def model(self) -> ThroughputModel:
        return ThroughputModel(self.scenario)

    @property
    def rate_count(self) -> int:
        return sum(1 for v in self.variables if v.kind == "rate")

    def dump(self) -> str:
        return render_problem(self)


@dataclass(frozen=True)
class Evaluation:
    objective: float
    violations: tuple[float, ...]   # one per constraint, max(0, lhs - rhs)
    point: tuple[float, ...]        # full point, auxiliaries filled in when eliminated
    link_values: dict = field(default_factory=dict)

    @property
    def max_violation(self) -> float:
        return max(self.violations, default=0.0)


@dataclass(frozen=True)
class SolverConfig:
    seed: int = SOLVER_CONFIG["seed"]
    restarts: int = SOLVER_CONFIG["restarts"]
    initial_temperature: float = SOLVER_CONFIG["initial_temperature"]
    cooling_factor: float = SOLVER_CONFIG["cooling_factor"]
    iterations_per_temperature: int = SOLVER_CONFIG["iterations_per_temperature"]
    min_temperature: float = SOLVER_CONFIG["min_temperature"]
    step_sigma: float = SOLVER_CONFIG["step_sigma"]
    penalty_coefficient: float = SOLVER_CONFIG["penalty_coefficient"]
    tolerance: float = SOLVER_CONFIG["tolerance"]
    stall_levels: int = SOLVER_CONFIG["stall_levels"]
    stall_temperature: float = SOLVER_CONFIG["stall_temperature"]
    stall_tolerance: float = SOLVER_CONFIG["stall_tolerance"]

    def __post_init__(self):
        if not 0.0 < self.cooling_factor < 1.0:
            raise ValueError(f"cooling_factor must lie in (0, 1), got {self.cooling_factor}")
        if self.restarts < 1 or self.iterations_per_temperature < 1:
            raise ValueError("restarts and iterations_per_temperature must be >= 1")
        if not self.step_sigma > 0:
            raise ValueError(f"step_sigma must be positive, got {self.step_sigma}")
        if not 0.0 < self.min_temperature <= self.initial_temperature:
            raise ValueError("need 0 < min_temperature <= initial_temperature")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.penalty_coefficient < 0:
            raise ValueError("penalty_coefficient must be non-negative")
        if self.stall_levels < 1 or self.stall_temperature < 0 or self.stall_tolerance < 0:
            raise ValueError("stall_levels must be >= 1, stall_temperature and stall_tolerance >= 0")

    @property
    def temperatures(self) -> list[float]:
        levels, t = [], self.initial_temperature
        while t >= self.min_temperature:
            levels.append(t)
            t *= self.cooling_factor
        return levels


@dataclass(frozen=True)
class AllocationResult:
    rates: RateVector
    aat: float
    feasible: bool
    max_violation: float
    per_flow: dict[int, float]
    restart: int = -1
    seed: int = 0


@dataclass(frozen=True)
class NonconvexityCheck:
    holds: bool
    lhs: float
    rhs: float


# --- Problem construction ---

def build_problem(scenario: Scenario) -> AllocationProblem:
    """Smooth form of the allocation problem with constraint families S1-S4."""
    if not scenario.flows:
        raise EmptyFlowSetError("build_problem needs at least one flow")

    variables = [Variable(k, f"q{f.source}", "rate", f.id) for k, f in enumerate(scenario.flows)]
    aux_of = {}
    for f in scenario.flows:
        if f.hops > 1:
            aux_of[f.id] = len(variables)
            variables.append(Variable(len(variables), f"q{f.source}'", "aux", f.id))

    objective = tuple(
        ObjectiveTerm("aux", f.id, variable=aux_of[f.id]) if f.hops > 1
        else ObjectiveTerm("link", f.id, link=f.links[0])
        for f in scenario.flows
    )

    # Family order S1, S2, S4, S3 keeps the g-labels of the two-path example.
    pending = []
    for k, f in enumerate(scenario.flows):
        pending.append(("S1", f.id, dict(variable=k, bound="lower")))
        pending.append(("S1", f.id, dict(variable=k, bound="upper")))
    for f in scenario.flows:
        if f.hops > 1:
            for upstream, downstream in zip(f.links[:-1], f.links[1:]):
                pending.append(("S2", f.id, dict(links=(upstream, downstream))))
    for f in scenario.flows:
        if f.hops > 1:
            for link in f.links:
                pending.append(("S4", f.id, dict(variable=aux_of[f.id], links=(link,))))
    for f in scenario.flows:
        if f.hops > 1:
            pending.append(("S3", f.id, dict(variable=aux_of[f.id], bound="lower")))
            pending.append(("S3", f.id, dict(variable=aux_of[f.id], bound="upper")))

    constraints = tuple(
        Constraint(label=f"g{n + 1}", family=family, flow_id=flow_id, **details)
        for n, (family, flow_id, details) in enumerate(pending)
    )
    problem = AllocationProblem(scenario, tuple(variables), objective, constraints)
    logger.debug("Built problem: %d variables, %d constraints", len(variables), len(constraints))
    return problem


# --- Evaluation ---

def evaluate(problem: AllocationProblem, point, eliminate: bool = False) -> Evaluation:
    """Objective and per-constraint violations at a point.

    With eliminate=True the auxiliaries are replaced by their path's minimum
    link throughput, and the point may carry only the source rates.
    """
    x = np.asarray(point, dtype=float).ravel()
    m, n = problem.rate_count, len(problem.variables)
    if len(x) != n and not (eliminate and len(x) == m):
        raise DimensionMismatchError(f"point has dimension {len(x)}, problem expects {n}")

    values = problem.model.link_values(x[:m][None, :])
    link_values = {}
    for f, v in zip(problem.scenario.flows, values):
        for link, value in zip(f.links, v[0]):
            link_values[link] = float(value)

    full = np.zeros(n)
    full[:len(x)] = x
    if eliminate:
        for var in problem.variables:
            if var.kind == "aux":
                flow = problem.scenario.flow(var.flow_id)
                full[var.index] = min(link_values[link] for link in flow.links)

    objective = 0.0
    for term in problem.objective:
        objective += link_values[term.link] if term.kind == "link" else full[term.variable]

    violations = []
    for c in problem.constraints:
        if c.family in ("S1", "S3"):
            value = full[c.variable]
            violations.append(max(0.0, -value) if c.bound == "lower" else max(0.0, value - 1.0))
        elif c.family == "S2":
            violations.append(max(0.0, link_values[c.links[0]] - link_values[c.links[1]]))
        else:
            violations.append(max(0.0, full[c.variable] - link_values[c.links[0]]))
    return Evaluation(float(objective), tuple(violations), tuple(full.tolist()), link_values)


def audit(problem: AllocationProblem, result: AllocationResult) -> float:
    """Solver-independent re-check: max S1-S4 violation at the result's rates."""
    rates = result.rates.as_list(problem.scenario)
    return evaluate(problem, rates, eliminate=True).max_violation


# --- Penalized objective (auxiliaries eliminated) ---

def _penalized(model: ThroughputModel, X: np.ndarray, penalty: float):
    """Returns (penalized value, objective, S2 violation) for a batch of rate vectors."""
    links = model.link_matrix(X)
    objective = model.path_values(links).sum(axis=1)
    violation = np.maximum(model.delay_gaps(links), 0.0).sum(axis=1)
    return -objective + penalty * violation, objective, violation


# --- Annealing chains ---

@dataclass
class _Chain:
    """One annealing chain: the rate coordinates it may move and its own stream."""
    mask: np.ndarray
    rng: np.random.Generator
    start: np.ndarray


def _restart_chains(dim: int, config: SolverConfig) -> list[_Chain]:
    chains = []
    for r in range(config.restarts):
        rng = np.random.default_rng([config.seed, r])
        start = np.ones(dim) if r == 0 else rng.uniform(0.0, 1.0, size=dim)
        chains.append(_Chain(np.ones(dim, dtype=bool), rng, start))
    return chains


def _subset_chain(mask: np.ndarray, config: SolverConfig) -> _Chain:
    """Chain over a subset of flows; the others stay at rate 0, so their paths are silent."""
    code = int(sum(1 << int(k) for k in np.flatnonzero(mask)))
    return _Chain(mask.copy(), np.random.default_rng([config.seed, 0, code]), mask.astype(float))


def _flow_subsets(dim: int) -> list[np.ndarray]:
    """Proper non-empty flow subsets searched besides the full set (singletons only above the cap)."""
    if dim < 2:
        return []
    if dim > SOLVER_CONFIG["subset_flow_cap"]:
        return [np.arange(dim) == k for k in range(dim)]
    return [np.array([(code >> k) & 1 == 1 for k in range(dim)]) for code in range(1, 2 ** dim - 1)]


def _anneal(model: ThroughputModel, chains: list[_Chain], config: SolverConfig):
    """Runs every chain as one batch; returns (refinement start per chain, levels run).

    Each chain draws only from its own stream and freezes on its own once it
    stalls, so a chain ends where it would have ended if run alone. The start
    for refinement is the best feasible point the chain saw, else its best
    penalized point.
    """
    masks = np.array([c.mask for c in chains])
    X = np.array([c.start for c in chains], dtype=float)
    penalty, tolerance = config.penalty_coefficient, config.tolerance
    f, obj, viol = _penalized(model, X, penalty)
    best_X, best_f = X.copy(), f.copy()
    feas_X, feas_obj = X.copy(), np.where(viol <= tolerance, obj, -np.inf)

    running = np.ones(len(chains), dtype=bool)
    stalled = np.zeros(len(chains), dtype=int)
    n = config.iterations_per_temperature
    levels = 0
    for temperature in config.temperatures:
        active = np.flatnonzero(running)
        if not len(active):
            break
        levels += 1
        steps = np.stack([chains[c].rng.normal(0.0, config.step_sigma, size=(n, masks.shape[1])) * masks[c]
                          for c in active], axis=1)
        log_coins = np.stack([np.log1p(-chains[c].rng.random(n)) for c in active], axis=1)

        x, fx, ox, vx = X[active], f[active], obj[active], viol[active]
        bx, bf, px, po = best_X[active], best_f[active], feas_X[active], feas_obj[active]
        level_best, level_feas = bf.copy(), po.copy()
        for it in range(n):
            y = np.clip(x + steps[it], 0.0, 1.0)
            fy, oy, vy = _penalized(model, y, penalty)
            accept = log_coins[it] * temperature <= fx - fy
            x = np.where(accept[:, None], y, x)
            fx, ox, vx = np.where(accept, fy, fx), np.where(accept, oy, ox), np.where(accept, vy, vx)
            better = fx < bf
            bx, bf = np.where(better[:, None], x, bx), np.where(better, fx, bf)
            feasible_better = (vx <= tolerance) & (ox > po)
            px, po = np.where(feasible_better[:, None], x, px), np.where(feasible_better, ox, po)

        X[active], f[active], obj[active], viol[active] = x, fx, ox, vx
        best_X[active], best_f[active], feas_X[active], feas_obj[active] = bx, bf, px, po
        tol = config.stall_tolerance
        progressed = (bf < level_best - tol) | (po > level_feas + tol)
        stalled[active] = np.where(progressed, 0, stalled[active] + 1)
        if temperature <= config.stall_temperature:
            running[active] = stalled[active] < config.stall_levels

    logger.debug("Annealing ran %d of %d temperature levels", levels, len(config.temperatures))
    return np.where(np.isfinite(feas_obj)[:, None], feas_X, best_X), levels


def _polish_directions(dim: int) -> np.ndarray:
    """Coordinate moves, plus pairwise diagonals for small problems."""
    eye = np.eye(dim)
    directions = [s * eye[d] for d in range(dim) for s in (1.0, -1.0)]
    if dim <= SOLVER_CONFIG["subset_flow_cap"]:
        for a in range(dim):
            for b in range(a + 1, dim):
                directions += [sa * eye[a] + sb * eye[b] for sa in (1.0, -1.0) for sb in (1.0, -1.0)]
    return np.array(directions)


def _polish(model: ThroughputModel, X: np.ndarray, masks: np.ndarray, config: SolverConfig) -> np.ndarray:
    """Pattern search on the penalized objective; a row stops once its step is below the floor."""
    X = X.copy()
    f, _, _ = _penalized(model, X, config.penalty_coefficient)
    h = np.full(X.shape[0], config.step_sigma)
    directions = _polish_directions(X.shape[1])
    for _ in range(SOLVER_CONFIG["polish_max_rounds"]):
        rows = np.flatnonzero(h >= SOLVER_CONFIG["polish_min_step"])
        if not len(rows):
            break
        x, fx, hx, mask = X[rows], f[rows], h[rows], masks[rows]
        moved = np.zeros(len(rows), dtype=bool)
        for direction in directions:
            y = np.clip(x + hx[:, None] * (direction * mask), 0.0, 1.0)
            fy, _, _ = _penalized(model, y, config.penalty_coefficient)
            better = fy < fx - 1e-15
            x, fx = np.where(better[:, None], y, x), np.where(better, fy, fx)
            moved |= better
        X[rows], f[rows] = x, fx
        h[rows] = np.where(moved, hx, hx / 2.0)
    return X


def _finalize(problem: AllocationProblem, x: np.ndarray, config: SolverConfig):
    model = problem.model
    x = repair_rates(x, model.flow_violations, config.tolerance, SOLVER_CONFIG["repair_rounds"])
    x = np.where(x < THROUGHPUT_CONFIG["unused_rate"], 0.0, x)  # unutilized paths
    evaluation = evaluate(problem, x, eliminate=True)
    return x, evaluation


def _search(problem: AllocationProblem, chains: list[_Chain], config: SolverConfig) -> AllocationResult:
    """Anneals, polishes and repairs every chain, then keeps the best (feasible first)."""
    scenario, model = problem.scenario, problem.model
    starts, _ = _anneal(model, chains, config)
    refined = _polish(model, starts, np.array([c.mask for c in chains]), config)

    candidates = []
    for r in range(len(chains)):
        x, evaluation = _finalize(problem, refined[r], config)
        feasible = evaluation.max_violation <= config.tolerance
        candidates.append(((feasible, evaluation.objective, -r), r, x, evaluation))
        logger.debug("Chain %d: objective=%.6f feasible=%s", r, evaluation.objective, feasible)

    (feasible, _, _), winner, x, evaluation = max(candidates, key=lambda c: c[0])
    if not feasible:
        logger.warning("No feasible allocation after %d restarts (max violation %.3g)",
                       len(chains), evaluation.max_violation)

    per_flow = dict(zip((f.id for f in scenario.flows), model.path_values(model.link_matrix(x[None, :]))[0].tolist()))
    return AllocationResult(
        rates=RateVector.from_values(scenario, np.clip(x, 0.0, 1.0)),
        aat=evaluation.objective,
        feasible=bool(feasible),
        max_violation=evaluation.max_violation,
        per_flow=per_flow,
        restart=winner,
        seed=config.seed,
    )


def solve(problem: AllocationProblem, config: SolverConfig | None = None) -> AllocationResult:
    """Best feasible allocation over all restarts, or an explicit infeasible result.

    Besides the restarts over every flow, one chain runs per proper flow
    subset with the remaining flows held at rate 0 (their paths unutilized).
    """
    config = config or SolverConfig()
    dim = problem.rate_count
    chains = _restart_chains(dim, config) + [_subset_chain(mask, config) for mask in _flow_subsets(dim)]
    return _search(problem, chains, config)


def solve_best_path(scenario: Scenario, config: SolverConfig | None = None) -> AllocationResult:
    """Baseline: all traffic on the single path with the highest end-to-end success.

    The other flows stay at rate 0, so their nodes are silent. The search is
    the single-flow chain that solve() also runs on the same problem.
    """
    config = config or SolverConfig()
    problem = build_problem(scenario)
    if len(scenario.flows) == 1:
        return solve(problem, config)
    flow = best_path(scenario)
    mask = np.array([f.id == flow.id for f in scenario.flows])
    return _search(problem, [_subset_chain(mask, config)], config)


# --- Distributed allocation ---

@dataclass(frozen=True)
class DistributedAllocation:
    rates: RateVector
    aat: float
    feasible: bool
    max_violation: float
    per_flow: dict[int, float]
    agreed: bool
    per_originator: dict[int, AllocationResult]


def solve_distributed(scenario: Scenario, config: SolverConfig | None = None,
                      independent_seeds: bool = False) -> DistributedAllocation:
    """Every flow originator solves its own instance and keeps only its own rate.

    Each originator rebuilds the scenario from the serialized document that
    topology updates carry. With a shared seed all instances agree; with
    independent_seeds each originator offsets the seed by its node id and
    the composed allocation is re-evaluated as a whole.
    """
    config = config or SolverConfig()
    document = serialize_scenario(scenario)
    per_originator = {}
    for f in scenario.flows:
        own = replace(config, seed=config.seed + f.source) if independent_seeds else config
        per_originator[f.source] = solve(build_problem(load_scenario(document)), own)

    rates = RateVector({f.id: per_originator[f.source].rates.rate(f.id) for f in scenario.flows})
    first = next(iter(per_originator.values())).rates
    agreed = all(result.rates == first for result in per_originator.values())
    if not agreed:
        logger.warning("Originators disagree on the allocation; composing their own rates")

    problem = build_problem(scenario)
    evaluation = evaluate(problem, rates.as_list(scenario), eliminate=True)
    values = problem.model.path_values(problem.model.link_matrix(np.array([rates.as_list(scenario)])))[0]
    return DistributedAllocation(
        rates=rates,
        aat=evaluation.objective,
        feasible=evaluation.max_violation <= config.tolerance,
        max_violation=evaluation.max_violation,
        per_flow={f.id: float(v) for f, v in zip(scenario.flows, values)},
        agreed=agreed,
        per_originator=per_originator,
    )


# --- Toy topology ---

def nonconvexity_condition(scenario: Scenario) -> NonconvexityCheck:
    """Non-convexity test for the two-path toy topology (paths 1-2-0 and 3-0).

    Holds when
      p_{2/2,3}^0 - p_{2/1,2,3}^0 <
          ((1-q2)/q2) (p_{1/1}^2 - p_{1/1,3}^2) + p_{2/2}^0 - p_{2/1,2}^0
    """
    flows = sorted(scenario.flows, key=lambda f: f.hops)
    if len(scenario.nodes) != 4 or len(flows) != 2 or [f.hops for f in flows] != [1, 2]:
        raise TopologyShapeError(
            "non-convexity check needs the toy shape: 4 nodes, one two-hop and one single-hop path, "
            f"got {len(scenario.nodes)} nodes and paths {[f.describe() for f in flows]}"
        )
    n3 = flows[0].source
    n1, n2, n0 = flows[1].path
    q2 = scenario.node(n2).q
    if not q2 > 0:
        raise ContractViolation(f"relay {n2} must have q > 0, got {q2}")

    def p(tx, rx, active):
        return success_probability(tx, rx, active, scenario.radios, scenario.channel, scenario.distance)

    lhs = p(n2, n0, {n2, n3}) - p(n2, n0, {n1, n2, n3})
    rhs = ((1.0 - q2) / q2) * (p(n1, n2, {n1}) - p(n1, n2, {n1, n3})) + p(n2, n0, {n2}) - p(n2, n0, {n1, n2})
    return NonconvexityCheck(holds=bool(lhs < rhs), lhs=lhs, rhs=rhs)
