# optimizer_utils.py
# Helpers for the optimizer: problem dump rendering and feasibility repair.

import logging
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


# --- Problem dump ---

def _link_label(link) -> str:
    return f"T({link[0]},{link[1]})"


def render_constraint(constraint, variables) -> str:
    family = constraint.family
    if family in ("S1", "S3"):
        name = variables[constraint.variable].name
        body = f"0 <= {name}" if constraint.bound == "lower" else f"{name} <= 1"
    elif family == "S2":
        body = f"{_link_label(constraint.links[0])} <= {_link_label(constraint.links[1])}"
    else:  # S4
        body = f"{variables[constraint.variable].name} <= {_link_label(constraint.links[0])}"
    return f"{constraint.label:<4} [{family}] {body}    (flow {constraint.flow_id})"


def render_problem(problem) -> str:
    """Stable text rendering of variables, objective terms and constraints."""
    scenario = problem.scenario
    lines = ["# variables"]
    for v in problem.variables:
        flow = scenario.flow(v.flow_id)
        what = "rate" if v.kind == "rate" else "auxiliary"
        lines.append(f"x{v.index:<3} {v.name:<6} {what} of flow {flow.id} (path {flow.describe()})")

    lines.append("# objective")
    terms = []
    for term in problem.objective:
        if term.kind == "link":
            terms.append(_link_label(term.link))
        else:
            terms.append(problem.variables[term.variable].name)
    lines.append("maximize " + (" + ".join(terms) if terms else "0"))

    lines.append("# constraints")
    for c in problem.constraints:
        lines.append(render_constraint(c, problem.variables))
    return "\n".join(lines) + "\n"


# --- Feasibility repair ---

def repair_rates(x: np.ndarray, flow_violations: Callable[[np.ndarray], np.ndarray],
                 tolerance: float, rounds: int, bisection_steps: int = 50) -> np.ndarray:
    """Lowers source rates of flows whose bounded-delay constraints are violated.

    flow_violations(x) returns, per flow, the summed S2 violation at rates x.
    Each violating flow's rate is bisected down to the largest value that
    brings its own violation under tolerance/2, with the other rates fixed;
    this is repeated until every flow is within tolerance or no flow can be
    repaired further.
    """
    x = np.array(x, dtype=float)
    for round_index in range(rounds):
        violations = flow_violations(x)
        offending = np.flatnonzero(violations > tolerance)
        if not len(offending):
            break
        moved = False
        for k in offending:
            trial = x.copy()
            trial[k] = 0.0
            if flow_violations(trial)[k] > tolerance / 2:
                # Relay-limited: even a silent source cannot satisfy S2.
                logger.debug("Flow position %d cannot be repaired by rate reduction", k)
                continue
            lo, hi = 0.0, x[k]
            for _ in range(bisection_steps):
                mid = 0.5 * (lo + hi)
                trial[k] = mid
                if flow_violations(trial)[k] <= tolerance / 2:
                    lo = mid
                else:
                    hi = mid
            if lo < x[k]:
                x[k] = lo
                moved = True
        if not moved:
            break
        logger.debug("Repair round %d: rates -> %s", round_index, np.round(x, 6))
    return x
