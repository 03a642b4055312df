import math
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

FORBIDDEN = math.inf


class AssignmentError(ValueError):
    pass


@dataclass
class AssignmentProblem:
    vehicle_ids: List[str]
    request_ids: List[str]
    costs: np.ndarray

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=float).reshape(len(self.vehicle_ids), len(self.request_ids))
        if not self.vehicle_ids and not self.request_ids:
            raise AssignmentError("assignment problem needs at least one vehicle or request")
        if len(set(self.vehicle_ids)) != len(self.vehicle_ids) or len(set(self.request_ids)) != len(self.request_ids):
            raise AssignmentError("duplicate vehicle or request ids")
        allowed = ~np.isposinf(self.costs)
        if np.isnan(self.costs).any() or (self.costs[allowed] < 0).any() or np.isneginf(self.costs).any():
            raise AssignmentError("costs must be finite and >= 0 or FORBIDDEN")


@dataclass(frozen=True)
class AssignmentSolution:
    pairs: Tuple[Tuple[str, str], ...]
    total_cost: float
    unassigned_requests: Tuple[str, ...]

    @property
    def cardinality(self):
        return len(self.pairs)


def _tolerance(value):
    return 1e-9 * max(1.0, abs(value))


class _Matcher:
    """Max-cardinality, min-cost matching over a padded matrix."""

    def __init__(self, costs, allowed):
        self.costs = costs
        self.allowed = allowed
        big = float(costs[allowed].sum()) + 1.0
        self.padded = np.where(allowed, costs, big)

    def optimum(self, rows, cols):
        if not rows or not cols:
            return 0, 0.0, {}
        sub = self.padded[np.ix_(rows, cols)]
        r, c = linear_sum_assignment(sub)
        match = {}
        total = 0.0
        for a, b in zip(r, c):
            row, col = rows[a], cols[b]
            if self.allowed[row, col]:
                match[row] = col
                total += self.costs[row, col]
        return len(match), total, match


def solve(problem):
    """Max-cardinality then min-cost matching; ties go to the lexicographically smallest pair list."""
    logger = logging.getLogger()
    vehicles = sorted(range(len(problem.vehicle_ids)), key=lambda i: problem.vehicle_ids[i])
    requests = sorted(range(len(problem.request_ids)), key=lambda j: problem.request_ids[j])
    costs = problem.costs[np.ix_(vehicles, requests)] if vehicles and requests else np.zeros((len(vehicles), len(requests)))
    allowed = np.isfinite(costs)
    v_ids = [problem.vehicle_ids[i] for i in vehicles]
    r_ids = [problem.request_ids[j] for j in requests]

    if not allowed.any():
        return AssignmentSolution((), 0.0, tuple(r_ids))

    matcher = _Matcher(costs, allowed)
    rows = [i for i in range(len(v_ids)) if allowed[i].any()]
    cols = [j for j in range(len(r_ids)) if allowed[:, j].any()]
    card, total, witness = matcher.optimum(rows, cols)

    # Fix rows in id order to their smallest request that keeps the optimum reachable.
    fixed = []
    for row in list(rows):
        if card == 0:
            break
        rows.remove(row)
        chosen = None
        for col in cols:
            if not allowed[row, col]:
                continue
            if witness.get(row) == col:
                chosen = col
                rest = {r: c for r, c in witness.items() if r != row}
                break
            sub_card, sub_total, sub_match = matcher.optimum(rows, [c for c in cols if c != col])
            if sub_card + 1 == card and abs(sub_total + costs[row, col] - total) <= _tolerance(total):
                chosen = col
                rest = sub_match
                break
        if chosen is None:
            continue
        fixed.append((row, chosen))
        cols.remove(chosen)
        card -= 1
        witness = rest
        total = math.fsum(costs[r, c] for r, c in witness.items())

    pairs = tuple((v_ids[r], r_ids[c]) for r, c in fixed)
    matched = {c for _, c in fixed}
    unassigned = tuple(r_ids[c] for c in range(len(r_ids)) if c not in matched)
    total_cost = math.fsum(costs[r, c] for r, c in fixed)
    logger.debug("[DEBUG] Assignment %dx%d: %d pairs, cost %.1f s", len(v_ids), len(r_ids), len(pairs), total_cost)
    return AssignmentSolution(pairs, total_cost, unassigned)
