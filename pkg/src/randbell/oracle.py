"""Independent local-polytope membership test for cross-checking small scenarios.

Vertices are enumerated directly from outcome assignments and the problem is
posed as an L1 distance minimization handed to HiGHS, so neither the matrix
assembly nor the pivoting shares code with :mod:`randbell.local_model`.
"""

from __future__ import annotations

import functools
import itertools

import numpy as np
from scipy.optimize import linprog

from .local_model import VerdictKind
from .measurement import Behavior
from .scenario import CapExceededError, Scenario

ORACLE_STRATEGY_CAP = 10**4
ORACLE_TOL = 1e-8


@functools.lru_cache(maxsize=8)
def deterministic_vertices(scenario: Scenario) -> np.ndarray:
    """Columns are the behavior vectors of all deterministic strategies."""
    if scenario.num_strategies > ORACLE_STRATEGY_CAP:
        raise CapExceededError(scenario.num_strategies, ORACLE_STRATEGY_CAP)
    d = scenario.local_dim
    setting_tuples = list(itertools.product(*(range(m) for m in scenario.settings)))
    columns = []
    per_party = [list(itertools.product(range(d), repeat=m)) for m in scenario.settings]
    for assignment in itertools.product(*per_party):
        table = np.zeros(scenario.table_shape)
        for ks in setting_tuples:
            outcomes = tuple(assignment[i][k] for i, k in enumerate(ks))
            table[ks + outcomes] = 1.0
        columns.append(table.ravel())
    out = np.array(columns).T
    out.setflags(write=False)
    return out


def l1_distance_to_polytope(behavior: Behavior, vertices: np.ndarray) -> float:
    rows, count = vertices.shape
    eye = np.eye(rows)
    a_eq = np.block([[vertices, eye, -eye], [np.ones((1, count)), np.zeros((1, 2 * rows))]])
    b_eq = np.append(behavior.vector, 1.0)
    cost = np.concatenate([np.zeros(count), np.ones(2 * rows)])
    res = linprog(cost, A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return float(res.fun)


def vertex_membership_oracle(behavior: Behavior, scenario: Scenario | None = None) -> VerdictKind:
    scenario = scenario or behavior.scenario
    dist = l1_distance_to_polytope(behavior, deterministic_vertices(scenario))
    return VerdictKind.LOCAL if dist <= ORACLE_TOL else VerdictKind.NONLOCAL
