"""Local-realistic model search as an LP feasibility problem.

The variables are weights on deterministic local strategies. A strategy
assigns an outcome to every setting of every party; it is indexed row-major
over (party 1 setting 1, party 1 setting 2, ..., party N setting m_N) with
the first setting most significant. A behavior is local iff it is a convex
combination of the strategies' 0/1 behaviors.

``build_lp`` produces the full system: one row per (setting tuple, outcome
tuple) plus a normalization row. ``solve_feasibility`` never pivots on that
redundant system. It first checks that the right-hand side lies in its span
(otherwise the behavior signals and the residual is a Farkas certificate),
then runs phase 1 on one of two equivalent full-rank systems:

* marginal rows: probabilities of outcomes < d-1 for every subset of
  parties and choice of their settings (the unmeasured parties summed out);
* full-correlation rows, for qubit behaviors whose every proper-subset
  correlator vanishes. Such a behavior is local iff its N-body correlator
  vector lies in the hull of the +-1 product vectors: mixing a strategy
  uniformly over its even-parity outcome flips keeps the N-body correlators
  and cancels all others. Only one strategy per flip class is kept.
"""

from __future__ import annotations

import enum
import functools
import itertools
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from . import _simplex
from .measurement import Behavior
from .scenario import CapExceededError, Scenario

DEFAULT_TOL = 1e-8
DENSE_ENTRY_CAP = 10**7
SIGNALING_TOL = 1e-9
UNBIASED_TOL = 1e-12
MODEL_TOL = 1e-7
FARKAS_TOL = 1e-9
PIVOT_TOL = 1e-9
COST_TOL = 1e-11
STALL_LIMIT = 50

METHODS = ("auto", "marginal", "correlation")


class VerdictKind(enum.Enum):
    LOCAL = "LOCAL"
    NONLOCAL = "NONLOCAL"


class SolverFailure(RuntimeError):
    """The LP solver could not produce a checked verdict."""


def _strategy_digits(num_settings: int, local_dim: int) -> np.ndarray:
    """digits[k, s] = outcome that local strategy s gives for setting k."""
    s = np.arange(local_dim**num_settings)
    powers = local_dim ** np.arange(num_settings - 1, -1, -1)
    return (s[None, :] // powers[:, None]) % local_dim


def _party_incidence(num_settings: int, local_dim: int) -> np.ndarray:
    digits = _strategy_digits(num_settings, local_dim)
    outcomes = np.arange(local_dim)
    inc = digits[:, None, :] == outcomes[None, :, None]
    return inc.reshape(num_settings * local_dim, -1).astype(float)


def _party_reduction(num_settings: int, local_dim: int) -> np.ndarray:
    """Map a party's (setting, outcome) rows to [sum, (k, r) for r < d-1]."""
    rows = 1 + num_settings * (local_dim - 1)
    red = np.zeros((rows, num_settings * local_dim))
    red[0, :local_dim] = 1.0
    row = 1
    for k in range(num_settings):
        for r in range(local_dim - 1):
            red[row, k * local_dim + r] = 1.0
            row += 1
    return red


def _kron_all(mats) -> np.ndarray:
    out = np.ones((1, 1))
    for mat in mats:
        out = np.kron(out, mat)
    return out


def _interleave(table: np.ndarray, scenario: Scenario) -> np.ndarray:
    """(k1..kN, r1..rN) -> (k1, r1, k2, r2, ...)."""
    n = scenario.num_parties
    order = [ax for i in range(n) for ax in (i, n + i)]
    return table.transpose(order)


def _deinterleave(table: np.ndarray, scenario: Scenario) -> np.ndarray:
    n = scenario.num_parties
    order = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    order += list(range(2 * n, table.ndim))
    return table.transpose(order)


def _apply_party_maps(vec: np.ndarray, mats, in_dims) -> np.ndarray:
    t = vec.reshape(in_dims)
    for mat in mats:
        # contract the leading axis; the transformed axis rotates to the end
        t = np.tensordot(t, mat, axes=([0], [1]))
    return t.ravel()


def _freeze(*arrays):
    for arr in arrays:
        arr.setflags(write=False)


@dataclass(frozen=True, eq=False)
class _KronSystem:
    """A = kron(factors) (optionally with a trailing all-ones row), stored transposed."""

    matrix_t: np.ndarray
    factors: object
    rows: np.ndarray
    cols: np.ndarray
    ones_row: bool

    @classmethod
    def build(cls, factors, ones_row: bool) -> _KronSystem:
        factors = [np.ascontiguousarray(f, dtype=float) for f in factors]
        a = _kron_all(factors)
        if ones_row:
            a = np.vstack([a, np.ones((1, a.shape[1]))])
        matrix_t = np.ascontiguousarray(a.T)
        _freeze(matrix_t)
        return cls(
            matrix_t,
            numba.typed.List(factors),
            np.array([f.shape[0] for f in factors], dtype=np.int64),
            np.array([f.shape[1] for f in factors], dtype=np.int64),
            ones_row,
        )

    @property
    def shape(self) -> tuple[int, int]:
        n, m = self.matrix_t.shape
        return m, n

    def phase_one(self, b: np.ndarray, max_iter: int | None):
        m, n = self.shape
        if max_iter is None:
            max_iter = 50 * (m + n) + 1000
        signs = np.where(b < 0, -1.0, 1.0)
        return _simplex.phase_one(
            self.matrix_t, b * signs, signs, self.factors, self.rows, self.cols,
            self.ones_row, PIVOT_TOL, COST_TOL, max_iter, STALL_LIMIT,
        )


@dataclass(frozen=True, eq=False)
class _Structure:
    scenario: Scenario
    full: np.ndarray
    full_t: np.ndarray
    range_basis: np.ndarray
    party_maps: tuple[np.ndarray, ...]
    marginal: _KronSystem


@functools.lru_cache(maxsize=16)
def _structure(scenario: Scenario) -> _Structure:
    d = scenario.local_dim
    incidences = [_party_incidence(m, d) for m in scenario.settings]
    inter = _kron_all(incidences)
    interleaved_shape = tuple(x for m in scenario.settings for x in (m, d))
    marginal = _deinterleave(inter.reshape(interleaved_shape + (-1,)), scenario)
    marginal = marginal.reshape(scenario.num_marginal_rows, -1)
    full = np.vstack([marginal, np.ones((1, marginal.shape[1]))])
    party_maps = tuple(_party_reduction(m, d) for m in scenario.settings)
    system = _KronSystem.build([red @ inc for red, inc in zip(party_maps, incidences)], ones_row=False)
    q, _ = np.linalg.qr(full @ system.matrix_t)
    full_t = np.ascontiguousarray(full.T)
    _freeze(full, full_t, q)
    return _Structure(scenario, full, full_t, q, party_maps, system)


@dataclass(frozen=True, eq=False)
class _CorrelationStructure:
    system: _KronSystem
    # full_index[c, f]: full strategy index of canonical strategy c under even flip pattern f
    full_index: np.ndarray
    outcome_signs: np.ndarray


@functools.lru_cache(maxsize=16)
def _correlation_structure(scenario: Scenario) -> _CorrelationStructure:
    n = scenario.num_parties
    factors, local_sets = [], []
    for party, m in enumerate(scenario.settings):
        signs = 1.0 - 2.0 * _strategy_digits(m, 2)
        # parties after the first are fixed to +1 on their first setting
        keep = np.arange(2**m) if party == 0 else np.arange(2 ** (m - 1))
        factors.append(signs[:, keep])
        local_sets.append(keep)
    system = _KronSystem.build(factors, ones_row=True)

    strides = [2 ** sum(scenario.settings[i + 1 :]) for i in range(n)]
    flips = [f for f in itertools.product((0, 1), repeat=n) if sum(f) % 2 == 0]
    canon = list(itertools.product(*local_sets))
    full_index = np.empty((len(canon), len(flips)), dtype=np.int64)
    for c, local in enumerate(canon):
        for j, flip in enumerate(flips):
            idx = 0
            for i, lam in enumerate(local):
                if flip[i]:
                    lam = 2 ** scenario.settings[i] - 1 - lam
                idx += int(lam) * strides[i]
            full_index[c, j] = idx
    outcome_signs = _kron_all([np.array([[1.0, -1.0]])] * n).reshape((2,) * n)
    _freeze(full_index, outcome_signs)
    return _CorrelationStructure(system, full_index, outcome_signs)


@dataclass(frozen=True, eq=False)
class LocalProgram:
    """Equality system ``matrix @ p = rhs`` with ``p >= 0``.

    Rows: one per (setting tuple, outcome tuple) in behavior-table order,
    then the normalization row. Columns: deterministic strategies.
    """

    scenario: Scenario
    matrix: np.ndarray
    rhs: np.ndarray

    @property
    def num_vars(self) -> int:
        return self.matrix.shape[1]

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]


def check_lp_size(scenario: Scenario) -> None:
    rows = scenario.num_marginal_rows + 1
    if rows * scenario.num_strategies > DENSE_ENTRY_CAP:
        raise CapExceededError(rows * scenario.num_strategies, DENSE_ENTRY_CAP, "dense LP entries")


def build_lp(scenario: Scenario, behavior: Behavior) -> LocalProgram:
    check_lp_size(scenario)
    if behavior.scenario.table_shape != scenario.table_shape:
        raise ValueError("behavior does not belong to this scenario")
    st = _structure(scenario)
    rhs = np.append(behavior.vector, 1.0)
    _freeze(rhs)
    return LocalProgram(scenario, st.full, rhs)


@dataclass(frozen=True, eq=False)
class Verdict:
    """Outcome of one feasibility test.

    ``margin`` is the phase-1 optimum (total infeasibility of the reduced
    system), or the scaled distance from the span of the LP for signaling
    behaviors. ``model`` holds strategy weights when LOCAL; ``certificate``
    a vector y over the LP rows with y^T A <= 0 < y^T b when NONLOCAL.
    """

    kind: VerdictKind
    margin: float
    model: np.ndarray | None = None
    certificate: np.ndarray | None = None
    iterations: int = 0
    method: str = "marginal"

    @property
    def is_local(self) -> bool:
        return self.kind is VerdictKind.LOCAL


def _full_correlators(table: np.ndarray, scenario: Scenario) -> tuple[np.ndarray, float]:
    """N-body correlators per setting tuple, and the largest lower-order correlator."""
    n = scenario.num_parties
    h = np.array([[1.0, 1.0], [1.0, -1.0]])
    t = table
    for _ in range(n):
        t = np.tensordot(t, h, axes=([n], [1]))
    t = t.reshape(scenario.num_setting_tuples, 2**n)
    lower = np.max(np.abs(t[:, 1:-1])) if n > 1 else 0.0
    return t[:, -1].copy(), float(lower)


def _check_model(lp: LocalProgram, x: np.ndarray) -> None:
    support = np.flatnonzero(x)
    st = _structure(lp.scenario)
    columns = st.full_t[support] if lp.matrix is st.full else lp.matrix[:, support].T
    err = np.max(np.abs(x[support] @ columns - lp.rhs))
    if err > MODEL_TOL or np.any(x < 0):
        raise SolverFailure(f"local model misses the behavior by {err:.2e}")


def _check_certificate(y: np.ndarray, system: _KronSystem, b: np.ndarray) -> np.ndarray:
    y = y / np.max(np.abs(y))
    if np.max(system.matrix_t @ y) > FARKAS_TOL or y @ b <= 0:
        raise SolverFailure("infeasibility certificate failed verification")
    return y


def _solve_marginal(lp: LocalProgram, tol: float, max_iter: int | None) -> Verdict:
    scenario = lp.scenario
    st = _structure(scenario)
    interleaved = _interleave(lp.rhs[:-1].reshape(scenario.table_shape), scenario)
    in_dims = tuple(m * scenario.local_dim for m in scenario.settings)
    b_red = np.maximum(_apply_party_maps(np.ascontiguousarray(interleaved), st.party_maps, in_dims), 0.0)

    status, infeas, x, y, iters = st.marginal.phase_one(b_red, max_iter)
    if status != _simplex.OPTIMAL:
        raise SolverFailure(f"phase 1 stopped with status {status} after {iters} iterations")
    if infeas <= tol:
        _check_model(lp, x)
        return Verdict(VerdictKind.LOCAL, float(infeas), model=x, iterations=iters)

    y = _check_certificate(y, st.marginal, b_red)
    red_dims = tuple(mat.shape[0] for mat in st.party_maps)
    y_inter = _apply_party_maps(y, [mat.T for mat in st.party_maps], red_dims)
    interleaved_shape = tuple(v for m in scenario.settings for v in (m, scenario.local_dim))
    y_marg = _deinterleave(y_inter.reshape(interleaved_shape), scenario).ravel()
    return Verdict(VerdictKind.NONLOCAL, float(infeas), certificate=np.append(y_marg, 0.0), iterations=iters)


def _solve_correlation(lp: LocalProgram, corr: np.ndarray, tol: float, max_iter: int | None) -> Verdict:
    scenario = lp.scenario
    cs = _correlation_structure(scenario)
    b = np.append(corr, 1.0)
    status, infeas, x, y, iters = cs.system.phase_one(b, max_iter)
    if status != _simplex.OPTIMAL:
        raise SolverFailure(f"phase 1 stopped with status {status} after {iters} iterations")
    if infeas <= tol:
        full = np.zeros(scenario.num_strategies)
        share = x / cs.full_index.shape[1]
        for j in range(cs.full_index.shape[1]):
            np.add.at(full, cs.full_index[:, j], share)
        _check_model(lp, full)
        return Verdict(VerdictKind.LOCAL, float(infeas), model=full, iterations=iters, method="correlation")

    y = _check_certificate(y, cs.system, b)
    y_marg = np.multiply.outer(y[:-1].reshape(scenario.settings), cs.outcome_signs).ravel()
    cert = np.append(y_marg, y[-1])
    return Verdict(VerdictKind.NONLOCAL, float(infeas), certificate=cert, iterations=iters, method="correlation")


def solve_feasibility(
    lp: LocalProgram, tol: float = DEFAULT_TOL, max_iter: int | None = None, method: str = "auto"
) -> Verdict:
    """Decide whether ``lp`` has a nonnegative solution.

    Behaviors within ``tol`` (total phase-1 infeasibility) of the local
    polytope are classified LOCAL. ``method="auto"`` takes the correlation
    system whenever it applies. Raises :class:`SolverFailure` when the
    iteration limit is hit or a verdict fails its own check.
    """
    if tol <= 0:
        raise ValueError("tolerance must be positive")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    scenario = lp.scenario
    st = _structure(scenario)
    b = np.asarray(lp.rhs, dtype=float)

    residual = b - st.range_basis @ (st.range_basis.T @ b)
    scale = np.max(np.abs(residual))
    if scale > SIGNALING_TOL:
        cert = residual / scale
        return Verdict(VerdictKind.NONLOCAL, float(cert @ b), certificate=cert, method="span")

    if method != "marginal" and scenario.local_dim == 2:
        corr, lower = _full_correlators(b[:-1].reshape(scenario.table_shape), scenario)
        if lower <= UNBIASED_TOL:
            return _solve_correlation(lp, corr, tol, max_iter)
    if method == "correlation":
        raise ValueError("correlation system needs a qubit behavior with vanishing lower-order correlators")
    return _solve_marginal(lp, tol, max_iter)


def decide(behavior: Behavior, tol: float = DEFAULT_TOL, method: str = "auto") -> Verdict:
    return solve_feasibility(build_lp(behavior.scenario, behavior), tol, method=method)


@dataclass(frozen=True, eq=False)
class BellFunctional:
    """Linear functional ``sum(coefficients * P)`` on behavior tables."""

    scenario: Scenario
    coefficients: np.ndarray
    local_bound: float
    quantum_value: float

    def value(self, behavior: Behavior) -> float:
        return float(np.sum(self.coefficients * behavior.table))

    @property
    def violation(self) -> float:
        return self.quantum_value - self.local_bound


def extract_bell_functional(verdict: Verdict, lp: LocalProgram) -> BellFunctional:
    if verdict.kind is not VerdictKind.NONLOCAL or verdict.certificate is None:
        raise ValueError("a Bell functional can only be read off a NONLOCAL verdict")
    coeffs = np.asarray(verdict.certificate[:-1], dtype=float)
    # every behavior sums to one per setting tuple, so adding a constant to all
    # coefficients shifts local and quantum values alike; pick it so the local bound is 1
    raw_bound = float(np.max(coeffs @ lp.matrix[:-1]))
    coeffs = coeffs + (1.0 - raw_bound) / lp.scenario.num_setting_tuples
    local_bound = float(np.max(coeffs @ lp.matrix[:-1]))
    quantum_value = float(coeffs @ lp.rhs[:-1])
    return BellFunctional(lp.scenario, coeffs.reshape(lp.scenario.table_shape), local_bound, quantum_value)


CHSH_BOUND = 2.0


def _require_chsh_scenario(scenario: Scenario) -> None:
    if (scenario.num_parties, scenario.local_dim, scenario.settings) != (2, 2, (2, 2)):
        raise ValueError("CHSH needs two qubit parties with two settings each")


def correlators(behavior: Behavior) -> np.ndarray:
    """E[i, j] = sum_{r,s} (-1)^(r+s) P(r, s | i, j) for a two-qubit behavior."""
    _require_chsh_scenario(behavior.scenario)
    signs = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return np.einsum("ijrs,rs->ij", behavior.table, signs)


def chsh_values(behavior: Behavior) -> np.ndarray:
    """All eight CHSH variants: one minus sign in any position, either overall sign."""
    e = correlators(behavior).ravel()
    values = []
    for minus in range(4):
        s = np.ones(4)
        s[minus] = -1.0
        v = float(s @ e)
        values.extend([v, -v])
    return np.array(values)


def chsh_oracle(behavior: Behavior) -> VerdictKind:
    if np.max(chsh_values(behavior)) > CHSH_BOUND + 1e-9:
        return VerdictKind.NONLOCAL
    return VerdictKind.LOCAL


def dump_lp(lp: LocalProgram, path) -> None:
    """Write one line per equality row: integer coefficients, then the rhs."""
    lines = [
        f"# scenario d={lp.scenario.local_dim} settings={lp.scenario.label}",
        f"# rows={lp.num_rows} vars={lp.num_vars}",
    ]
    for row, rhs in zip(lp.matrix, lp.rhs):
        coeffs = " ".join(str(int(v)) for v in row)
        lines.append(f"{coeffs} {float(rhs)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def strategy_outcomes(scenario: Scenario, index: int) -> list[list[int]]:
    """Outcome lists per party for the strategy with the given column index."""
    d = scenario.local_dim
    total = sum(scenario.settings)
    digits = [(index // d ** (total - 1 - pos)) % d for pos in range(total)]
    out, pos = [], 0
    for m in scenario.settings:
        out.append(digits[pos : pos + m])
        pos += m
    return out
