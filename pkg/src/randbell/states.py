"""Quantum states on N qudits.

Basis ordering is row-major over |r1 r2 ... rN> with party 1 the most
significant digit, so ``amplitudes[int("011", 2)]`` is the |011> coefficient.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10


class InvalidStateError(ValueError):
    """A state failed validation; ``check`` names the failed property."""

    def __init__(self, check: str, message: str):
        self.check = check
        super().__init__(f"{check}: {message}")


def _infer_parties(size: int, local_dim: int) -> int:
    n = round(math.log(size, local_dim)) if size > 1 else 0
    if local_dim**n != size:
        raise InvalidStateError("shape", f"size {size} is not a power of {local_dim}")
    return n


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray
    num_parties: int
    local_dim: int

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).ravel()
        if amps.size != self.local_dim**self.num_parties:
            raise InvalidStateError(
                "shape", f"expected {self.local_dim ** self.num_parties} amplitudes, got {amps.size}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise InvalidStateError("norm", f"state norm is {norm!r}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def density_matrix(self) -> DensityMatrix:
        psi = self.amplitudes
        return DensityMatrix(np.outer(psi, psi.conj()), self.num_parties, self.local_dim)

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        """Weights and vectors (rows) of the spectral decomposition."""
        return np.ones(1), self.amplitudes[None, :]


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    num_parties: int
    local_dim: int
    _spectrum: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        rho = np.array(self.matrix, dtype=complex)
        size = self.local_dim**self.num_parties
        if rho.shape != (size, size):
            raise InvalidStateError("shape", f"expected {size}x{size} matrix, got {rho.shape}")
        herm_err = np.max(np.abs(rho - rho.conj().T)) if size else 0.0
        if herm_err > HERMITIAN_TOL:
            raise InvalidStateError("hermiticity", f"max |rho - rho^dag| = {herm_err:.3e}")
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError("trace", f"trace is {tr!r}")
        rho = 0.5 * (rho + rho.conj().T)
        evals = np.linalg.eigvalsh(rho)
        if evals[0] < -PSD_TOL:
            raise InvalidStateError("psd", f"smallest eigenvalue {evals[0]:.3e}")
        rho.setflags(write=False)
        object.__setattr__(self, "matrix", rho)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def density_matrix(self) -> DensityMatrix:
        return self

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        # cached: behavior evaluation calls this once per trial
        if not self._spectrum:
            evals, evecs = np.linalg.eigh(self.matrix)
            keep = evals > 1e-14
            self._spectrum.append((evals[keep], evecs[:, keep].T.copy()))
        return self._spectrum[0]


State = Union[PureState, DensityMatrix]


def _ket(digits: Sequence[int], local_dim: int) -> int:
    idx = 0
    for digit in digits:
        idx = idx * local_dim + digit
    return idx


def _from_terms(terms: dict[tuple[int, ...], complex], local_dim: int, normalize: bool = False) -> PureState:
    n = len(next(iter(terms)))
    amps = np.zeros(local_dim**n, dtype=complex)
    for digits, coeff in terms.items():
        amps[_ket(digits, local_dim)] += coeff
    if normalize:
        amps /= np.linalg.norm(amps)
    return PureState(amps, n, local_dim)


def _check_angle(angle: float, name: str) -> None:
    if not -1e-12 <= angle <= math.pi / 2 + 1e-12:
        raise ValueError(f"{name} must lie in [0, pi/2], got {angle!r}")


def make_ghz(num_parties: int, local_dim: int = 2, alpha: float = math.pi / 4) -> PureState:
    """Generalized GHZ state.

    ``sin(alpha)|0..0> + cos(alpha)|1..1>`` for qubits and
    ``sin(alpha)|0..0> + cos(alpha)/sqrt(2) (|1..1> + |2..2>)`` for qutrits.
    """
    if num_parties < 1:
        raise ValueError("need at least one party")
    if local_dim not in (2, 3):
        raise ValueError(f"GHZ family defined for d=2 and d=3, got d={local_dim}")
    _check_angle(alpha, "alpha")
    amps = np.zeros(local_dim**num_parties, dtype=complex)
    amps[0] = math.sin(alpha)
    if local_dim == 2:
        amps[-1] = math.cos(alpha)
    else:
        c = math.cos(alpha) / math.sqrt(2)
        amps[_ket([1] * num_parties, 3)] = c
        amps[_ket([2] * num_parties, 3)] = c
    amps /= np.linalg.norm(amps)
    return PureState(amps, num_parties, local_dim)


def make_dicke(num_parties: int, excitations: int) -> PureState:
    if not 1 <= excitations <= num_parties - 1:
        raise ValueError(f"excitations must be in [1, {num_parties - 1}], got {excitations}")
    amps = np.zeros(2**num_parties, dtype=complex)
    for ones in itertools.combinations(range(num_parties), excitations):
        digits = [0] * num_parties
        for pos in ones:
            digits[pos] = 1
        amps[_ket(digits, 2)] = 1.0
    amps /= math.sqrt(math.comb(num_parties, excitations))
    return PureState(amps, num_parties, 2)


def make_w(num_parties: int) -> PureState:
    return make_dicke(num_parties, 1)


def make_psi3(theta: float) -> PureState:
    """cos(theta)|111> + sin(theta)|W_3>."""
    _check_angle(theta, "theta")
    amps = math.sin(theta) * make_w(3).amplitudes
    amps = amps.copy()
    amps[_ket([1, 1, 1], 2)] += math.cos(theta)
    return PureState(amps, 3, 2)


def product_zero(num_parties: int, local_dim: int = 2) -> PureState:
    amps = np.zeros(local_dim**num_parties, dtype=complex)
    amps[0] = 1.0
    return PureState(amps, num_parties, local_dim)


def _permutations_sum(digits: Sequence[int], coeff: complex) -> dict[tuple[int, ...], complex]:
    return {perm: coeff for perm in set(itertools.permutations(digits))}


def _bell_states() -> list[np.ndarray]:
    s = 1 / math.sqrt(2)
    return [
        np.array([s, 0, 0, s], dtype=complex),
        np.array([s, 0, 0, -s], dtype=complex),
        np.array([0, s, s, 0], dtype=complex),
        np.array([0, s, -s, 0], dtype=complex),
    ]


def _named_singlet4() -> PureState:
    a, b = 1 / math.sqrt(3), -1 / math.sqrt(12)
    terms = {(0, 0, 1, 1): a, (1, 1, 0, 0): a}
    for digits in [(0, 1, 0, 1), (0, 1, 1, 0), (1, 0, 0, 1), (1, 0, 1, 0)]:
        terms[digits] = b
    return _from_terms(terms, 2)


def _named_cluster4() -> PureState:
    return _from_terms({(0, 0, 0, 0): 0.5, (0, 0, 1, 1): 0.5, (1, 1, 0, 0): 0.5, (1, 1, 1, 1): -0.5}, 2)


def _named_aharonov3() -> PureState:
    """Totally antisymmetric three-qutrit state: sign of the permutation of (0, 1, 2)."""
    c = 1 / math.sqrt(6)
    terms = {(0, 1, 2): c, (1, 2, 0): c, (2, 0, 1): c, (0, 2, 1): -c, (1, 0, 2): -c, (2, 1, 0): -c}
    return _from_terms(terms, 3)


def _named_aharonov3_printed() -> PureState:
    # the negative terms |011>, |101>, |110> make this a different, non-antisymmetric state
    c = 1 / math.sqrt(6)
    terms = {(0, 1, 2): c, (1, 2, 0): c, (2, 0, 1): c, (0, 1, 1): -c, (1, 0, 1): -c, (1, 1, 0): -c}
    return _from_terms(terms, 3)


def _named_q1() -> PureState:
    return _from_terms(_permutations_sum((0, 0, 1), 1 / math.sqrt(3)), 3)


def _named_q2() -> PureState:
    s = 1 / math.sqrt(15)
    terms = _permutations_sum((0, 1, 1), 2 * s)
    terms.update(_permutations_sum((0, 0, 2), s))
    return _from_terms(terms, 3)


def _named_q3() -> PureState:
    s = 1 / math.sqrt(10)
    terms = {(1, 1, 1): 2 * s}
    terms.update(_permutations_sum((0, 1, 2), s))
    return _from_terms(terms, 3)


def _named_smolin4() -> DensityMatrix:
    rho = np.zeros((16, 16), dtype=complex)
    for phi in _bell_states():
        proj = np.outer(phi, phi.conj())
        rho += 0.25 * np.kron(proj, proj)
    return DensityMatrix(rho, 4, 2)


def _named_werner2() -> DensityMatrix:
    v = 1 / math.sqrt(2)
    ghz = make_ghz(2).density_matrix().matrix
    return DensityMatrix(v * ghz + (1 - v) * np.eye(4) / 4, 2, 2)


NAMED_STATES = {
    "singlet4": _named_singlet4,
    "cluster4": _named_cluster4,
    "aharonov3": _named_aharonov3,
    "aharonov3_printed": _named_aharonov3_printed,
    "qutrit_dicke_Q1": _named_q1,
    "qutrit_dicke_Q2": _named_q2,
    "qutrit_dicke_Q3": _named_q3,
    "smolin4": _named_smolin4,
    "werner2": _named_werner2,
}


def make_named(name: str) -> State:
    try:
        return NAMED_STATES[name]()
    except KeyError:
        raise ValueError(f"unknown state {name!r}; choose from {sorted(NAMED_STATES)}") from None


def random_pure_state(num_parties: int, local_dim: int = 2, seed=None) -> PureState:
    """Haar-random pure state from a normalized complex Gaussian vector."""
    rng = np.random.default_rng(seed)
    size = local_dim**num_parties
    vec = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return PureState(vec / np.linalg.norm(vec), num_parties, local_dim)


def tensor(a: State, b: State) -> State:
    if a.local_dim != b.local_dim:
        raise ValueError(f"local dimension mismatch: {a.local_dim} vs {b.local_dim}")
    n = a.num_parties + b.num_parties
    if isinstance(a, PureState) and isinstance(b, PureState):
        amps = np.kron(a.amplitudes, b.amplitudes)
        return PureState(amps / np.linalg.norm(amps), n, a.local_dim)
    return DensityMatrix(np.kron(a.density_matrix().matrix, b.density_matrix().matrix), n, a.local_dim)


def mix(states: Sequence[State], weights: Sequence[float]) -> DensityMatrix:
    if len(states) == 0 or len(states) != len(weights):
        raise ValueError("need one weight per state and at least one state")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights must be nonnegative and sum to 1, got {list(weights)}")
    first = states[0]
    for s in states[1:]:
        if (s.num_parties, s.local_dim) != (first.num_parties, first.local_dim):
            raise ValueError("all mixed states must have the same dimensions")
    rho = sum(wi * s.density_matrix().matrix for wi, s in zip(w, states))
    return DensityMatrix(rho, first.num_parties, first.local_dim)


def _format_complex(z: complex) -> str:
    return f"{float(z.real)!r}{float(z.imag):+.17g}j"


def save_density_matrix(state: State, path) -> None:
    rho = state.density_matrix()
    lines = [f"{rho.num_parties} {rho.local_dim}"]
    for row in rho.matrix:
        lines.append(" ".join(_format_complex(z) for z in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_density_matrix(path) -> DensityMatrix:
    """Read the ``N d`` header plus d^N rows of ``re+imj`` entries."""
    text = Path(path).read_text(encoding="utf-8")
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows:
        raise InvalidStateError("parse", f"{path}: empty file")
    try:
        n, d = (int(tok) for tok in rows[0].split())
    except ValueError:
        raise InvalidStateError("parse", f"{path}: header must be 'N d', got {rows[0]!r}") from None
    size = d**n
    if len(rows) - 1 != size:
        raise InvalidStateError("parse", f"{path}: expected {size} matrix rows, found {len(rows) - 1}")
    try:
        data = [[complex(tok) for tok in ln.split()] for ln in rows[1:]]
    except ValueError as exc:
        raise InvalidStateError("parse", f"{path}: {exc}") from None
    if any(len(r) != size for r in data):
        raise InvalidStateError("parse", f"{path}: every row needs {size} entries")
    return DensityMatrix(np.array(data, dtype=complex), n, d)
