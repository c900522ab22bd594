"""Random projective measurements and the behaviors they produce."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .scenario import Scenario
from .states import State

TWO_PI = 2 * math.pi
ORTHO_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MeasurementBasis:
    """Columns of ``matrix`` are the measurement vectors; column r is outcome r."""

    matrix: np.ndarray
    angles: tuple[float, ...] = ()

    def __post_init__(self):
        u = np.array(self.matrix, dtype=complex)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError(f"basis matrix must be square, got shape {u.shape}")
        err = np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0])))
        if err > ORTHO_TOL:
            raise ValueError(f"basis columns are not orthonormal (error {err:.2e})")
        u.setflags(write=False)
        object.__setattr__(self, "matrix", u)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def column(self, r: int) -> np.ndarray:
        return self.matrix[:, r]

    def projectors(self) -> np.ndarray:
        u = self.matrix
        return np.einsum("ir,jr->rij", u, u.conj())


def _su2_block(phi: float, psi: float, chi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array(
        [
            [c * np.exp(1j * psi), s * np.exp(1j * chi)],
            [-s * np.exp(-1j * chi), c * np.exp(-1j * psi)],
        ]
    )


def qubit_unitary(phi: float, psi: float, chi: float) -> MeasurementBasis:
    phi = min(max(phi, 0.0), math.pi / 2)
    psi, chi = psi % TWO_PI, chi % TWO_PI
    return MeasurementBasis(_su2_block(phi, psi, chi), (phi, psi, chi))


def qutrit_unitary(angles: Sequence[float]) -> MeasurementBasis:
    """Product of the three embedded 2x2 rotations.

    ``angles`` is ``(phi1, psi1, chi1, phi2, psi2, chi2, phi3, psi3)``; the last
    block carries no chi phase.
    """
    if len(angles) != 8:
        raise ValueError(f"qutrit unitary takes 8 angles, got {len(angles)}")
    phi1, psi1, chi1, phi2, psi2, chi2, phi3, psi3 = (float(a) for a in angles)
    phi1, phi2, phi3 = (min(max(p, 0.0), math.pi / 2) for p in (phi1, phi2, phi3))
    psi1, chi1, psi2, chi2, psi3 = (a % TWO_PI for a in (psi1, chi1, psi2, chi2, psi3))

    first = np.eye(3, dtype=complex)
    first[np.ix_([0, 1], [0, 1])] = _su2_block(phi1, psi1, chi1)
    second = np.eye(3, dtype=complex)
    second[np.ix_([0, 2], [0, 2])] = _su2_block(phi2, psi2, chi2)
    third = np.eye(3, dtype=complex)
    third[np.ix_([1, 2], [1, 2])] = _su2_block(phi3, psi3, 0.0)
    return MeasurementBasis(first @ second @ third, (phi1, psi1, chi1, phi2, psi2, chi2, phi3, psi3))


def bloch_basis(vector: Sequence[float]) -> MeasurementBasis:
    """Eigenbasis of n.sigma: outcome 0 is the +1 eigenvector, outcome 1 the -1."""
    x, y, z = (float(v) for v in vector)
    norm = math.sqrt(x * x + y * y + z * z)
    theta = math.acos(max(-1.0, min(1.0, z / norm)))
    azimuth = math.atan2(y, x)
    return qubit_unitary(theta / 2, 0.0, math.pi - azimuth)


def _haar_qr(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


QUARTIC_BLOCKS = (1, 2, 3)


def sample_basis(local_dim: int, rng: np.random.Generator, quartic_block: int = 3) -> MeasurementBasis:
    """Random basis from uniform angle draws.

    For qutrits every rotation angle is arcsin(xi^(1/2)) except the one of
    block ``quartic_block`` (1, 2 or 3 in product order), which is
    arcsin(xi^(1/4)). Dimensions above 3 use QR of a complex Gaussian matrix.
    """
    if local_dim == 2:
        xi, psi, chi = rng.random(3)
        return qubit_unitary(math.asin(math.sqrt(xi)), TWO_PI * psi, TWO_PI * chi)
    if local_dim == 3:
        if quartic_block not in QUARTIC_BLOCKS:
            raise ValueError(f"quartic_block must be 1, 2 or 3, got {quartic_block!r}")
        u = rng.random(8)
        powers = [0.5, 0.5, 0.5]
        powers[quartic_block - 1] = 0.25
        phi1 = math.asin(u[0] ** powers[0])
        phi2 = math.asin(u[3] ** powers[1])
        phi3 = math.asin(u[6] ** powers[2])
        return qutrit_unitary(
            (phi1, TWO_PI * u[1], TWO_PI * u[2], phi2, TWO_PI * u[4], TWO_PI * u[5], phi3, TWO_PI * u[7])
        )
    return MeasurementBasis(_haar_qr(local_dim, rng))


SAMPLING_MODES = ("independent", "identical")


def sample_settings(
    scenario: Scenario, rng: np.random.Generator, mode: str = "independent", quartic_block: int = 3
) -> list[list[MeasurementBasis]]:
    """Draw ``settings[i][k]``, the basis of party i's k-th setting.

    In ``identical`` mode one list is drawn and shared by every party.
    """
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    d = scenario.local_dim
    if mode == "identical":
        if len(set(scenario.settings)) != 1:
            raise ValueError("identical sampling needs the same number of settings for every party")
        shared = [sample_basis(d, rng, quartic_block) for _ in range(scenario.settings[0])]
        return [list(shared) for _ in range(scenario.num_parties)]
    return [[sample_basis(d, rng, quartic_block) for _ in range(m)] for m in scenario.settings]


@dataclass(frozen=True, eq=False)
class Behavior:
    """``table[k1..kN, r1..rN]`` = P(r1..rN | settings k1..kN)."""

    scenario: Scenario
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != self.scenario.table_shape:
            raise ValueError(f"table shape {t.shape} does not match scenario {self.scenario.table_shape}")
        t = np.clip(t, 0.0, 1.0)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def vector(self) -> np.ndarray:
        return self.table.ravel()

    def normalization_error(self) -> float:
        n = self.scenario.num_parties
        sums = self.table.sum(axis=tuple(range(n, 2 * n)))
        return float(np.max(np.abs(sums - 1.0)))

    def signaling_error(self) -> float:
        """Largest change of any party subset's marginal under the other parties' setting changes."""
        n = self.scenario.num_parties
        worst = 0.0
        for party in range(n):
            # sum out this party's outcome; the result must not depend on its setting
            marg = self.table.sum(axis=n + party)
            spread = marg.max(axis=party) - marg.min(axis=party)
            worst = max(worst, float(spread.max()))
        return worst


def _measurement_rows(settings: Sequence[Sequence[MeasurementBasis]]) -> list[np.ndarray]:
    # rows[i][k, r, :] = <v_{k,r}| for party i
    return [np.stack([b.matrix.conj().T for b in party]) for party in settings]


def behavior_table(weights: np.ndarray, vectors: np.ndarray, rows: list[np.ndarray], local_dim: int) -> np.ndarray:
    """Evaluate sum_k w_k |<v_1 ... v_N|e_k>|^2 for every setting/outcome tuple."""
    n = len(rows)
    amps = vectors.reshape((vectors.shape[0],) + (local_dim,) * n)
    # contract one party at a time; the new (setting, outcome) axes go to the end
    for row in rows:
        amps = np.tensordot(amps, row, axes=([1], [2]))
    probs = np.einsum("k,k...->...", weights, np.abs(amps) ** 2)
    # axes are now (m1, d, m2, d, ...): gather settings first, then outcomes
    order = [2 * i for i in range(n)] + [2 * i + 1 for i in range(n)]
    return probs.transpose(order)


def behavior(rho: State, settings: Sequence[Sequence[MeasurementBasis]], scenario: Scenario | None = None) -> Behavior:
    n = len(settings)
    if n != rho.num_parties:
        raise ValueError(f"{n} parties measured but state has {rho.num_parties}")
    d = rho.local_dim
    if any(b.dim != d for party in settings for b in party):
        raise ValueError("measurement dimension does not match the state's local dimension")
    if scenario is None:
        scenario = Scenario(n, d, tuple(len(p) for p in settings))
    elif tuple(len(p) for p in settings) != scenario.settings:
        raise ValueError("settings do not match the scenario")
    weights, vectors = rho.spectrum()
    table = behavior_table(weights, vectors, _measurement_rows(settings), d)
    return Behavior(scenario, table)
