"""Post-processing: exponential fits, the tripartite entanglement witness,
multiplicativity of local fractions, parameter scans and two-qubit CHSH algebra."""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimator import Z_95, ViolationEstimate, estimate_pv
from .local_model import correlators
from .measurement import behavior, bloch_basis
from .scenario import Scenario
from .states import make_ghz, make_psi3

GME_THRESHOLD = 2 * (math.pi - 3)
UNIT_TOL = 1e-12
LEMMA_TOL = 1e-12

X_DEFINITIONS = ("settings_of_one_party", "product_of_settings")


@dataclass(frozen=True)
class FitResult:
    """p_v ~ 1 - a exp(-b x)."""

    a: float
    b: float
    residual_rms: float
    x_definition: str
    num_points: int

    def predict(self, x) -> np.ndarray:
        return 1.0 - self.a * np.exp(-self.b * np.asarray(x, dtype=float))


def settings_x(settings: Sequence[int], x_definition: str = "settings_of_one_party") -> int:
    if x_definition == "settings_of_one_party":
        return int(settings[0])
    if x_definition == "product_of_settings":
        return math.prod(int(m) for m in settings)
    raise ValueError(f"unknown x definition {x_definition!r}")


def fit_exponential(points, x_definition: str = "settings_of_one_party") -> FitResult:
    """Least squares of log(1 - p) = log(a) - b x; residual reported in p units."""
    if x_definition not in X_DEFINITIONS:
        raise ValueError(f"unknown x definition {x_definition!r}")
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    x, p = pts[:, 0], pts[:, 1]
    if np.any(np.diff(x) <= 0):
        raise ValueError("x values must be strictly increasing")
    if np.any(p < 0):
        raise ValueError("p_v values must be nonnegative")
    saturated = p >= 1
    if saturated.any():
        warnings.warn(f"dropping {int(saturated.sum())} point(s) with p_v >= 1", stacklevel=2)
        x, p = x[~saturated], p[~saturated]
    if x.size < 3:
        raise ValueError(f"need at least 3 usable points, got {x.size}")
    slope, intercept = np.polyfit(x, np.log1p(-p), 1)
    a, b = math.exp(intercept), -float(slope)
    fit = 1.0 - a * np.exp(-b * x)
    rms = float(np.sqrt(np.mean((p - fit) ** 2)))
    return FitResult(a, b, rms, x_definition, int(x.size))


class WitnessVerdict(enum.Enum):
    WITNESSED = "WITNESSED"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class WitnessReport:
    verdict: WitnessVerdict
    threshold: float
    p_hat: float
    ci_low: float
    # (p_hat - threshold) in binomial standard errors
    z_score: float


def gme_witness(estimate: ViolationEstimate) -> WitnessReport:
    """One-sided: WITNESSED only when the whole interval lies above the threshold."""
    sc = estimate.scenario
    if (sc.num_parties, sc.local_dim, sc.settings) != (3, 2, (2, 2, 2)):
        raise ValueError("the witness applies to three qubits with two settings each")
    p = estimate.p_hat
    se = math.sqrt(max(p * (1 - p), 1e-300) / estimate.decided)
    verdict = WitnessVerdict.WITNESSED if estimate.ci_low > GME_THRESHOLD else WitnessVerdict.INCONCLUSIVE
    return WitnessReport(verdict, GME_THRESHOLD, p, estimate.ci_low, (p - GME_THRESHOLD) / se)


@dataclass(frozen=True)
class MultiplicativityReport:
    passed: bool
    local_product: float
    local_joint: float
    difference: float
    half_width: float


def _binomial_var(est: ViolationEstimate) -> float:
    p = est.p_hat
    return p * (1 - p) / est.decided


def multiplicativity_check(p_a: ViolationEstimate, p_b: ViolationEstimate, p_ab: ViolationEstimate) -> MultiplicativityReport:
    """Compare (1-p_a)(1-p_b) with 1-p_ab.

    The 95% half-width combines the binomial variances of all three
    estimates to first order.
    """
    la, lb, lab = 1 - p_a.p_hat, 1 - p_b.p_hat, 1 - p_ab.p_hat
    var = lb * lb * _binomial_var(p_a) + la * la * _binomial_var(p_b) + _binomial_var(p_ab)
    half = Z_95 * math.sqrt(var)
    diff = la * lb - lab
    return MultiplicativityReport(abs(diff) <= half, la * lb, lab, diff, half)


FAMILIES = ("qubit_ghz", "qutrit_ghz", "psi3_theta")


def family_state(family: str, parameter: float, num_parties: int):
    if family == "qubit_ghz":
        return make_ghz(num_parties, 2, parameter)
    if family == "qutrit_ghz":
        return make_ghz(num_parties, 3, parameter)
    if family == "psi3_theta":
        if num_parties != 3:
            raise ValueError("psi3_theta is a three-qubit family")
        return make_psi3(parameter)
    raise ValueError(f"unknown family {family!r}; choose from {', '.join(FAMILIES)}")


def scan_alpha(
    family: str, grid: Sequence[float], scenario: Scenario, trials: int, seed: int = 0, **kwargs
) -> list[tuple[float, ViolationEstimate]]:
    """One estimate per grid point (radians).

    Every point uses the same seed, so all points see the same settings and
    differences along the curve are far less noisy than the points.
    """
    expected_dim = 3 if family == "qutrit_ghz" else 2
    if scenario.local_dim != expected_dim:
        raise ValueError(f"{family} needs local dimension {expected_dim}")
    curve = []
    for angle in grid:
        state = family_state(family, float(angle), scenario.num_parties)
        label = f"{family}:{math.degrees(angle):.4f}deg"
        curve.append((float(angle), estimate_pv(state, scenario, trials, seed, label=label, **kwargs)))
    return curve


def local_minima(values: Sequence[float]) -> list[int]:
    """Interior indices strictly below both neighbours."""
    v = list(values)
    return [i for i in range(1, len(v) - 1) if v[i] < v[i - 1] and v[i] < v[i + 1]]


def _unit(vec, name: str) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must have three components")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} is not a unit vector (norm {np.linalg.norm(v)!r})")
    return v


@dataclass(frozen=True)
class ChshParams:
    """Two-qubit state sin(alpha)|00> + cos(alpha)|11> and Bloch vectors of A1, A2, B1, B2."""

    alpha: float
    a1: np.ndarray
    a2: np.ndarray
    b1: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        for name in ("a1", "a2", "b1", "b2"):
            object.__setattr__(self, name, _unit(getattr(self, name), name))

    @property
    def alice(self) -> tuple[np.ndarray, np.ndarray]:
        return self.a1, self.a2

    @property
    def bob(self) -> tuple[np.ndarray, np.ndarray]:
        return self.b1, self.b2

    def with_alpha(self, alpha: float) -> ChshParams:
        return ChshParams(alpha, self.a1, self.a2, self.b1, self.b2)


def chsh_correlator(params: ChshParams, which: tuple[int, int]) -> float:
    """<A_i B_j> = a_z b_z + sin(2 alpha)(a_x b_x - a_y b_y), indices from 0."""
    a, b = params.alice[which[0]], params.bob[which[1]]
    return float(a[2] * b[2] + math.sin(2 * params.alpha) * (a[0] * b[0] - a[1] * b[1]))


@dataclass(frozen=True)
class ChshResult:
    value: float
    c_x: float
    c_y: float
    c_z: float

    def from_components(self, alpha: float) -> float:
        return self.c_z + math.sin(2 * alpha) * (self.c_x - self.c_y)


CHSH_SIGNS = ((0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, -1.0))


def chsh_value(params: ChshParams) -> ChshResult:
    value = sum(s * chsh_correlator(params, (i, j)) for i, j, s in CHSH_SIGNS)
    comps = [
        sum(s * params.alice[i][axis] * params.bob[j][axis] for i, j, s in CHSH_SIGNS) for axis in range(3)
    ]
    return ChshResult(float(value), *(float(c) for c in comps))


def correlator_from_behavior(params: ChshParams, which: tuple[int, int]) -> float:
    """Same correlator, measured through the state/behavior pipeline."""
    state = make_ghz(2, 2, params.alpha)
    settings = [[bloch_basis(params.alice[which[0]])], [bloch_basis(params.bob[which[1]])]]
    beh = behavior(state, settings)
    signs = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return float(np.sum(beh.table[0, 0] * signs))


def correlators_from_behavior(params: ChshParams) -> np.ndarray:
    state = make_ghz(2, 2, params.alpha)
    settings = [[bloch_basis(v) for v in params.alice], [bloch_basis(v) for v in params.bob]]
    return correlators(behavior(state, settings))


def random_unit_vectors(rng: np.random.Generator, count: int) -> np.ndarray:
    v = rng.standard_normal((count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _chsh_batch(alpha: np.ndarray, vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """CHSH(alpha) and C_z for stacked (a1, a2, b1, b2) vectors of shape (n, 4, 3)."""
    a1, a2, b1, b2 = (vecs[:, k] for k in range(4))
    comps = a1 * b1 + a1 * b2 + a2 * b1 - a2 * b2
    value = comps[:, 2] + np.sin(2 * alpha) * (comps[:, 0] - comps[:, 1])
    return value, comps[:, 2]


@dataclass(frozen=True)
class LemmaReport:
    samples: int
    violating: int
    failures: int
    max_deficit: float
    max_cz: float

    @property
    def passed(self) -> bool:
        return self.failures == 0


def appendix_lemma_check(samples: int, seed: int = 0, alpha=None) -> LemmaReport:
    """Whenever CHSH(alpha) > 2, the same measurements give at least as much at alpha = pi/4.

    ``alpha`` fixes the state parameter; by default it is drawn uniformly
    from [0, pi/4]. ``max_deficit`` is the largest CHSH(alpha) - CHSH(pi/4)
    over the violating samples.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    vecs = random_unit_vectors(rng, 4 * samples).reshape(samples, 4, 3)
    alphas = rng.uniform(0.0, math.pi / 4, samples) if alpha is None else np.full(samples, float(alpha))
    value, cz = _chsh_batch(alphas, vecs)
    best, _ = _chsh_batch(np.full(samples, math.pi / 4), vecs)
    hit = value > 2.0
    deficit = value[hit] - best[hit]
    return LemmaReport(
        samples=samples,
        violating=int(hit.sum()),
        failures=int(np.sum(deficit > LEMMA_TOL)),
        max_deficit=float(deficit.max()) if deficit.size else -math.inf,
        max_cz=float(np.max(np.abs(cz))),
    )
