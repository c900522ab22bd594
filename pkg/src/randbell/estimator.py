"""Monte Carlo estimate of the probability that random settings reveal nonlocality.

Trial ``i`` draws its settings from its own Philox stream keyed by the run
seed with ``i`` in the counter, so the verdict of a trial depends only on
(seed, i) and the counts do not depend on worker count, chunking or
interruption.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .local_model import DEFAULT_TOL, SolverFailure, check_lp_size, decide
from .measurement import SAMPLING_MODES, behavior, sample_settings
from .scenario import Scenario
from .states import State

log = logging.getLogger(__name__)

Z_95 = 1.959964
MAX_FAILURE_RATE = 1e-4
CHUNK_SIZE = 500
CHECKPOINT_VERSION = 1
CHECKPOINT_FORMAT = "randbell-checkpoint"

LOCAL, NONLOCAL, FAILED = 0, 1, 2


class CheckpointError(ValueError):
    """Checkpoint file is unreadable, corrupt, or belongs to a different run."""


class ExcessiveFailuresError(RuntimeError):
    def __init__(self, estimate: ViolationEstimate):
        self.estimate = estimate
        super().__init__(
            f"{estimate.solver_failures} solver failures in {estimate.trials} trials "
            f"(limit is a rate of {MAX_FAILURE_RATE})"
        )


def wilson_ci(successes: int, trials: int, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1 or not 0 <= successes <= trials:
        raise ValueError(f"need 0 <= successes <= trials and trials >= 1, got {successes}/{trials}")
    p = successes / trials
    z2 = z * z
    denom = 1.0 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == trials else min(1.0, centre + half)
    # keep the point estimate inside the interval under rounding
    return min(low, p), max(high, p)


@dataclass(frozen=True)
class ViolationEstimate:
    """Counts of one run. Failed trials are left out of p_hat and the interval."""

    state: str
    local_dim: int
    settings: str
    mode: str
    trials: int
    violations: int
    solver_failures: int
    seed: int
    tol: float
    wall_time: float = 0.0
    quartic_block: int = 3

    @property
    def decided(self) -> int:
        return self.trials - self.solver_failures

    @property
    def p_hat(self) -> float:
        return self.violations / self.decided if self.decided else math.nan

    @property
    def ci(self) -> tuple[float, float]:
        if not self.decided:
            return (0.0, 1.0)
        return wilson_ci(self.violations, self.decided)

    @property
    def ci_low(self) -> float:
        return self.ci[0]

    @property
    def ci_high(self) -> float:
        return self.ci[1]

    @property
    def failure_rate(self) -> float:
        return self.solver_failures / self.trials

    @property
    def valid(self) -> bool:
        return self.failure_rate < MAX_FAILURE_RATE and self.decided > 0

    @property
    def scenario(self) -> Scenario:
        return Scenario.from_string(self.settings, self.local_dim)

    def counts(self) -> tuple[int, int, int]:
        return self.trials, self.violations, self.solver_failures


def trial_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 0, index]))


@dataclass(frozen=True)
class TrialSpec:
    """Everything a worker needs to run trials; picklable."""

    state: State
    scenario: Scenario
    seed: int
    mode: str = "independent"
    tol: float = DEFAULT_TOL
    quartic_block: int = 3


def run_trial(spec: TrialSpec, index: int) -> int:
    rng = trial_rng(spec.seed, index)
    settings = sample_settings(spec.scenario, rng, spec.mode, spec.quartic_block)
    beh = behavior(spec.state, settings, spec.scenario)
    try:
        verdict = decide(beh, spec.tol)
    except SolverFailure as exc:
        log.warning("trial %d: %s", index, exc)
        return FAILED
    return LOCAL if verdict.is_local else NONLOCAL


def run_chunk(spec: TrialSpec, start: int, stop: int) -> tuple[int, int]:
    violations = failures = 0
    for index in range(start, stop):
        outcome = run_trial(spec, index)
        violations += outcome == NONLOCAL
        failures += outcome == FAILED
    return violations, failures


@dataclass
class Progress:
    next_index: int = 0
    violations: int = 0
    failures: int = 0
    elapsed: float = 0.0
    identity: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _checksum(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def save_checkpoint(path, progress: Progress) -> None:
    payload = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, **asdict(progress)}
    payload["checksum"] = _checksum(payload)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=1)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def load_checkpoint(path) -> Progress:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {payload.get('version')!r}")
    stored = payload.pop("checksum", None)
    if stored != _checksum(payload):
        raise CheckpointError(f"checkpoint {path} failed its checksum")
    try:
        return Progress(**{k: payload[k] for k in Progress.__dataclass_fields__})
    except KeyError as exc:
        raise CheckpointError(f"checkpoint {path} lacks field {exc}") from None


def run_identity(spec: TrialSpec, trials: int, label: str) -> dict:
    return {
        "state": label,
        "local_dim": spec.scenario.local_dim,
        "settings": spec.scenario.label,
        "mode": spec.mode,
        "trials": trials,
        "seed": spec.seed,
        "tol": spec.tol,
        "quartic_block": spec.quartic_block,
    }


def estimate_pv(
    state: State,
    scenario: Scenario,
    trials: int,
    seed: int = 0,
    mode: str = "independent",
    tol: float = DEFAULT_TOL,
    *,
    workers: int = 1,
    label: str = "state",
    quartic_block: int = 3,
    checkpoint=None,
    checkpoint_every: int = 5000,
    extra: dict | None = None,
    stop_after: int | None = None,
    strict: bool = True,
) -> ViolationEstimate:
    """Run ``trials`` random-settings trials and count nonlocal verdicts.

    With ``checkpoint`` set, progress is written atomically to that file at
    least every ``checkpoint_every`` trials and on interruption, and an
    existing file for the same run is resumed. ``stop_after`` ends the run
    early (after a checkpoint) once that many trials are done, which is how
    an interruption is simulated. With ``strict``, a failure rate at or above
    the limit raises :class:`ExcessiveFailuresError`.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if mode not in SAMPLING_MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if state.num_parties != scenario.num_parties or state.local_dim != scenario.local_dim:
        raise ValueError("state and scenario disagree on parties or local dimension")
    check_lp_size(scenario)

    spec = TrialSpec(state, scenario, int(seed), mode, tol, quartic_block)
    identity = run_identity(spec, trials, label)
    progress = Progress(identity=identity, extra=dict(extra or {}))
    if checkpoint is not None and Path(checkpoint).exists():
        progress = load_checkpoint(checkpoint)
        if progress.identity != identity:
            diff = sorted(k for k in identity if progress.identity.get(k) != identity[k])
            raise CheckpointError(f"checkpoint belongs to a different run (differs in {', '.join(diff)})")
        log.info("resuming at trial %d of %d", progress.next_index, trials)

    end = trials if stop_after is None else min(trials, stop_after)
    starts = list(range(progress.next_index, end, CHUNK_SIZE))
    chunks = [(s, min(s + CHUNK_SIZE, end)) for s in starts]
    started = time.perf_counter()
    base_elapsed = progress.elapsed
    last_saved = progress.next_index

    def absorb(chunk, counts):
        nonlocal last_saved
        progress.violations += counts[0]
        progress.failures += counts[1]
        progress.next_index = chunk[1]
        progress.elapsed = base_elapsed + time.perf_counter() - started
        if checkpoint is not None and progress.next_index - last_saved >= checkpoint_every:
            save_checkpoint(checkpoint, progress)
            last_saved = progress.next_index

    try:
        if workers == 1 or len(chunks) <= 1:
            for chunk in chunks:
                absorb(chunk, run_chunk(spec, *chunk))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(run_chunk, spec, *chunk) for chunk in chunks]
                # absorb in index order so a checkpoint always covers a prefix
                for chunk, fut in zip(chunks, futures):
                    absorb(chunk, fut.result())
    except KeyboardInterrupt:
        if checkpoint is not None:
            save_checkpoint(checkpoint, progress)
        raise

    if checkpoint is not None and (progress.next_index < trials or stop_after is not None):
        save_checkpoint(checkpoint, progress)

    done = progress.next_index
    estimate = ViolationEstimate(
        state=label,
        local_dim=scenario.local_dim,
        settings=scenario.label,
        mode=mode,
        trials=done,
        violations=progress.violations,
        solver_failures=progress.failures,
        seed=int(seed),
        tol=tol,
        wall_time=progress.elapsed,
        quartic_block=quartic_block,
    )
    if strict and done == trials and not estimate.valid:
        raise ExcessiveFailuresError(estimate)
    return estimate
