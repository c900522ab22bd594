import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binomtest

from randbell import estimator
from randbell.estimator import (
    CheckpointError,
    ExcessiveFailuresError,
    TrialSpec,
    ViolationEstimate,
    estimate_pv,
    load_checkpoint,
    run_chunk,
    run_trial,
    trial_rng,
    wilson_ci,
)
from randbell.local_model import SolverFailure
from randbell.scenario import Scenario
from randbell.states import make_ghz, product_zero

CHSH = Scenario(2, 2, (2, 2))


def test_wilson_zero():
    low, high = wilson_ci(0, 100)
    assert low == 0.0
    assert high == pytest.approx(0.036994, abs=1e-6)


def test_wilson_half():
    low, high = wilson_ci(50, 100)
    assert (low + high) / 2 == pytest.approx(0.5, abs=1e-12)
    assert high - low == pytest.approx(0.19, abs=5e-3)
    assert high - low == pytest.approx(0.1923369, abs=1e-6)


def test_wilson_full():
    assert wilson_ci(100, 100)[1] == 1.0


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 10**6).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_wilson_matches_scipy(case):
    k, n = case
    ref = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    low, high = wilson_ci(k, n)
    assert low == pytest.approx(ref.low, abs=1e-6)
    assert high == pytest.approx(ref.high, abs=1e-6)
    assert 0 <= low <= k / n <= high <= 1


@pytest.mark.parametrize("k, n", [(-1, 10), (11, 10), (0, 0)])
def test_wilson_bad_input(k, n):
    with pytest.raises(ValueError):
        wilson_ci(k, n)


def test_trial_streams_distinct_and_repeatable():
    a = trial_rng(5, 0).random(4)
    np.testing.assert_array_equal(a, trial_rng(5, 0).random(4))
    assert not np.array_equal(a, trial_rng(5, 1).random(4))
    assert not np.array_equal(a, trial_rng(6, 0).random(4))


def test_product_state_never_violates():
    est = estimate_pv(product_zero(2), CHSH, 10_000, seed=3)
    assert est.violations == 0
    assert est.p_hat == 0.0
    assert est.ci_low == 0.0


def test_estimate_fields():
    est = estimate_pv(make_ghz(2), CHSH, 300, seed=1, label="ghz2")
    assert est.trials == 300
    assert est.state == "ghz2" and est.settings == "2x2" and est.local_dim == 2
    assert 0 <= est.ci_low <= est.p_hat <= est.ci_high <= 1
    assert est.valid


def test_workers_do_not_change_counts():
    spec_kwargs = dict(seed=11)
    one = estimate_pv(make_ghz(2), CHSH, 1500, workers=1, **spec_kwargs)
    three = estimate_pv(make_ghz(2), CHSH, 1500, workers=3, **spec_kwargs)
    assert one.counts() == three.counts()


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 399), max_size=5, unique=True))
def test_chunking_does_not_change_counts(cuts):
    spec = TrialSpec(make_ghz(2), CHSH, 9)
    whole = run_chunk(spec, 0, 400)
    bounds = [0] + sorted(cuts) + [400]
    parts = [run_chunk(spec, a, b) for a, b in zip(bounds, bounds[1:])]
    assert tuple(map(sum, zip(*parts))) == whole


def test_interrupt_and_resume_identical(tmp_path):
    ck = tmp_path / "run.ckpt"
    full = estimate_pv(make_ghz(2), CHSH, 2000, seed=4)
    part = estimate_pv(make_ghz(2), CHSH, 2000, seed=4, checkpoint=ck, stop_after=1000)
    assert part.trials == 1000
    assert load_checkpoint(ck).next_index == 1000
    resumed = estimate_pv(make_ghz(2), CHSH, 2000, seed=4, checkpoint=ck)
    assert resumed.counts() == full.counts()
    assert (resumed.p_hat, resumed.ci) == (full.p_hat, full.ci)


def test_resume_with_other_seed_refused(tmp_path):
    ck = tmp_path / "run.ckpt"
    estimate_pv(make_ghz(2), CHSH, 1000, seed=4, checkpoint=ck, stop_after=500)
    with pytest.raises(CheckpointError, match="seed"):
        estimate_pv(make_ghz(2), CHSH, 1000, seed=5, checkpoint=ck)


def test_missing_checkpoint_starts_fresh(tmp_path):
    ck = tmp_path / "absent.ckpt"
    est = estimate_pv(make_ghz(2), CHSH, 600, seed=2, checkpoint=ck)
    assert est.counts() == estimate_pv(make_ghz(2), CHSH, 600, seed=2).counts()


def test_corrupt_checkpoint_detected(tmp_path):
    ck = tmp_path / "run.ckpt"
    estimate_pv(make_ghz(2), CHSH, 1000, seed=4, checkpoint=ck, stop_after=500)
    payload = json.loads(ck.read_text())
    payload["violations"] += 1
    ck.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError, match="checksum"):
        estimate_pv(make_ghz(2), CHSH, 1000, seed=4, checkpoint=ck)
    ck.write_text("not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(ck)


def test_checkpoint_version_checked(tmp_path):
    ck = tmp_path / "run.ckpt"
    estimate_pv(make_ghz(2), CHSH, 1000, seed=4, checkpoint=ck, stop_after=500)
    payload = json.loads(ck.read_text())
    payload["version"] = 99
    ck.write_text(json.dumps(payload))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(ck)


def test_failures_excluded_and_flagged(monkeypatch):
    real = estimator.decide

    def flaky(beh, tol):
        if flaky.calls % 2 == 0:
            flaky.calls += 1
            raise SolverFailure("forced")
        flaky.calls += 1
        return real(beh, tol)

    flaky.calls = 0
    monkeypatch.setattr(estimator, "decide", flaky)
    with pytest.raises(ExcessiveFailuresError) as info:
        estimate_pv(make_ghz(2), CHSH, 100, seed=1)
    est = info.value.estimate
    assert est.solver_failures == 50
    assert est.decided == 50
    assert est.p_hat == est.violations / 50
    assert not est.valid
    lenient = estimate_pv(make_ghz(2), CHSH, 100, seed=1, strict=False)
    assert lenient.solver_failures == 50


def test_run_trial_outcomes():
    spec = TrialSpec(make_ghz(2), CHSH, 0)
    assert {run_trial(spec, i) for i in range(60)} == {estimator.LOCAL, estimator.NONLOCAL}


def test_argument_checks():
    with pytest.raises(ValueError):
        estimate_pv(make_ghz(2), CHSH, 0)
    with pytest.raises(ValueError):
        estimate_pv(make_ghz(3), CHSH, 10)
    with pytest.raises(ValueError):
        estimate_pv(make_ghz(2), CHSH, 10, mode="bogus")


def test_estimate_scenario_round_trip():
    est = ViolationEstimate("x", 2, "3x2", "independent", 10, 3, 0, 1, 1e-8)
    assert est.scenario == Scenario(2, 2, (3, 2))
    assert math.isclose(est.p_hat, 0.3)
