"""Command-line entry point.

Exit codes: 0 success, 1 a check reported disagreement or failure,
2 configuration error, 3 scenario over the size cap, 4 too many solver
failures, 130 interrupted (a checkpoint is written first when configured).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from decimal import ROUND_HALF_EVEN, Decimal, localcontext
from pathlib import Path

import numpy as np

from . import analysis, estimator
from .estimator import CheckpointError, ExcessiveFailuresError, ViolationEstimate, estimate_pv, trial_rng
from .local_model import DEFAULT_TOL, VerdictKind, build_lp, chsh_oracle, chsh_values, decide, dump_lp
from .measurement import QUARTIC_BLOCKS, SAMPLING_MODES, behavior, sample_settings
from .oracle import ORACLE_STRATEGY_CAP, vertex_membership_oracle
from .scenario import CapExceededError, Scenario
from .states import (
    NAMED_STATES,
    InvalidStateError,
    load_density_matrix,
    make_dicke,
    make_ghz,
    make_named,
    make_psi3,
    make_w,
    mix,
    product_zero,
    random_pure_state,
    tensor,
)

log = logging.getLogger("randbell")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_CAP, EXIT_FAILURES, EXIT_INTERRUPT = 0, 1, 2, 3, 4, 130

RESULT_COLUMNS = (
    "state", "dim", "settings", "mode", "trials", "violations", "solver_failures",
    "pv_percent", "ci_low", "ci_high", "seed", "tol", "wall_time",
)
CHSH_BAND = 1e-7


class ConfigError(ValueError):
    pass


# --- state expressions -------------------------------------------------------


def _parse_factor(token: str, dim: int | None, alpha_deg: float | None, theta_deg: float | None):
    name, *args = token.strip().split(":")
    try:
        nums = [float(a) for a in args]
    except ValueError:
        raise ConfigError(f"bad arguments in state token {token!r}") from None

    def count(i=0):
        if len(nums) <= i or nums[i] != int(nums[i]) or nums[i] < 1:
            raise ConfigError(f"state token {token!r} needs a positive integer argument")
        return int(nums[i])

    if name == "ghz":
        angle = nums[1] if len(nums) > 1 else alpha_deg
        alpha = math.pi / 4 if angle is None else math.radians(angle)
        if dim == 3 and angle is None:
            alpha = math.asin(1 / math.sqrt(3))
        return make_ghz(count(), dim or 2, alpha)
    if name == "w":
        return make_w(count())
    if name == "dicke":
        return make_dicke(count(), count(1))
    if name == "psi3":
        angle = nums[0] if nums else theta_deg
        if angle is None:
            raise ConfigError("psi3 needs an angle, as psi3:DEG or --theta")
        return make_psi3(math.radians(angle))
    if name == "zero":
        return product_zero(count() if nums else 1, dim or 2)
    if name == "random":
        return random_pure_state(count(), dim or 2, count(1) if len(nums) > 1 else 0)
    if name in NAMED_STATES:
        return make_named(name)
    raise ConfigError(f"unknown state {name!r}")


def parse_state(expr: str, dim: int | None = None, alpha_deg: float | None = None, theta_deg: float | None = None):
    """Build a state from e.g. ``ghz:2*zero:1`` or ``0.5@ghz:2+0.5@werner2``.

    ``*`` is the tensor product (binds tighter), ``+`` mixes terms with
    ``weight@`` prefixes. Angles in tokens are in degrees.
    """
    terms = [t for t in expr.split("+")]
    states, weights = [], []
    for term in terms:
        weight = 1.0
        if "@" in term:
            w, term = term.split("@", 1)
            try:
                weight = float(w)
            except ValueError:
                raise ConfigError(f"bad mixture weight {w!r}") from None
        factors = [_parse_factor(f, dim, alpha_deg, theta_deg) for f in term.split("*")]
        state = factors[0]
        for f in factors[1:]:
            state = tensor(state, f)
        states.append(state)
        weights.append(weight)
    if len(states) == 1:
        if weights[0] != 1.0:
            raise ConfigError("a single term cannot carry a weight")
        return states[0]
    return mix(states, weights)


# --- configuration -----------------------------------------------------------

CONFIG_KEYS = {
    "state": str, "state_file": str, "alpha": float, "theta": float, "dim": int, "settings": str,
    "trials": int, "seed": int, "mode": str, "tol": float, "workers": int, "out": str,
    "format": str, "checkpoint": str, "quartic_block": int, "label": str,
}
DEFAULTS = {"settings": "2x2", "trials": 10000, "seed": 0, "mode": "independent", "tol": DEFAULT_TOL,
            "workers": 1, "format": "csv", "quartic_block": 3}


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a flat JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for key, value in data.items():
        kind = CONFIG_KEYS[key]
        if value is None:
            continue
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"config key {key!r} must be an integer")
        if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"config key {key!r} must be a number")
        if kind is str and not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string")
        out[key] = kind(value)
    return out


def merged_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_config(args.config))
    for key in CONFIG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def validate_config(cfg: dict) -> tuple:
    """Return (state, scenario, label) or raise ConfigError/CapExceededError."""
    if cfg.get("trials", 1) < 1:
        raise ConfigError("trials must be >= 1")
    if cfg.get("workers", 1) < 1:
        raise ConfigError("workers must be >= 1")
    if cfg.get("mode") not in SAMPLING_MODES:
        raise ConfigError(f"mode must be one of {', '.join(SAMPLING_MODES)}")
    if cfg.get("format") not in ("csv", "jsonl"):
        raise ConfigError("format must be csv or jsonl")
    if cfg.get("quartic_block") not in QUARTIC_BLOCKS:
        raise ConfigError("quartic_block must be 1, 2 or 3")
    if not cfg.get("tol", 1) > 0:
        raise ConfigError("tol must be positive")
    if bool(cfg.get("state")) == bool(cfg.get("state_file")):
        raise ConfigError("give exactly one of state or state_file")
    dim = cfg.get("dim")
    try:
        if cfg.get("state_file"):
            if not Path(cfg["state_file"]).is_file():
                raise ConfigError(f"state file {cfg['state_file']} does not exist")
            state = load_density_matrix(cfg["state_file"])
            label = cfg.get("label") or Path(cfg["state_file"]).stem
        else:
            state = parse_state(cfg["state"], dim, cfg.get("alpha"), cfg.get("theta"))
            label = cfg.get("label") or _state_label(cfg)
    except (InvalidStateError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None
    if dim is not None and dim != state.local_dim:
        raise ConfigError(f"state has local dimension {state.local_dim}, config says {dim}")
    try:
        scenario = Scenario.from_string(cfg["settings"], state.local_dim)
    except CapExceededError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if scenario.num_parties != state.num_parties:
        raise ConfigError(f"settings {cfg['settings']} list {scenario.num_parties} parties, state has {state.num_parties}")
    return state, scenario, label


def _state_label(cfg) -> str:
    label = cfg["state"]
    if cfg.get("alpha") is not None:
        label += f"@alpha={cfg['alpha']:g}"
    if cfg.get("theta") is not None:
        label += f"@theta={cfg['theta']:g}"
    return label


# --- output ------------------------------------------------------------------


def percent_half_even(violations: int, decided: int) -> str:
    if decided == 0:
        return "nan"
    with localcontext() as ctx:
        ctx.prec = 50
        value = Decimal(100 * violations) / Decimal(decided)
        return str(value.quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def result_row(est: ViolationEstimate) -> dict:
    return {
        "state": est.state,
        "dim": est.local_dim,
        "settings": est.settings,
        "mode": est.mode,
        "trials": est.trials,
        "violations": est.violations,
        "solver_failures": est.solver_failures,
        "pv_percent": percent_half_even(est.violations, est.decided),
        "ci_low": f"{est.ci_low:.6f}",
        "ci_high": f"{est.ci_high:.6f}",
        "seed": est.seed,
        "tol": repr(est.tol),
        "wall_time": f"{est.wall_time:.3f}",
    }


def estimate_from_row(row: dict) -> ViolationEstimate:
    try:
        return ViolationEstimate(
            state=row["state"], local_dim=int(row["dim"]), settings=row["settings"], mode=row["mode"],
            trials=int(row["trials"]), violations=int(row["violations"]),
            solver_failures=int(row["solver_failures"]), seed=int(row["seed"]), tol=float(row["tol"]),
            wall_time=float(row.get("wall_time") or 0.0),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"result row is missing or has a bad field: {exc}") from None


def read_rows(path) -> list[dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if text.lstrip().startswith("{"):
        return [json.loads(line) for line in text.splitlines() if line.strip()]
    return list(csv.DictReader(io.StringIO(text)))


def write_rows(rows: list[dict], columns, out, fmt: str) -> None:
    buf = io.StringIO()
    if fmt == "jsonl":
        for row in rows:
            buf.write(json.dumps({c: row[c] for c in columns}) + "\n")
    else:
        writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in columns})
    if out:
        Path(out).write_text(buf.getvalue(), encoding="utf-8")
    else:
        sys.stdout.write(buf.getvalue())


# --- commands ----------------------------------------------------------------


def _run_estimate(cfg: dict) -> ViolationEstimate:
    state, scenario, label = validate_config(cfg)
    return estimate_pv(
        state, scenario, cfg["trials"], cfg["seed"], cfg["mode"], cfg["tol"],
        workers=cfg["workers"], label=label, quartic_block=cfg["quartic_block"],
        checkpoint=cfg.get("checkpoint"), extra={"config": cfg},
    )


def cmd_estimate(args) -> int:
    cfg = merged_config(args)
    est = _run_estimate(cfg)
    write_rows([result_row(est)], RESULT_COLUMNS, cfg.get("out"), cfg["format"])
    return EXIT_OK


def cmd_resume(args) -> int:
    progress = estimator.load_checkpoint(args.checkpoint)
    cfg = dict(progress.extra.get("config") or {})
    if not cfg:
        raise ConfigError("checkpoint carries no run configuration")
    cfg["checkpoint"] = args.checkpoint
    for key in ("workers", "out", "format"):
        if getattr(args, key, None) is not None:
            cfg[key] = getattr(args, key)
    est = _run_estimate(cfg)
    write_rows([result_row(est)], RESULT_COLUMNS, cfg.get("out"), cfg["format"])
    return EXIT_OK


def parse_grid(text: str) -> list[float]:
    """Degrees, either ``a,b,c`` or ``start:stop:step`` with stop included."""
    try:
        if ":" in text:
            start, stop, step = (float(t) for t in text.split(":"))
            if step <= 0:
                raise ValueError
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(count)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"bad grid {text!r}; use a,b,c or start:stop:step (degrees)") from None


def cmd_scan_alpha(args) -> int:
    cfg = merged_config(args)
    grid = parse_grid(args.grid)
    if not grid:
        raise ConfigError("empty grid")
    dim = 3 if args.family == "qutrit_ghz" else 2
    try:
        scenario = Scenario.from_string(cfg["settings"], dim)
    except CapExceededError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        curve = analysis.scan_alpha(
            args.family, [math.radians(g) for g in grid], scenario, cfg["trials"], cfg["seed"],
            mode=cfg["mode"], tol=cfg["tol"], workers=cfg["workers"], quartic_block=cfg["quartic_block"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    rows = []
    for deg, (_, est) in zip(grid, curve):
        rows.append({"angle_deg": f"{deg:g}", **result_row(est)})
    write_rows(rows, ("angle_deg",) + RESULT_COLUMNS, cfg.get("out"), cfg["format"])
    return EXIT_OK


def cmd_fit(args) -> int:
    points = []
    if args.points:
        for item in args.points.split(","):
            try:
                x, p = item.split(":")
                points.append((float(x), float(p)))
            except ValueError:
                raise ConfigError(f"bad point {item!r}; use x:p_v") from None
    elif args.input:
        for row in read_rows(args.input):
            est = estimate_from_row(row)
            x = analysis.settings_x(Scenario.from_string(est.settings, est.local_dim).settings, args.x_definition)
            points.append((x, est.p_hat))
        points.sort()
    else:
        raise ConfigError("fit needs --points or --input")
    try:
        fit = analysis.fit_exponential(points, args.x_definition)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    row = {"a": repr(fit.a), "b": repr(fit.b), "residual_rms": repr(fit.residual_rms),
           "x_definition": fit.x_definition, "points": fit.num_points}
    write_rows([row], tuple(row), args.out, args.format or "csv")
    return EXIT_OK


def cmd_witness(args) -> int:
    if args.input:
        rows = read_rows(args.input)
        if not rows:
            raise ConfigError(f"{args.input} holds no result rows")
        est = estimate_from_row(rows[0])
        fmt = args.format or "csv"
        out = args.out
    else:
        cfg = merged_config(args)
        est = _run_estimate(cfg)
        fmt, out = cfg["format"], cfg.get("out")
    try:
        report = analysis.gme_witness(est)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    row = {**result_row(est), "verdict": report.verdict.value, "threshold": f"{report.threshold:.6f}",
           "z_score": f"{report.z_score:.3f}"}
    write_rows([row], RESULT_COLUMNS + ("verdict", "threshold", "z_score"), out, fmt)
    return EXIT_OK


def cmd_verify_appendix(args) -> int:
    report = analysis.appendix_lemma_check(args.samples, args.seed)
    rng = np.random.default_rng(args.seed + 1)
    worst_identity = worst_pipeline = 0.0
    for _ in range(args.cross_checks):
        vecs = analysis.random_unit_vectors(rng, 4)
        params = analysis.ChshParams(rng.uniform(0, math.pi / 2), *vecs)
        res = analysis.chsh_value(params)
        worst_identity = max(worst_identity, abs(res.value - res.from_components(params.alpha)))
        direct = np.array([[analysis.chsh_correlator(params, (i, j)) for j in range(2)] for i in range(2)])
        worst_pipeline = max(worst_pipeline, float(np.max(np.abs(direct - analysis.correlators_from_behavior(params)))))
    passed = report.passed and worst_identity <= 1e-12 and worst_pipeline <= 1e-10
    row = {
        "samples": report.samples, "violating": report.violating, "failures": report.failures,
        "max_deficit": repr(report.max_deficit), "max_abs_cz": repr(report.max_cz),
        "identity_error": repr(worst_identity), "pipeline_error": repr(worst_pipeline),
        "result": "PASS" if passed else "FAIL",
    }
    write_rows([row], tuple(row), args.out, args.format or "csv")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_oracle_check(args) -> int:
    cfg = merged_config(args)
    state, scenario, label = validate_config(cfg)
    if scenario.num_strategies > ORACLE_STRATEGY_CAP:
        raise CapExceededError(scenario.num_strategies, ORACLE_STRATEGY_CAP)
    use_chsh = (scenario.num_parties, scenario.local_dim, scenario.settings) == (2, 2, (2, 2))
    compared = excluded = disagree_vertex = disagree_chsh = 0
    for index in range(cfg["trials"]):
        rng = trial_rng(cfg["seed"], index)
        beh = behavior(state, sample_settings(scenario, rng, cfg["mode"], cfg["quartic_block"]), scenario)
        if use_chsh and abs(np.max(chsh_values(beh)) - 2.0) <= CHSH_BAND:
            excluded += 1
            continue
        kind = decide(beh, cfg["tol"]).kind
        compared += 1
        if vertex_membership_oracle(beh, scenario) is not kind:
            disagree_vertex += 1
            log.warning("trial %d: vertex oracle disagrees", index)
        if use_chsh and chsh_oracle(beh) is not kind:
            disagree_chsh += 1
            log.warning("trial %d: CHSH oracle disagrees", index)
    row = {"state": label, "settings": scenario.label, "trials": cfg["trials"], "compared": compared,
           "excluded": excluded, "vertex_disagreements": disagree_vertex,
           "chsh_disagreements": disagree_chsh if use_chsh else "n/a"}
    write_rows([row], tuple(row), cfg.get("out"), cfg["format"])
    return EXIT_OK if disagree_vertex == 0 and disagree_chsh == 0 else EXIT_CHECK


def cmd_dump_lp(args) -> int:
    cfg = merged_config(args)
    state, scenario, _ = validate_config(cfg)
    if not cfg.get("out"):
        raise ConfigError("dump-lp needs --out")
    rng = trial_rng(cfg["seed"], args.index)
    beh = behavior(state, sample_settings(scenario, rng, cfg["mode"], cfg["quartic_block"]), scenario)
    lp = build_lp(scenario, beh)
    dump_lp(lp, cfg["out"])
    verdict = decide(beh, cfg["tol"])
    print(f"wrote {lp.num_rows} rows x {lp.num_vars} vars to {cfg['out']}; verdict {verdict.kind.value}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def _add_run_args(p: argparse.ArgumentParser, with_state: bool = True) -> None:
    p.add_argument("--config", help="flat JSON file with run settings; flags override it")
    if with_state:
        p.add_argument("--state", help="state expression, e.g. ghz:3, w:3, ghz:2*zero:1, 0.5@ghz:2+0.5@zero:2")
        p.add_argument("--state-file", dest="state_file", help="density matrix file (header 'N d', then rows)")
        p.add_argument("--alpha", type=float, help="GHZ angle in degrees")
        p.add_argument("--theta", type=float, help="psi3 angle in degrees")
        p.add_argument("--dim", type=int, help="local dimension")
        p.add_argument("--label", help="name written to the state column")
    p.add_argument("--settings", help="settings per party, e.g. 3x2x2")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=SAMPLING_MODES)
    p.add_argument("--tol", type=float, help="phase-1 infeasibility below which a behavior is LOCAL")
    p.add_argument("--workers", type=int)
    p.add_argument("--quartic-block", dest="quartic_block", type=int, choices=QUARTIC_BLOCKS,
                   help="qutrit rotation block whose angle uses the fourth-root draw")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--checkpoint")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="randbell", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate the violation probability of one state")
    _add_run_args(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("scan-alpha", help="violation probability along a one-parameter family")
    p.add_argument("--family", required=True, choices=analysis.FAMILIES)
    p.add_argument("--grid", required=True, help="degrees: a,b,c or start:stop:step")
    _add_run_args(p, with_state=False)
    p.set_defaults(func=cmd_scan_alpha)

    p = sub.add_parser("fit", help="fit 1 - a exp(-b x) to violation probabilities")
    p.add_argument("--points", help="x:p_v pairs joined by commas")
    p.add_argument("--input", help="result file from estimate runs")
    p.add_argument("--x-definition", dest="x_definition", default="settings_of_one_party",
                   choices=analysis.X_DEFINITIONS)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("witness", help="three-qubit genuine entanglement test")
    p.add_argument("--input", help="result file; otherwise the run flags are used")
    _add_run_args(p)
    p.set_defaults(func=cmd_witness)

    p = sub.add_parser("verify-appendix", help="two-qubit CHSH lemma and identity checks")
    p.add_argument("--samples", type=int, default=100000)
    p.add_argument("--cross-checks", dest="cross_checks", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_verify_appendix)

    p = sub.add_parser("oracle-check", help="compare the LP verdict with the independent oracles")
    _add_run_args(p)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("resume", help="continue an interrupted estimate from its checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("dump-lp", help="write the LP of one trial to a text file")
    p.add_argument("--index", type=int, default=0, help="trial index whose settings are used")
    _add_run_args(p)
    p.set_defaults(func=cmd_dump_lp)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        code = args.func(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapExceededError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except ExcessiveFailuresError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPT
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
