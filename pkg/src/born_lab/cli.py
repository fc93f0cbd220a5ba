"""``born-lab`` command line.

Exit codes: 0 pass, 2 statistical (or symmetry) failure, 1 error.

``run`` writes two artifacts per scenario:

* CSV (RFC 4180) with columns ``repetition,outcome,aware_count,fraction``;
  one row per repetition and outcome. Exact-mode and symmetry-check runs
  write the header only.
* JSON summary whose keys, in order, are :data:`SUMMARY_KEYS`.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
from datetime import datetime, timezone
from fractions import Fraction
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np

from . import envariance as env
from . import frequency as freq
from . import mmi_stochastic as stoch
from . import mmi_unitary as uni
from .frequency import SystemSpec
from .scenario import ScenarioError, ScenarioFile, load_scenario

logger = logging.getLogger("born_lab")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
CSV_COLUMNS = ("repetition", "outcome", "aware_count", "fraction")
SUMMARY_KEYS = (
    "name", "model", "mode", "seed", "N", "M", "T", "outcomes", "weights",
    "theoretical", "empirical", "bands", "fluctuation_predicted", "fluctuation_observed",
    "hulk_count", "checks", "verdict", "timestamp",
)
SIGMAS = 3.0


def _num(x):
    if x is None:
        return None
    if isinstance(x, (bool, str)):
        return x
    if isinstance(x, dict):
        return {k: _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, (int, np.integer)):
        return int(x)
    return float(x)


def _exact(x) -> str:
    return f"{x.numerator}/{x.denominator}" if isinstance(x, Fraction) else repr(float(x))


def _band(p, n: int) -> tuple:
    """3-sigma band of the aware fraction for N minds: p +- 3 sqrt(p(1-p)/N)."""
    p = float(p)
    half = SIGMAS * math.sqrt(p * (1 - p) / n)
    return (p - half, p + half)


def _in_bands(empirical: dict, bands: dict) -> bool:
    return all(lo - 1e-12 <= empirical[a] <= hi + 1e-12 for a, (lo, hi) in bands.items())


def _tally_rows(tallies: np.ndarray, outcomes: tuple, n: int) -> list:
    rows = []
    for k, row in enumerate(tallies.tolist()):
        for a, c in zip(outcomes, row):
            rows.append((k, a, c, repr(c / n)))
    return rows


def _rational_spec(spec: SystemSpec) -> tuple:
    """Exact version of ``spec`` plus a note when float weights were approximated."""
    if spec.exact:
        return spec, None
    approx = env.rational_approximation(spec.weights)
    note = f"float weights approximated by {', '.join(_exact(w) for w in approx)}"
    return SystemSpec(spec.outcomes, approx), note


def _base_summary(sc: ScenarioFile, spec: SystemSpec) -> dict:
    summary = dict.fromkeys(SUMMARY_KEYS)
    summary.update(name=sc.name, model=sc.model, mode=sc.mode, seed=sc.seed, N=sc.n, M=sc.m, T=sc.t,
                   outcomes=list(spec.outcomes), weights=[_exact(w) for w in spec.weights],
                   theoretical={a: float(w) for a, w in zip(spec.outcomes, spec.weights)})
    return summary


def _fluct(spec: SystemSpec, n: int) -> dict:
    return {a: stoch.relative_fluctuation(spec, n, a) for a, w in zip(spec.outcomes, spec.weights) if w > 0}


def _observed_fluct(tallies: np.ndarray, outcomes: tuple) -> dict:
    out = {}
    if tallies.shape[0] > 1:
        for j, a in enumerate(outcomes):
            col = tallies[:, j].astype(float)
            if col.mean() > 0:
                out[a] = float(col.std(ddof=1) / col.mean())
    return out


def _hulks(tallies: np.ndarray, spec: SystemSpec) -> int:
    live = [j for j, w in enumerate(spec.weights) if w > 0]
    return int(np.any(tallies[:, live] == 0, axis=1).sum()) if live else 0


def run_everett(sc: ScenarioFile):
    spec = sc.spec
    summary = _base_summary(sc, spec)
    summary["fluctuation_predicted"] = {a: freq.typicality_error(spec, sc.n, a)
                                        for a, w in zip(spec.outcomes, spec.weights) if w > 0}
    maverick = {a: freq.maverick_measure(spec, sc.n, a, sc.epsilon) for a in spec.outcomes}
    checks = {"epsilon": sc.epsilon, "maverick_measure": {a: float(v) for a, v in maverick.items()}}
    if sc.mode == "exact":
        over_cap = len(spec) ** sc.n > freq.ENUMERATION_CAP
        expect = freq.frequency_expectations(spec, sc.n, closed_form=True)
        ok = all((expect[a] == w) if spec.exact else abs(expect[a] - w) < 1e-12
                 for a, w in zip(spec.outcomes, spec.weights))
        checks.update(closed_form=over_cap, expectation={a: _exact(v) for a, v in expect.items()},
                      expectation_identity=ok)
        summary["empirical"] = {a: float(v) for a, v in expect.items()}
        return [], summary, ok
    tallies = stoch.sample_tallies(spec, sc.n, sc.m, stoch.SeededRng(sc.seed))
    return _sampled(sc, spec, tallies, summary, checks)


def _sampled(sc, spec, tallies, summary, checks):
    empirical = dict(zip(spec.outcomes, (tallies.mean(axis=0) / sc.n).tolist()))
    bands = {a: _band(w, sc.n) for a, w in zip(spec.outcomes, spec.weights)}
    summary.update(empirical=empirical, bands={a: list(b) for a, b in bands.items()},
                   fluctuation_observed=_observed_fluct(tallies, spec.outcomes), checks=checks)
    if summary["fluctuation_predicted"] is None:
        summary["fluctuation_predicted"] = _fluct(spec, sc.n)
    if summary["hulk_count"] is None and sc.model != "everett-frequency":
        summary["hulk_count"] = _hulks(tallies, spec)
    return _tally_rows(tallies, spec.outcomes, sc.n), summary, _in_bands(empirical, bands)


def run_stochastic(sc: ScenarioFile):
    spec = sc.spec
    summary = _base_summary(sc, spec)
    summary["fluctuation_predicted"] = _fluct(spec, sc.n)
    checks = {"hulk_probability": {a: float(stoch.hulk_probability(spec, sc.n, a)) for a in spec.outcomes},
              "mode_tally": list(stoch.mode_tally(spec, sc.n).counts)}
    if sc.mode == "exact":
        if stoch._n_tallies(len(spec), sc.n) > stoch.MODE_ENUMERATION_CAP:
            raise ValueError("tally simplex too large for exact mode")
        pmf = {c: stoch.tally_pmf(spec, sc.n, c) for c in stoch.iter_tallies(len(spec), sc.n)}
        total = sum(pmf.values())
        means = {a: sum(c[j] * p for c, p in pmf.items()) / sc.n for j, a in enumerate(spec.outcomes)}
        ok = (total == 1) if spec.exact else abs(total - 1) < 1e-12
        checks.update(pmf_total=_exact(total), pmf_normalized=ok)
        summary.update(empirical={a: float(v) for a, v in means.items()}, checks=checks)
        return [], summary, ok
    tallies = stoch.sample_tallies(spec, sc.n, sc.m, stoch.SeededRng(sc.seed))
    return _sampled(sc, spec, tallies, summary, checks)


def run_unitary(sc: ScenarioFile):
    spec, note = _rational_spec(sc.spec)
    exp = uni.ExperimentScenario(spec, sc.n, sc.m or 1, sc.t, sc.seed or 0, sc.mode)
    report = uni.run_experiment(exp)
    summary = _base_summary(sc, spec)
    summary["T"] = report.fine_map.t
    table = uni.mind_probability_table(exp, report)
    summary["theoretical"] = {a: float(v.theoretical) for a, v in table.items()}
    summary["fluctuation_predicted"] = report.predicted_fluctuation()
    summary["hulk_count"] = report.hulk_events
    checks = {"fine_groups": {a: list(fs) for a, fs in report.fine_map.groups},
              "mind_probability_empirical": {a: v.empirical for a, v in table.items()},
              "fine_hulk_events": report.fine_hulk_events, "approximation": note}
    if sc.mode == "exact":
        summary["M"] = report.repetitions
        means = report.mean_fractions()
        ok = all(abs(means[a] - float(p)) < 1e-12 for a, p in report.theoretical().items())
        summary.update(empirical=means, checks=dict(checks, exact_mean_matches=ok))
        return [], summary, ok
    empirical = report.mean_fractions()
    bands = {a: _band(p, sc.n) for a, p in report.theoretical().items()}
    summary.update(empirical=empirical, bands={a: list(b) for a, b in bands.items()},
                   fluctuation_observed=report.observed_fluctuation(), checks=checks)
    return _tally_rows(report.tallies, spec.outcomes, sc.n), summary, _in_bands(empirical, bands)


ALL_PAIRS_MAX_T = 8


def envariance_checks(state, pairs=None) -> tuple:
    """Swap/counterswap fidelities and strong-symmetry results per pair.

    Up to ALL_PAIRS_MAX_T outcomes every pair is checked; above that only the
    transpositions (first, x), which generate all permutations.
    """
    systems = sorted({label.system for label, _ in state})
    if pairs is None:
        if len(systems) <= ALL_PAIRS_MAX_T:
            pairs, scope = list(combinations(systems, 2)), "all"
        else:
            pairs, scope = [(systems[0], x) for x in systems[1:]], "generators"
    else:
        scope = "given"
    fid = {f"{a}<->{b}": env.verify_envariance(state, a, b).fidelity for a, b in pairs}
    strong = {f"{a}<->{b}": bool(env.strong_symmetry_check(state, a, b)) for a, b in pairs}
    ok = all(abs(1 - f) < 1e-12 for f in fid.values())
    return {"pairs_checked": scope, "fidelity": fid, "strong_symmetry": strong,
            "records_distinct": env.records_distinct(state)}, ok


def run_envariance(sc: ScenarioFile):
    spec, note = _rational_spec(sc.spec)
    fmap, state = env.fine_grain(spec, sc.t)
    checks, ok = envariance_checks(state)
    summary = _base_summary(sc, spec)
    summary["T"] = fmap.t
    fine = env.equiprobability_from_symmetry(state) if ok else None
    coarse = env.coarse_probability(fmap, fine) if fine else None
    round_trip = coarse is not None and all(coarse[a] == w for a, w in zip(spec.outcomes, spec.weights))
    checks.update(fine_groups={a: list(fs) for a, fs in fmap.groups}, round_trip_exact=round_trip,
                  approximation=note)
    summary.update(empirical={a: float(v) for a, v in coarse.items()} if coarse else None, checks=checks)
    return [], summary, ok and round_trip


def wallace_checks(spec: SystemSpec) -> tuple:
    live = [a for a, w in zip(spec.outcomes, spec.weights) if w > 0]
    if len(live) < 2:
        raise ValueError("wallace chain needs two outcomes of positive weight")
    alpha, beta = live[:2]
    report = env.wallace_chain(env.alex_state(spec), alpha, beta)
    checks = {
        "alpha": alpha, "beta": beta,
        "erased_labels_match": report.labels_match,
        "erased_max_amplitude_difference": report.max_difference,
        "erased_identical": report.erased_identical,
        "p_alpha": _exact(report.p_alpha), "p_beta": _exact(report.p_beta),
        "verdict": report.verdict,
    }
    return checks, report.equality


def run_wallace(sc: ScenarioFile):
    checks, ok = wallace_checks(sc.spec)
    summary = _base_summary(sc, sc.spec)
    summary["checks"] = checks
    return [], summary, ok


RUNNERS = {
    "everett-frequency": run_everett,
    "mmi-stochastic": run_stochastic,
    "mmi-unitary": run_unitary,
    "envariance-check": run_envariance,
    "wallace-chain": run_wallace,
}


def render_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(CSV_COLUMNS)
    writer.writerows(rows)
    return buf.getvalue()


def render_json(summary: dict) -> str:
    ordered = {k: _num(summary.get(k)) for k in SUMMARY_KEYS}
    return json.dumps(ordered, indent=2, ensure_ascii=False, default=_num) + "\n"


def _write_atomic(files: dict):
    """Write every (path -> text) pair or none of them."""
    temps = []
    try:
        for path, text in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            temps.append((tmp, path))
        for tmp, path in temps:
            os.replace(tmp, path)
    finally:
        for tmp, _ in temps:
            if os.path.exists(tmp):
                os.unlink(tmp)


def run_scenario(sc: ScenarioFile, out_dir: Optional[Path] = None) -> tuple:
    """Run a parsed scenario and write its artifacts. Returns (exit code, summary)."""
    sc.require_seed()
    if sc.model in ("mmi-stochastic", "mmi-unitary") and sc.mode == "monte-carlo" and sc.m is None:
        raise ScenarioError(f"missing required key 'M' for model {sc.model}", sc.source)
    if sc.model == "everett-frequency" and sc.mode == "monte-carlo" and sc.m is None:
        raise ScenarioError("missing required key 'M' for monte-carlo everett-frequency", sc.source)
    rows, summary, passed = RUNNERS[sc.model](sc)
    summary["verdict"] = "pass" if passed else "fail"
    summary["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    base = Path(out_dir) if out_dir is not None else Path.cwd()
    csv_path = base / (sc.csv_path or f"{sc.name}.csv")
    json_path = base / (sc.json_path or f"{sc.name}.json")
    _write_atomic({csv_path: render_csv(rows), json_path: render_json(summary)})
    logger.info("wrote %s and %s", csv_path, json_path)
    return (EXIT_PASS if passed else EXIT_FAIL), summary


def _spec_from_flag(text: str, outcomes: Optional[str] = None) -> SystemSpec:
    names = [o.strip() for o in outcomes.split(",")] if outcomes else None
    return SystemSpec.from_weights([w.strip() for w in text.split(",")], names)


def check_envariance(args) -> tuple:
    if args.weights:
        state = env.correlated_state(_spec_from_flag(args.weights, args.outcomes))
    else:
        state = env.schmidt_state(args.T)
    checks, ok = envariance_checks(state)
    try:
        checks["equiprobability"] = {a: _exact(p) for a, p in env.equiprobability_from_symmetry(state).items()}
    except env.NotEnvariant as exc:
        checks["equiprobability"] = str(exc)
    return {"check": "envariance", **checks, "pass": ok}, ok


def check_frequency(args) -> tuple:
    spec = _spec_from_flag(args.weights, args.outcomes)
    expect = freq.frequency_expectations(spec, args.N)
    diffs = {a: abs(float(expect[a]) - float(w)) for a, w in zip(spec.outcomes, spec.weights)}
    ok = all((expect[a] == w) if spec.exact else diffs[a] < 1e-12 for a, w in zip(spec.outcomes, spec.weights))
    report = {"check": "frequency", "N": args.N,
              "expectation": {a: _exact(v) for a, v in expect.items()},
              "expectation_float": {a: float(v) for a, v in expect.items()},
              "max_abs_error": max(diffs.values()),
              "typicality_error": {a: freq.typicality_error(spec, args.N, a)
                                   for a, w in zip(spec.outcomes, spec.weights) if w > 0}}
    if args.epsilon is not None:
        report["maverick_measure"] = {a: float(freq.maverick_measure(spec, args.N, a, args.epsilon))
                                      for a in spec.outcomes}
    report["pass"] = ok
    return report, ok


def check_wallace(args) -> tuple:
    checks, ok = wallace_checks(_spec_from_flag(args.weights, args.outcomes))
    return {"check": "wallace", **checks, "pass": ok}, ok


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="born-lab", description="Many-minds Born-rule simulations and checks")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("file")
    run.add_argument("--seed", type=int, help="override the scenario seed (unsigned 64-bit)")
    run.add_argument("--mode", choices=("exact", "mc", "monte-carlo"), help="override the scenario mode")
    run.add_argument("--out", type=Path, help="directory for the CSV and JSON artifacts")

    check = sub.add_parser("check", help="run a symmetry or frequency verification")
    kinds = check.add_subparsers(dest="kind", required=True)
    e = kinds.add_parser("envariance", help="swap/counterswap invariance of a Schmidt state")
    e.add_argument("--T", type=int, default=2)
    e.add_argument("--weights", help="comma-separated weights; checks the unequal-weight correlated state")
    e.add_argument("--outcomes")
    f = kinds.add_parser("frequency", help="frequency-operator expectation by history enumeration")
    f.add_argument("--weights", required=True)
    f.add_argument("--N", type=int, required=True)
    f.add_argument("--epsilon", type=float)
    f.add_argument("--outcomes")
    w = kinds.add_parser("wallace", help="counterswap + erasure chain")
    w.add_argument("--weights", required=True)
    w.add_argument("--outcomes")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_PASS
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "run":
            sc = load_scenario(args.file)
            if args.seed is not None:
                if not 0 <= args.seed < 2**64:
                    raise ScenarioError("seed out of range", sc.source)
                sc.seed = args.seed
            if args.mode is not None:
                sc.mode = "exact" if args.mode == "exact" else "monte-carlo"
            code, summary = run_scenario(sc, args.out)
            print(f"{sc.name}: {summary['verdict']}")
            return code
        if args.kind == "envariance" and args.T < 1:
            raise ValueError("--T must be >= 1")
        report, ok = {"envariance": check_envariance, "frequency": check_frequency,
                      "wallace": check_wallace}[args.kind](args)
        print(json.dumps(report, indent=2, ensure_ascii=False, default=_num))
        return EXIT_PASS if ok else EXIT_FAIL
    except (ScenarioError, ValueError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
