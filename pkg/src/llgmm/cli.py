"""Command-line entry point: simulation cells/tables, CSV estimation, APL curves.

Exit codes: 0 success, 1 estimation or failure-rate breach, 2 usage or input
parse error.  Progress lines go to stdout only under --verbose; diagnostics
go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .core import (
    EstimationStageError,
    EstimatorConfig,
    LLGMMError,
    ParseError,
    ValidationError,
    load_dataset,
    write_dataset,
    write_estimate,
)
from .gmm import estimate_full
from .netfeat import apl_curve, similarity_from_measurements, smooth_curve
from .simulate import SCENARIO_NAMES, MonteCarloReport, Scenario, generate, run_cell

TABLE_SNR = {1: 0.5, 2: 1.0}
TABLE_SIZES = (50, 100, 200, 500)
MAX_FAILURE_RATE = 0.01

_CONFIG_KEYS = {
    "scenario": str,
    "n": int,
    "snr": float,
    "replicates": int,
    "seed": int,
    "table": int,
    "covariates": str,
    "responses": str,
    "measurements": str,
    "out": str,
    "fve": float,
    "shrink": float,
    "folds": int,
    "workers": int,
    "smooth_bandwidth": float,
    "export_data": str,
    "verbose": bool,
}


def _read_config_file(path: str) -> dict:
    out = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ParseError(f"{path}: line {lineno}: expected key=value")
                key, _, value = line.partition("=")
                key = key.strip().replace("-", "_")
                if key not in _CONFIG_KEYS:
                    raise ParseError(f"{path}: line {lineno}: unknown key {key!r}")
                caster = _CONFIG_KEYS[key]
                if caster is bool:
                    out[key] = value.strip().lower() in ("1", "true", "yes")
                else:
                    out[key] = caster(value.strip())
    except OSError as exc:
        raise ParseError(f"cannot read config file {path}: {exc}") from exc
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return out


def _merged(ns: argparse.Namespace, file_cfg: dict, defaults: dict) -> dict:
    vals = dict(defaults)
    vals.update({k: v for k, v in file_cfg.items() if k in defaults})
    for key in defaults:
        flag = getattr(ns, key, None)
        if flag is not None and flag is not False:
            vals[key] = flag
    return vals


def _estimator_config(vals: dict) -> EstimatorConfig:
    return EstimatorConfig(
        cv_folds=vals["folds"],
        fve=vals["fve"],
        bandwidth_shrink=vals["shrink"],
        cv_seed=vals["seed"],
    )


def _progress(vals: dict, message: str) -> None:
    if vals.get("verbose"):
        print(message, flush=True)


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _cell_report_path(out_dir: str, sc: Scenario) -> str:
    snr_tag = str(sc.snr_theta).replace(".", "p")
    return os.path.join(
        out_dir, f"report_{sc.variance}_n{sc.n}_snr{snr_tag}_seed{sc.seed}.json"
    )


def _run_one_cell(sc: Scenario, config: EstimatorConfig, vals: dict) -> MonteCarloReport:
    _progress(vals, f"cell {sc.variance} n={sc.n} snr={sc.snr_theta}: {sc.replicates} replicates")
    report = run_cell(sc, config, workers=vals["workers"])
    print(
        f"cell {sc.variance} n={sc.n} snr={sc.snr_theta}: "
        f"{len(report.failures)} failures, {report.wall_time_s:.1f}s",
        file=sys.stderr,
    )
    return report


def cmd_simulate(ns: argparse.Namespace) -> int:
    file_cfg = _read_config_file(ns.config) if ns.config else {}
    defaults = {
        "scenario": None, "n": None, "snr": None, "table": None,
        "replicates": 500, "seed": 0, "out": ".", "fve": 0.99, "shrink": 0.75,
        "folds": 5, "workers": os.cpu_count() or 1, "export_data": None,
        "verbose": False,
    }
    vals = _merged(ns, file_cfg, defaults)
    if vals["table"] is None and vals["scenario"] is None:
        print("error: provide either --scenario (with --n and --snr) or --table", file=sys.stderr)
        return 2
    os.makedirs(vals["out"], exist_ok=True)
    config = _estimator_config(vals)

    if vals["table"] is not None:
        if vals["table"] not in TABLE_SNR:
            print("error: --table must be 1 or 2", file=sys.stderr)
            return 2
        snr = TABLE_SNR[vals["table"]]
        rows = []
        breach = False
        for name in SCENARIO_NAMES:
            per_method = {"lle": [], "llgmm": []}
            for n in TABLE_SIZES:
                sc = Scenario(
                    variance=name, snr_theta=snr, n=n,
                    replicates=vals["replicates"], seed=vals["seed"],
                )
                report = _run_one_cell(sc, config, vals)
                _write_json(_cell_report_path(vals["out"], sc), report.as_dict())
                if len(report.failures) > MAX_FAILURE_RATE * sc.replicates:
                    breach = True
                for method in per_method:
                    per_method[method] += [
                        float(report.mean(f"imse_{method}")[0]),
                        float(report.mean(f"imae_{method}")[0]),
                    ]
            for method, cells in per_method.items():
                rows.append([name, method] + cells)
        table_path = os.path.join(vals["out"], f"table{vals['table']}.csv")
        with open(table_path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["scenario", "method"]
            for n in TABLE_SIZES:
                header += [f"imse_n{n}", f"imae_n{n}"]
            w.writerow(header)
            for row in rows:
                w.writerow(row[:2] + [_fmt(v) for v in row[2:]])
        _progress(vals, f"wrote {table_path}")
        return 1 if breach else 0

    if vals["n"] is None or vals["snr"] is None:
        print("error: --scenario needs --n and --snr", file=sys.stderr)
        return 2
    sc = Scenario(
        variance=vals["scenario"], snr_theta=vals["snr"], n=vals["n"],
        replicates=vals["replicates"], seed=vals["seed"],
    )
    if vals["export_data"]:
        os.makedirs(vals["export_data"], exist_ok=True)
        ds, truth = generate(sc, 0)
        write_dataset(
            ds,
            os.path.join(vals["export_data"], "covariates.csv"),
            os.path.join(vals["export_data"], "responses.csv"),
        )
        with open(os.path.join(vals["export_data"], "truth.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"beta_{j + 1}" for j in range(truth.shape[1])])
            for m, s in enumerate(ds.grid.points):
                w.writerow([_fmt(s)] + [_fmt(v) for v in truth[m]])
        _progress(vals, f"exported replicate 0 to {vals['export_data']}")
    report = _run_one_cell(sc, config, vals)
    _write_json(_cell_report_path(vals["out"], sc), report.as_dict())
    if len(report.failures) > MAX_FAILURE_RATE * sc.replicates:
        print(
            f"error: failure rate {len(report.failures)}/{sc.replicates} exceeds "
            f"{MAX_FAILURE_RATE:.0%}",
            file=sys.stderr,
        )
        return 1
    return 0


def cmd_estimate(ns: argparse.Namespace) -> int:
    file_cfg = _read_config_file(ns.config) if ns.config else {}
    defaults = {
        "covariates": None, "responses": None, "out": ".", "fve": 0.99,
        "shrink": 0.75, "folds": 5, "seed": 0, "workers": 1, "verbose": False,
    }
    vals = _merged(ns, file_cfg, defaults)
    if not vals["covariates"] or not vals["responses"]:
        print("error: --covariates and --responses are required", file=sys.stderr)
        return 2
    try:
        data = load_dataset(vals["covariates"], vals["responses"])
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    os.makedirs(vals["out"], exist_ok=True)
    config = _estimator_config(vals)
    _progress(vals, f"estimating: n={data.n_subjects} r={data.grid.size} p={data.n_covariates}")
    try:
        lle_est, gmm_est, diag = estimate_full(data, config)
    except EstimationStageError as exc:
        print(f"error: estimation failed at stage {exc.stage}: {exc}", file=sys.stderr)
        return 1
    except LLGMMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    write_estimate(lle_est, os.path.join(vals["out"], "lle_estimates.csv"))
    write_estimate(gmm_est, os.path.join(vals["out"], "llgmm_estimates.csv"))
    _write_json(os.path.join(vals["out"], "diagnostics.json"), diag.as_dict())
    _progress(vals, f"wrote estimates and diagnostics to {vals['out']}")
    return 0


def cmd_netfeat(ns: argparse.Namespace) -> int:
    file_cfg = _read_config_file(ns.config) if ns.config else {}
    defaults = {
        "measurements": None, "out": ".", "smooth_bandwidth": None, "verbose": False,
    }
    vals = _merged(ns, file_cfg, defaults)
    if not vals["measurements"]:
        print("error: --measurements is required", file=sys.stderr)
        return 2
    try:
        with open(vals["measurements"], newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        print(f"error: cannot read {vals['measurements']}: {exc}", file=sys.stderr)
        return 2
    if len(rows) < 2 or rows[0][0] != "id" or len(rows[0]) < 3:
        print(f"error: {vals['measurements']}: expected header id,roi_1,...,roi_m", file=sys.stderr)
        return 2
    m = len(rows[0]) - 1
    curves = []
    try:
        for k, row in enumerate(rows[1:], start=2):
            if len(row) != m + 1:
                raise ParseError(f"line {k}: expected {m + 1} fields, got {len(row)}")
            y = np.array([float(c) for c in row[1:]])
            if not np.all(np.isfinite(y)):
                raise ParseError(f"line {k}: non-finite measurement")
            curve = apl_curve(similarity_from_measurements(y))
            if vals["smooth_bandwidth"]:
                curve = smooth_curve(curve, vals["smooth_bandwidth"])
            curves.append((row[0], curve))
    except (ParseError, ValidationError, ValueError) as exc:
        print(f"error: {vals['measurements']}: {exc}", file=sys.stderr)
        return 2

    os.makedirs(vals["out"], exist_ok=True)
    curves_path = os.path.join(vals["out"], "apl_curves.csv")
    with open(curves_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "t", "apl", "connected_pairs"])
        for sid, curve in curves:
            for t, a, c in zip(curve.thresholds, curve.apl, curve.connected_pairs):
                w.writerow([sid, _fmt(t), _fmt(a), int(c)])
    responses_path = os.path.join(vals["out"], "apl_responses.csv")
    with open(responses_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [_fmt(t) for t in curves[0][1].thresholds])
        for sid, curve in curves:
            w.writerow([sid] + [_fmt(a) for a in curve.apl])
    _progress(vals, f"wrote {curves_path} and {responses_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="llgmm",
        description="Varying-coefficient estimation with local-linear GMM",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run simulation cells or full tables")
    sim.add_argument("--scenario", choices=SCENARIO_NAMES)
    sim.add_argument("--n", type=int)
    sim.add_argument("--snr", type=float)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--table", type=int, choices=(1, 2))
    sim.add_argument("--out")
    sim.add_argument("--fve", type=float)
    sim.add_argument("--shrink", type=float)
    sim.add_argument("--folds", type=int)
    sim.add_argument("--workers", type=int)
    sim.add_argument("--export-data", dest="export_data")
    sim.add_argument("--config")
    sim.add_argument("--verbose", action="store_true", default=None)
    sim.set_defaults(func=cmd_simulate)

    est = sub.add_parser("estimate", help="fit both estimators on CSV data")
    est.add_argument("--covariates")
    est.add_argument("--responses")
    est.add_argument("--out")
    est.add_argument("--fve", type=float)
    est.add_argument("--shrink", type=float)
    est.add_argument("--folds", type=int)
    est.add_argument("--seed", type=int)
    est.add_argument("--workers", type=int)
    est.add_argument("--config")
    est.add_argument("--verbose", action="store_true", default=None)
    est.set_defaults(func=cmd_estimate)

    net = sub.add_parser("netfeat", help="APL curves from per-region measurements")
    net.add_argument("--measurements")
    net.add_argument("--out")
    net.add_argument("--smooth-bandwidth", dest="smooth_bandwidth", type=float)
    net.add_argument("--config")
    net.add_argument("--verbose", action="store_true", default=None)
    net.set_defaults(func=cmd_netfeat)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 2
    try:
        return ns.func(ns)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except LLGMMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
