"""Command line: solve, sweep, baseline and verify subcommands.

Outputs are plot-ready and diff-able: a CSV table with a fixed column order
plus one structured JSON record per solve (schema_version field) holding the
full input distribution and, when requested, the per-iteration trajectories.
Files carry no timestamps, so repeated runs of the same configuration are
byte-identical in single-thread mode.

Sweep rows may run in parallel; set the LMRATE_THREADS environment variable
to a worker count (default 1). Output order does not depend on it.

Exit codes: 0 ok, 1 at least one solve failed numerically, 2 configuration
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import oracle, solver
from .channel import (
    SCHEMES,
    build_constellation,
    discretize_awgn,
    iq_channel,
    metric_matrix,
    output_grid,
    sigma2_from_snr_db,
)
from .core import ProbabilityVector
from .dual import DualState
from .solver import SolverConfig, solve_clm, solve_lm_fixed_input

EXIT_OK = 0
EXIT_SOLVE_FAILURE = 1
EXIT_CONFIG_ERROR = 2

SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "scheme", "eta", "theta", "snr_db", "mode", "rate_nats", "rate_bits",
    "iters", "term", "r_phi", "r_psi", "r_zeta", "r_lambda",
]
LN2 = math.log(2.0)

MODES = ("clm", "lm-uniform", "both")
METRIC_MODES = ("identity", "true-h", "explicit")


class ConfigError(ValueError):
    pass


_ANGLE_RE = re.compile(
    r"^\s*([+-])?\s*(\d+(?:\.\d*)?|\.\d+)?\s*\*?\s*pi\s*(?:/\s*(\d+(?:\.\d*)?|\.\d+))?\s*$",
    re.IGNORECASE,
)


def parse_angle(value) -> tuple[float, str]:
    """Parse an angle given in radians or as a rational multiple of pi.

    Strings like 'pi/18', '2pi/3', '-pi', '0.25' are accepted; pi multiples
    are evaluated exactly from math.pi so golden files never accumulate
    decimal-radian drift. Returns (radians, label used in output files).
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value), repr(float(value))
    text = str(value).strip()
    match = _ANGLE_RE.match(text)
    if match:
        sign, coeff, denom = match.groups()
        radians = math.pi * (float(coeff) if coeff else 1.0)
        if denom:
            radians /= float(denom)
        if sign == "-":
            radians = -radians
        return radians, text
    try:
        return float(text), text
    except ValueError:
        raise ConfigError(f"field 'theta': cannot parse angle {value!r}") from None


def _parse_budget(value):
    if value is None or (isinstance(value, str) and value.strip().lower() == "unconstrained"):
        return None
    try:
        budget = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"field 'power_budget': expected a number or 'unconstrained', got {value!r}") from None
    if budget <= 0:
        raise ConfigError("field 'power_budget': must be positive or 'unconstrained'")
    return budget


def _as_list(value):
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


@dataclass
class ExperimentSpec:
    """One experiment: channel family, SNR points, metric and solver knobs.

    eta and theta hold lists; solve requires singletons while sweep crosses
    them. theta entries are (radians, label) pairs.
    """

    scheme: str = "qpsk"
    eta: list = field(default_factory=lambda: [0.9])
    theta: list = field(default_factory=lambda: [parse_angle("pi/18")])
    snr_db: list = field(default_factory=lambda: [0.0])
    grid_n: int = 2500
    bound: float = 8.0
    power_budget: float | None = 1.0
    metric: str = "identity"
    metric_h: list | None = None
    mode: str = "both"
    max_iter: int = 3000
    rate_tol: float = 1e-10
    residual_tol: float = 1e-6
    record_trajectory: bool = False
    output: str = "lmrate_out.csv"

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"field 'scheme': unknown scheme {self.scheme!r}, expected one of {sorted(SCHEMES)}")
        if not self.snr_db:
            raise ConfigError("field 'snr_db': must list at least one SNR point")
        side = math.isqrt(int(self.grid_n))
        if side * side != self.grid_n or self.grid_n < 4:
            raise ConfigError(f"field 'grid_n': {self.grid_n} is not a perfect square >= 4")
        if self.bound <= 0:
            raise ConfigError("field 'bound': must be positive")
        for e in self.eta:
            if not e > 0:
                raise ConfigError(f"field 'eta': must be positive, got {e!r}")
        if self.mode not in MODES:
            raise ConfigError(f"field 'mode': expected one of {MODES}, got {self.mode!r}")
        if self.metric not in METRIC_MODES:
            raise ConfigError(f"field 'metric': expected one of {METRIC_MODES}, got {self.metric!r}")
        if self.metric == "explicit":
            h = np.asarray(self.metric_h, dtype=float) if self.metric_h is not None else None
            if h is None or h.shape != (2, 2):
                raise ConfigError("field 'metric_h': explicit metric needs a 2x2 matrix")
        if self.max_iter < 1:
            raise ConfigError("field 'max_iter': must be at least 1")
        if not (self.rate_tol > 0 and self.residual_tol > 0):
            raise ConfigError("fields 'rate_tol'/'residual_tol': must be positive")
        return self


_SPEC_FIELDS = {
    "scheme", "eta", "theta", "snr_db", "grid_n", "bound", "power_budget",
    "metric", "metric_h", "mode", "max_iter", "rate_tol", "residual_tol",
    "record_trajectory", "output",
}


def load_spec(config_path: str | None, overrides: dict) -> ExperimentSpec:
    """Build a spec from an optional YAML file plus flag overrides."""
    mapping = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}" if mark is not None else ""
            raise ConfigError(f"config parse error{where}: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        mapping.update(loaded)
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = value
    unknown = set(mapping) - _SPEC_FIELDS
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(sorted(unknown))}")

    spec = ExperimentSpec()
    if "scheme" in mapping:
        spec.scheme = str(mapping["scheme"]).lower()
    if "eta" in mapping:
        try:
            spec.eta = [float(e) for e in _as_list(mapping["eta"])]
        except (TypeError, ValueError):
            raise ConfigError(f"field 'eta': expected number(s), got {mapping['eta']!r}") from None
    if "theta" in mapping:
        spec.theta = [parse_angle(t) for t in _as_list(mapping["theta"])]
    if "snr_db" in mapping:
        try:
            spec.snr_db = [float(v) for v in _as_list(mapping["snr_db"])]
        except (TypeError, ValueError):
            raise ConfigError(f"field 'snr_db': expected number(s), got {mapping['snr_db']!r}") from None
    for key, cast in (
        ("grid_n", int), ("bound", float), ("max_iter", int),
        ("rate_tol", float), ("residual_tol", float),
    ):
        if key in mapping:
            try:
                setattr(spec, key, cast(mapping[key]))
            except (TypeError, ValueError):
                raise ConfigError(f"field {key!r}: expected a number, got {mapping[key]!r}") from None
    if "power_budget" in mapping:
        spec.power_budget = _parse_budget(mapping["power_budget"])
    if "metric" in mapping:
        value = str(mapping["metric"]).lower()
        spec.metric = {"true": "true-h"}.get(value, value)
    if "metric_h" in mapping:
        spec.metric_h = mapping["metric_h"]
    if "mode" in mapping:
        spec.mode = str(mapping["mode"]).lower()
    if "record_trajectory" in mapping:
        spec.record_trajectory = bool(mapping["record_trajectory"])
    if "output" in mapping:
        spec.output = str(mapping["output"])
    return spec.validate()


def _modes(spec_mode: str) -> list[str]:
    return ["clm", "lm-uniform"] if spec_mode == "both" else [spec_mode]


def _run_task(task: dict) -> list[dict]:
    """Solve every requested mode at one (eta, theta, snr) point.

    Top-level function so sweep workers can pickle it. Returns one result
    dict per mode, carrying both the CSV row and the JSON record.
    """
    constellation = build_constellation(task["scheme"])
    grid = output_grid(task["grid_n"], task["bound"])
    h = iq_channel(task["eta"], task["theta_value"])
    sigma2 = sigma2_from_snr_db(task["snr_db"])
    s = discretize_awgn(h, sigma2, constellation, grid)
    if task["metric"] == "identity":
        h_hat = np.eye(2)
    elif task["metric"] == "true-h":
        h_hat = h.matrix
    else:
        h_hat = np.asarray(task["metric_h"], dtype=float)
    d = metric_matrix(constellation, grid, h_hat)
    powers = constellation.powers()
    config = SolverConfig(
        max_iter=task["max_iter"],
        rate_tol=task["rate_tol"],
        residual_tol=task["residual_tol"],
        power_budget=task["power_budget"],
        record_trajectory=task["record_trajectory"],
    )

    results = []
    for mode in task["modes"]:
        if mode == "clm":
            report = solve_clm(s, d, powers, config)
        else:
            report = solve_lm_fixed_input(
                ProbabilityVector.uniform(constellation.size), s, d, config
            )
        r_phi, r_psi, r_zeta, r_lam = report.final_residuals
        row = {
            "scheme": task["scheme"],
            "eta": task["eta"],
            "theta": task["theta_label"],
            "snr_db": task["snr_db"],
            "mode": mode,
            "rate_nats": report.rate,
            "rate_bits": report.rate / LN2,
            "iters": report.iterations,
            "term": report.termination,
            "r_phi": r_phi,
            "r_psi": r_psi,
            "r_zeta": r_zeta,
            "r_lambda": r_lam,
        }
        record = {
            "schema_version": SCHEMA_VERSION,
            "scheme": task["scheme"],
            "eta": task["eta"],
            "theta": task["theta_label"],
            "theta_radians": task["theta_value"],
            "snr_db": task["snr_db"],
            "mode": mode,
            "grid_n": task["grid_n"],
            "bound": task["bound"],
            "power_budget": task["power_budget"],
            "metric": task["metric"],
            "rate_nats": report.rate,
            "rate_bits": report.rate / LN2,
            "iterations": report.iterations,
            "termination": report.termination,
            "diagnostic": report.diagnostic,
            "residuals": {
                "r_phi": r_phi, "r_psi": r_psi, "r_zeta": r_zeta, "r_lambda": r_lam,
            },
            "input_distribution": [float(x) for x in report.input_distribution.weights],
        }
        trajectory = None
        if task["record_trajectory"]:
            trajectory = {
                "objective": [float(x) for x in report.objective_trajectory],
                "residuals": [[float(x) for x in row_] for row_ in report.residual_trajectory],
            }
            record["trajectory"] = trajectory
        results.append({"row": row, "record": record, "trajectory": trajectory})
    return results


def _sort_key(result: dict):
    row = result["row"]
    return (row["eta"], result["theta_value"], row["snr_db"], row["mode"])


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_name(row: dict) -> str:
    theta = str(row["theta"]).replace("/", "-").replace(" ", "")
    return f"{row['scheme']}_eta{row['eta']!r}_theta{theta}_snr{row['snr_db']!r}_{row['mode']}.json"


def _write_outputs(results: list[dict], output: str) -> None:
    out_path = Path(output)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for result in results:
            row = result["row"]
            writer.writerow([_format_cell(row[col]) for col in CSV_COLUMNS])

    records_dir = out_path.with_name(out_path.stem + "_records")
    records_dir.mkdir(parents=True, exist_ok=True)
    for result in results:
        name = _record_name(result["row"])
        with open(records_dir / name, "w") as fh:
            json.dump(result["record"], fh, indent=2, sort_keys=True)
            fh.write("\n")
        if result["trajectory"] is not None:
            with open(records_dir / (name[: -len(".json")] + "_trajectory.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["iter", "objective", "r_phi", "r_psi", "r_zeta", "r_lambda"])
                objective = result["trajectory"]["objective"]
                for i, res_row in enumerate(result["trajectory"]["residuals"], start=1):
                    writer.writerow([i, repr(objective[i])] + [repr(v) for v in res_row])


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("LMRATE_THREADS", "1")))
    except ValueError:
        return 1


def _execute(tasks: list[dict]) -> list[dict]:
    workers = _worker_count()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            grouped = list(pool.map(_run_task, tasks))
    else:
        grouped = [_run_task(t) for t in tasks]
    results = []
    for task, group in zip(tasks, grouped):
        for result in group:
            result["theta_value"] = task["theta_value"]
            results.append(result)
    return results


def _tasks_from_spec(spec: ExperimentSpec) -> list[dict]:
    tasks = []
    for eta in spec.eta:
        for theta_value, theta_label in spec.theta:
            for snr in spec.snr_db:
                tasks.append({
                    "scheme": spec.scheme,
                    "eta": eta,
                    "theta_value": theta_value,
                    "theta_label": theta_label,
                    "snr_db": snr,
                    "modes": _modes(spec.mode),
                    "grid_n": spec.grid_n,
                    "bound": spec.bound,
                    "power_budget": spec.power_budget,
                    "metric": spec.metric,
                    "metric_h": spec.metric_h,
                    "max_iter": spec.max_iter,
                    "rate_tol": spec.rate_tol,
                    "residual_tol": spec.residual_tol,
                    "record_trajectory": spec.record_trajectory,
                })
    return tasks


def _finish(results: list[dict], spec: ExperimentSpec) -> int:
    _write_outputs(results, spec.output)
    failures = 0
    for result in results:
        row = result["row"]
        print(
            f"{row['scheme']} eta={row['eta']!r} theta={row['theta']} "
            f"snr={row['snr_db']!r} {row['mode']}: rate={row['rate_nats']:.9f} nats "
            f"({row['rate_bits']:.9f} bits) iters={row['iters']} term={row['term']}"
        )
        if row["term"] == solver.TERM_FAILURE:
            failures += 1
            print(f"  solve failed: {result['record']['diagnostic']}", file=sys.stderr)
        elif max(row["r_phi"], row["r_psi"], row["r_zeta"], row["r_lambda"]) > spec.residual_tol:
            print(
                f"  warning: final residuals above {spec.residual_tol:g}", file=sys.stderr
            )
    print(f"wrote {spec.output} ({len(results)} rows)")
    return EXIT_SOLVE_FAILURE if failures else EXIT_OK


def cmd_solve(args) -> int:
    spec = load_spec(args.config, _overrides(args))
    if len(spec.eta) != 1 or len(spec.theta) != 1:
        raise ConfigError("solve takes a single (eta, theta) pair; use sweep for grids")
    results = _execute(_tasks_from_spec(spec))
    return _finish(results, spec)


def cmd_sweep(args) -> int:
    spec = load_spec(args.config, _overrides(args))
    results = _execute(_tasks_from_spec(spec))
    results.sort(key=_sort_key)
    return _finish(results, spec)


def cmd_baseline(args) -> int:
    overrides = _overrides(args)
    overrides["mode"] = "lm-uniform"
    spec = load_spec(args.config, overrides)
    if len(spec.eta) != 1 or len(spec.theta) != 1:
        raise ConfigError("baseline takes a single (eta, theta) pair; use sweep for grids")
    results = _execute(_tasks_from_spec(spec))
    return _finish(results, spec)


def cmd_verify(args) -> int:
    """Seeded oracle agreement suite; exits 0 only if every check passes."""
    import lmrate.dual as dual_mod

    checks: list[tuple[str, float, float]] = []

    for seed in range(8):
        p, s, d = oracle.random_lm_instance(2, 3, seed)
        adm = solve_lm_fixed_input(p, s, d, SolverConfig(power_budget=None)).rate
        brute = oracle.brute_force_lm(p, s, d)
        checks.append((f"fixed-input vs brute force 2x3 seed={seed}", abs(adm - brute), 1e-4))

    bsc = np.array([[0.9, 0.1], [0.1, 0.9]])
    d_bsc = -np.log(bsc)
    clm = solve_clm(bsc, d_bsc, np.ones(2), SolverConfig(power_budget=None)).rate
    ba, _ = oracle.blahut_arimoto(bsc)
    checks.append(("matched capacity BSC(0.1) vs alternating oracle", abs(clm - ba), 1e-4))

    constellation = build_constellation("qpsk")
    grid = output_grid(16, 8.0)
    h = iq_channel(1.0, 0.0)
    s_qpsk = discretize_awgn(h, sigma2_from_snr_db(0.0), constellation, grid)
    d_qpsk = -np.log(s_qpsk.entries)
    clm_q = solve_clm(s_qpsk, d_qpsk, constellation.powers(), SolverConfig(power_budget=None)).rate
    ba_q, _ = oracle.blahut_arimoto(s_qpsk)
    checks.append(("matched capacity QPSK 4x16 at 0 dB vs oracle", abs(clm_q - ba_q), 1e-4))

    worst = 0.0
    for k in range(50):
        p, s, d = oracle.random_lm_instance(3, 4, 1000 + k)
        rng = np.random.default_rng(2000 + k)
        zeta = float(rng.uniform(0.0, 2.0))
        phi = rng.lognormal(0.0, 0.7, 3)
        denom = (phi[:, None] * np.exp(-zeta * d.entries)).sum(axis=0)
        state = DualState(np.log(phi), -np.log(denom), zeta, 0.0)
        lhs = dual_mod.dual_objective(state, p, s, d)
        rhs = oracle.scarlett_dual_objective(phi / p.weights, zeta, p, s, d)
        worst = max(worst, abs(lhs - rhs))
    checks.append(("dual-form equivalence, 50 seeded draws 3x4", worst, 1e-10))

    width = max(len(name) for name, _, _ in checks) + 2
    failures = 0
    for name, value, limit in checks:
        ok = value <= limit
        failures += 0 if ok else 1
        print(f"{name:<{width}} {value:12.3e}  <= {limit:g}  {'PASS' if ok else 'FAIL'}")
    print(f"{len(checks) - failures}/{len(checks)} checks passed")
    return EXIT_OK if failures == 0 else EXIT_SOLVE_FAILURE


def _overrides(args) -> dict:
    overrides = {}
    for key in (
        "scheme", "eta", "theta", "snr_db", "grid_n", "bound", "power_budget",
        "metric", "mode", "max_iter", "rate_tol", "output",
    ):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "trajectory", False):
        overrides["record_trajectory"] = True
    return overrides


def _add_common(parser: argparse.ArgumentParser, with_mode: bool = True):
    parser.add_argument("-c", "--config", help="YAML config file")
    parser.add_argument("--scheme", choices=sorted(SCHEMES), help="constellation scheme")
    parser.add_argument("--eta", type=lambda s: [float(x) for x in s.split(",")],
                        help="quadrature gain(s), comma separated")
    parser.add_argument("--theta", type=lambda s: s.split(","),
                        help="rotation angle(s), e.g. pi/18, comma separated")
    parser.add_argument("--snr-db", dest="snr_db",
                        type=lambda s: [float(x) for x in s.split(",")],
                        help="SNR grid in dB, comma separated")
    parser.add_argument("--grid-n", dest="grid_n", type=int, help="output grid size (perfect square)")
    parser.add_argument("--bound", type=float, help="output truncation bound")
    parser.add_argument("--power-budget", dest="power_budget",
                        help="average power cap, or 'unconstrained'")
    parser.add_argument("--metric", choices=METRIC_MODES + ("true",),
                        help="assumed channel for the decoding metric")
    if with_mode:
        parser.add_argument("--mode", choices=MODES, help="which rates to compute")
    parser.add_argument("--max-iter", dest="max_iter", type=int, help="iteration cap")
    parser.add_argument("--rate-tol", dest="rate_tol", type=float, help="termination tolerance")
    parser.add_argument("--trajectory", action="store_true",
                        help="record per-iteration residual/objective trajectories")
    parser.add_argument("-o", "--output", help="CSV output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmrate",
        description="Mismatched-decoding rates over discretized AWGN channels with IQ imbalance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve one (eta, theta) point over an SNR grid")
    _add_common(p_solve)
    p_solve.set_defaults(func=cmd_solve)

    p_sweep = sub.add_parser("sweep", help="cross product of eta x theta x SNR")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_base = sub.add_parser("baseline", help="uniform-input rate only (mode lm-uniform)")
    _add_common(p_base, with_mode=False)
    p_base.set_defaults(func=cmd_baseline)

    p_verify = sub.add_parser("verify", help="run the seeded oracle agreement suite")
    p_verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
