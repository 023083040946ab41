"""Command-line front end.

Verbs: ``keyrate`` (measurement file -> JSON report), ``simulate`` (loss
sweep -> CSV), ``optimize`` (optimised parameters per loss -> CSV) and
``detuning`` (QBER map and beat-note penalty series -> CSV).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from datetime import datetime, timezone

import jsonschema
import numpy as np

from . import __version__
from .decoy_lp import InfeasibleLPError, estimate_bounds
from .formats import FormatError, load_document, measurement_from_document
from .optimizer import FREE_VARIABLES, OptimizationProblem, optimize
from .physics import (
    DEFAULT_QUADRATURE_POINTS,
    SystemModel,
    calibrated_model,
    detuning_map,
    drift_to_qber_series,
    loss_to_distance_km,
    simulate_measurements,
)
from .protocol import X_LABELS, ProtocolParameters, SecurityAnalysis, Variant, secure_key_rate
from .simplex import IterationLimitError

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4

# Below this total loss the detectors saturate and the model is not trusted.
SATURATION_LOSS_DB = 30.0
ANALYSES = [v.value for v in Variant]

# Default transmitter settings for simulations (the 30 dB operating point).
DEFAULT_PARAMS = {
    "s": 0.55, "u": 0.24, "v": 0.047, "w": 2e-4,
    "p_z_s": 0.85, "p_x_u": 0.01, "p_x_v": 0.093, "p_x_w": 0.047,
}
DEFAULT_N_TOTAL = 8.64e13

_MODEL_FIELDS = list(SystemModel.__dataclass_fields__)
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_total": {"type": "number", "exclusiveMinimum": 0},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in _MODEL_FIELDS},
        },
        "params": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in DEFAULT_PARAMS},
        },
    },
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".10g")


def _write_atomic(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _parse_losses(tokens) -> list[float]:
    """Numbers or inclusive ``start:stop:step`` ranges."""
    losses = []
    for tok in tokens or []:
        if ":" in tok:
            try:
                start, stop, step = (float(p) for p in tok.split(":"))
            except ValueError:
                raise argparse.ArgumentTypeError(f"bad loss range {tok!r}") from None
            if step <= 0 or stop < start:
                raise argparse.ArgumentTypeError(f"bad loss range {tok!r}")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            losses.extend(start + k * step for k in range(count))
        else:
            losses.append(float(tok))
    return losses


def _selected(name: str | None) -> list[Variant]:
    return list(Variant) if name in (None, "all") else [Variant(name)]


def _analysis(args, variant: Variant) -> SecurityAnalysis:
    return SecurityAnalysis(
        variant=variant,
        s_cut=args.s_cut,
        epsilon_0=args.epsilon0,
        relax_inconsistent=args.relax_inconsistent,
    )


def _load_config(path):
    if path is None:
        return {}
    doc = load_document(path)
    try:
        jsonschema.validate(doc, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"{where}: {exc.message}") from None
    return doc


def _model_and_params(args):
    config = _load_config(args.input)
    try:
        overrides = dict(config.get("model", {}))
        if args.clock_hz is not None:
            overrides["clock_hz"] = args.clock_hz
        overrides.pop("channel_loss_db_per_arm", None)
        model = calibrated_model(30.0, **overrides)
        params = ProtocolParameters(**{**DEFAULT_PARAMS, **config.get("params", {})})
    except (TypeError, ValueError) as exc:
        raise FormatError(str(exc)) from None
    return model, params, float(config.get("n_total", DEFAULT_N_TOTAL))


# --- verbs -------------------------------------------------------------------

def _analysis_entry(report, bounds) -> dict:
    def num(x):
        return None if not math.isfinite(x) else float(x)

    return {
        "rate_bps": report.rate_bps,
        "rate_per_clock": report.rate_per_clock,
        "raw_rate_per_clock": report.raw_rate_per_clock,
        "no_key": report.no_key,
        "y_x_11_lower": bounds.y_x_11_lower,
        "e_x_11_upper": bounds.e_x_11_upper,
        "y_z_11_lower": bounds.y_z_11_lower,
        "b_x_11_upper": num(bounds.b_x_11_upper),
        "q_z_11": report.q_z_11,
        "ec_leak": report.ec_leak,
        "delta": report.delta,
        "relaxation": {"yield": bounds.relaxation[0], "error": bounds.relaxation[1]},
    }


def cmd_keyrate(args) -> int:
    doc = load_document(args.input)
    if args.clock_hz is not None:
        doc = {**doc, "clock_hz": args.clock_hz}
    ms = measurement_from_document(doc)
    analyses = {}
    for variant in _selected(args.analysis):
        analysis = _analysis(args, variant)
        try:
            bounds = estimate_bounds(ms, analysis)
        except InfeasibleLPError as exc:
            raise CliError(
                f"{variant.value}: {exc} (the data admit no photon-number decomposition;"
                " --relax-inconsistent widens the constraints minimally)",
                EXIT_INFEASIBLE,
            ) from None
        analyses[variant.value] = _analysis_entry(secure_key_rate(ms, bounds, analysis), bounds)
    report = {
        "tool": "mdiqkd",
        "version": __version__,
        "generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "settings": {
            "s_cut": args.s_cut,
            "epsilon_0": args.epsilon0,
            "relax_inconsistent": args.relax_inconsistent,
        },
        "input": doc,
        "analyses": analyses,
    }
    _write_atomic(args.output, json.dumps(report, indent=2, allow_nan=False) + "\n")
    return EXIT_OK


def _state_columns():
    cols = ["q_z_ss", "e_z_ss"]
    pairs = [a + b for a in X_LABELS for b in X_LABELS]
    cols += [f"q_x_{p}" for p in pairs] + [f"e_x_{p}" for p in pairs]
    return cols


def cmd_simulate(args) -> int:
    losses = _parse_losses(args.losses)
    if not losses:
        raise CliError("no losses given", EXIT_SCHEMA)
    model, params, n_total = _model_and_params(args)
    variants = _selected(args.analysis)
    header = ["loss_db", "distance_km"] + [f"rate_bps_{v.value}" for v in variants]
    header += _state_columns() + ["saturation"]
    rows = []
    for loss in losses:
        if loss < 0:
            raise CliError(f"negative loss {loss}", EXIT_SCHEMA)
        ms = simulate_measurements(
            params, model.with_total_loss(loss), n_total, args.quadrature_points
        )
        rates = []
        for variant in variants:
            analysis = _analysis(args, variant)
            try:
                report = secure_key_rate(ms, estimate_bounds(ms, analysis), analysis)
                rates.append(report.rate_bps)
            except InfeasibleLPError:
                rates.append(float("nan"))
        states = [ms.z_gain, ms.z_qber, *ms.x_gain.ravel(), *ms.x_qber.ravel()]
        rows.append([loss, loss_to_distance_km(loss), *rates, *states,
                     loss < SATURATION_LOSS_DB])
    _write_atomic(args.output, _csv_text(header, rows))
    return EXIT_OK


def cmd_optimize(args) -> int:
    losses = _parse_losses(args.losses)
    if not losses:
        raise CliError("no losses given", EXIT_SCHEMA)
    if args.analysis == "all":
        raise CliError("optimize needs a single analysis", EXIT_SCHEMA)
    model, params, n_total = _model_and_params(args)
    analysis = _analysis(args, Variant(args.analysis or Variant.COMPOSABLE))
    header = ["loss_db", "distance_km", *FREE_VARIABLES, "w", "p_x_w",
              "rate_bps", "no_key", "evaluations"]
    rows = []
    for loss in losses:
        problem = OptimizationProblem(
            model.with_total_loss(loss), n_total, analysis, w=params.w,
            quadrature_points=args.quadrature_points,
        )
        result = optimize(problem, seeds=args.starts, seed=args.seed)
        x = result.candidate
        p_w = 1.0 - x[3] - x[4] - x[5]
        rows.append([loss, loss_to_distance_km(loss), *x, params.w, p_w,
                     result.rate_bps, result.no_key, result.evaluations])
    _write_atomic(args.output, _csv_text(header, rows))
    return EXIT_OK


def read_beat_note(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a (time_s, delta_f_hz) CSV; non-finite values are reported by line."""
    times, detunings = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"time_s", "delta_f_hz"} <= set(reader.fieldnames):
            raise FormatError(f"{path}: expected columns time_s, delta_f_hz")
        for row in reader:
            line = reader.line_num
            try:
                t, df = float(row["time_s"]), float(row["delta_f_hz"])
            except (TypeError, ValueError):
                raise FormatError(f"{path}: line {line}: not a number") from None
            if not (math.isfinite(t) and math.isfinite(df)):
                raise FormatError(f"{path}: line {line}: non-finite sample")
            times.append(t)
            detunings.append(df)
    return np.array(times), np.array(detunings)


def cmd_detuning(args) -> int:
    clocks = args.clock_hz if args.clock_hz else [1e9]
    if any(c <= 0 for c in clocks):
        raise CliError("clock rates must be positive", EXIT_SCHEMA)
    if args.steps < 2:
        raise CliError("need at least two detuning steps", EXIT_SCHEMA)
    detunings = np.linspace(args.detuning_min, args.detuning_max, args.steps)
    grid = detuning_map(clocks, detunings, capped=not args.raw)
    rows = [[c, df, grid[i, j]] for i, c in enumerate(clocks) for j, df in enumerate(detunings)]
    _write_atomic(args.output, _csv_text(["clock_hz", "delta_f_hz", "qber"], rows))
    if args.beat_note is not None:
        times, series = read_beat_note(args.beat_note)
        penalty = drift_to_qber_series(series, clocks[0])
        _write_atomic(
            args.series_output,
            _csv_text(["time_s", "qber_penalty"], zip(times, penalty)),
        )
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", help="output file (default: stdout)")
    common.add_argument("--analysis", choices=ANALYSES + ["all"],
                        help="default: all (composable for optimize)")
    common.add_argument("--seed", type=int, default=20240101,
                        help="seed for the optimizer's starting points")
    common.add_argument("--quadrature-points", type=int, default=DEFAULT_QUADRATURE_POINTS)
    common.add_argument("--s-cut", type=int, default=15)
    common.add_argument("--epsilon0", type=float, default=4e-13)
    common.add_argument("--relax-inconsistent", action="store_true",
                        help="widen inconsistent constraint systems minimally instead of failing")

    parser = argparse.ArgumentParser(
        prog="mdiqkd", description="Decoy-state MDI-QKD key rates and simulations."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("keyrate", parents=[common], help="key rates from a measurement file")
    p.add_argument("--input", "-i", required=True, help="measurement file (JSON)")
    p.add_argument("--clock-hz", type=float, help="override the file's clock rate")
    p.set_defaults(func=cmd_keyrate)

    p = sub.add_parser("simulate", parents=[common], help="simulated loss sweep (CSV)")
    p.add_argument("--input", "-i", help="model/parameter config (JSON)")
    p.add_argument("--losses", nargs="+", default=["30:60:2"],
                   help="total losses in dB; START:STOP:STEP ranges allowed")
    p.add_argument("--clock-hz", type=float)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", parents=[common], help="optimised parameters per loss (CSV)")
    p.add_argument("--input", "-i", help="model/parameter config (JSON)")
    p.add_argument("--losses", nargs="+", required=True)
    p.add_argument("--starts", type=int, default=8, help="number of local searches per loss")
    p.add_argument("--clock-hz", type=float)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("detuning", parents=[common], help="detuning QBER map (CSV)")
    p.add_argument("--clock-hz", type=float, nargs="+", help="clock rates (default 1e9)")
    p.add_argument("--detuning-min", type=float, default=-3e9)
    p.add_argument("--detuning-max", type=float, default=3e9)
    p.add_argument("--steps", type=int, default=601)
    p.add_argument("--raw", action="store_true", help="do not cap the QBER at 50%%")
    p.add_argument("--beat-note", help="CSV with columns time_s, delta_f_hz")
    p.add_argument("--series-output", help="penalty series output (default: stdout)")
    p.set_defaults(func=cmd_detuning)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mdiqkd: {exc}", file=sys.stderr)
        return exc.code
    except (FormatError, FileNotFoundError) as exc:
        print(f"mdiqkd: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except InfeasibleLPError as exc:
        print(f"mdiqkd: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (IterationLimitError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"mdiqkd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
