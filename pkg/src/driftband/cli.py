"""Command-line interface: generate data, run evaluations, wrap traces, report.

stdout is for humans; every machine-readable byte goes to files, written
atomically. Exit codes: 0 ok, 2 config or parse problem, 3 I/O problem,
4 numeric failure, 5 trace misalignment.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datagen, evaluate
from .errors import AlignmentError, ConfigError, NumericError
from .fileio import atomic_write_text
from .forecasters import ExternalForecastTrace, ReplayForecaster
from .series import load_series_csv, write_series_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_ALIGNMENT = 5


def _load_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def _out_dir(args, payload: dict | None = None) -> Path:
    out = args.out
    if out is None and payload is not None:
        out = payload.get("out")
    out_dir = Path(out) if out else Path(".")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _parse_run_config(path: Path, seed_override: int | None) -> tuple[evaluate.RunConfig, dict]:
    payload = _load_json(path)
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: run config must be a JSON object")
    payload = dict(payload)
    out = payload.pop("out", None)
    config = evaluate.run_config_from_dict(payload)
    if seed_override is not None:
        config = replace(config, seed=seed_override)
    return config, {"out": out}


def _print_run_line(result, prefix: str = "") -> None:
    if isinstance(result, evaluate.RunFailure):
        print(f"{prefix}failed: {result.kind}: {result.error}")
        return
    parts = []
    if result.coverage is not None:
        parts.append(f"coverage={result.coverage:.3f}")
        width = result.median_width
        parts.append(f"width={width:.3f}" if width is not None else "width=inf")
    parts.append(f"rmse={result.rmse:.3f}")
    print(prefix + " ".join(parts))


def _write_run_outputs(out_dir: Path, result) -> None:
    evaluate.write_metrics_json(out_dir / f"{result.name}.metrics.json", result)
    if isinstance(result, evaluate.RunReport):
        evaluate.write_bands_csv(out_dir / f"{result.name}.bands.csv", result.records)


def cmd_generate(args) -> int:
    spec_arg = str(args.spec)
    if spec_arg in ("toy", "lorenz"):
        spec = datagen.generator_spec_from_json({"kind": spec_arg})
        name = spec_arg
    else:
        path = Path(spec_arg)
        spec = datagen.generator_spec_from_json(_load_json(path))
        name = path.stem
    out_dir = _out_dir(args)
    series_path = out_dir / f"{name}.csv"
    if isinstance(spec, datagen.SwitchingArSpec):
        series, regimes = datagen.generate_toy(spec)
        write_series_csv(series_path, series)
        datagen.write_regimes_csv(out_dir / f"{name}.regimes.csv", regimes)
        observed = int(np.unique(regimes).size)
        print(f"generated {name}: T={len(series)} regimes={observed} -> {series_path}")
    else:
        series = datagen.generate_lorenz(spec)
        write_series_csv(series_path, series)
        print(f"generated {name}: T={len(series)} -> {series_path}")
    return EXIT_OK


def cmd_run(args) -> int:
    configs = []
    outs = []
    for config_path in args.config:
        config, extra = _parse_run_config(Path(config_path), args.seed)
        configs.append(config)
        outs.append(extra["out"])
    if len(configs) == 1:
        out_dir = _out_dir(args, {"out": outs[0]})
        report = evaluate.run_rolling(configs[0])
        _write_run_outputs(out_dir, report)
        _print_run_line(report)
        return EXIT_OK
    out_dir = _out_dir(args, {"out": next((o for o in outs if o), None)})
    results = evaluate.grid_run(configs, jobs=args.jobs)
    for result in results:
        _write_run_outputs(out_dir, result)
        _print_run_line(result, prefix=f"{result.name}: ")
    return EXIT_OK


def cmd_wrap(args) -> int:
    config, extra = _parse_run_config(Path(args.config), args.seed)
    out_dir = _out_dir(args, extra)
    series = load_series_csv(Path(args.series))
    trace = ExternalForecastTrace.from_csv(Path(args.trace))
    config = replace(config, dataset=str(args.series), forecaster="replay")

    def factory(scaler, series_, split):
        trace.validate_against(
            series_,
            series_.start_index + split.train_end,
            series_.start_index + split.test_end,
        )
        return ReplayForecaster(trace, scaler, series_start=series_.start_index)

    report = evaluate.run_rolling(config, series=series, forecaster_factory=factory)
    _write_run_outputs(out_dir, report)
    _print_run_line(report)
    return EXIT_OK


def cmd_report(args) -> int:
    payloads = [evaluate.load_metrics_json(Path(p)) for p in args.inputs]
    rows = evaluate.comparison_rows(payloads)
    out_dir = _out_dir(args)
    table = evaluate.render_comparison_table(rows)
    atomic_write_text(out_dir / "report.csv", evaluate.comparison_csv(rows))
    atomic_write_text(out_dir / "report.txt", table)
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftband",
        description="Online conformal prediction bands around one-step forecasters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic series CSV (+ regime sidecar)")
    p_gen.add_argument("--spec", required=True,
                       help="generator spec JSON, or builtin name 'toy' / 'lorenz'")
    p_gen.add_argument("--out", default=None, help="output directory (default: .)")
    p_gen.set_defaults(func=cmd_generate)

    p_run = sub.add_parser("run", help="evaluate one or more run configs")
    p_run.add_argument("--config", required=True, nargs="+",
                       help="run config JSON file(s); several files form a grid")
    p_run.add_argument("--out", default=None, help="output directory (default: config 'out' or .)")
    p_run.add_argument("--seed", type=int, default=None, help="override every config's seed")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel workers for grids")
    p_run.set_defaults(func=cmd_run)

    p_wrap = sub.add_parser("wrap", help="calibrate bands around an external forecast trace")
    p_wrap.add_argument("--trace", required=True, help="trace CSV (index,y_true,y_hat)")
    p_wrap.add_argument("--series", required=True, help="series CSV the trace was made from")
    p_wrap.add_argument("--config", required=True, help="run config JSON file")
    p_wrap.add_argument("--out", default=None, help="output directory (default: config 'out' or .)")
    p_wrap.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p_wrap.set_defaults(func=cmd_wrap)

    p_rep = sub.add_parser("report", help="combine metrics JSONs into a comparison table")
    p_rep.add_argument("--inputs", required=True, nargs="+", help="metrics JSON files")
    p_rep.add_argument("--out", default=None, help="output directory (default: .)")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON at byte offset {exc.pos}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ALIGNMENT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
