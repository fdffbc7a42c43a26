"""Rolling one-step evaluation: configs, the run loop, metrics, and grids.

A run is: fit a scaler and a forecaster on the training window, seed
the score buffer from the calibration window, then walk the test window
one step at a time forming a band before each observation arrives.
Everything numeric happens in standardized units; records and metrics
are reported in the original units of the data.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import conformal, datagen
from .errors import ConfigError, NumericError
from .fileio import atomic_write_text, format_float
from .forecasters import Forecaster, make_forecaster
from .series import (
    SplitSpec,
    StandardScaler,
    TimeSeries,
    default_lag,
    fit_scaler,
    load_series_csv,
)

METHODS = ("none", "split", "aci", "agaci")
FORECASTERS = ("persistence", "ar", "segmented_ar", "replay")
BANDS_CSV_HEADER = "index,y,y_hat,lower,upper,alpha_t,covered"

DEFAULT_GAMMA_GRID = (1e-4, 1e-3, 1e-2)


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one evaluation run.

    ``dataset`` is "toy", "lorenz" (generated on the fly with this
    config's seed) or a path to a series CSV. ``lag`` defaults by
    ``frequency`` when unset; the autoregression order defaults to
    min(lag, train length / 4).
    """

    dataset: str
    forecaster: str = "ar"
    method: str = "aci"
    name: str | None = None
    forecaster_params: dict = field(default_factory=dict)
    alpha: float = 0.1
    gamma: float = 0.01
    gamma_grid: tuple[float, ...] = DEFAULT_GAMMA_GRID
    eta: float = 1.0
    weight_floor: float = 1e-6
    aggregation: str = "ewa"
    cap_factor: float = 2.0
    lag: int | None = None
    frequency: str | None = None
    split: tuple[float, float, float] = (0.5, 0.2, 0.3)
    seed: int = 0
    buffer_mode: str = "rolling"

    def __post_init__(self) -> None:
        if not self.dataset:
            raise ConfigError("config needs a dataset")
        if self.forecaster not in FORECASTERS:
            raise ConfigError(
                f"forecaster must be one of {FORECASTERS}, got {self.forecaster!r}"
            )
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        object.__setattr__(self, "gamma_grid", tuple(float(g) for g in self.gamma_grid))
        if self.method == "agaci" and not self.gamma_grid:
            raise ConfigError("agaci needs a nonempty gamma grid")
        object.__setattr__(self, "split", tuple(float(f) for f in self.split))
        if len(self.split) != 3 or any(f <= 0 for f in self.split):
            raise ConfigError(f"split must be three positive fractions, got {self.split}")
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split}")
        if self.buffer_mode not in ("rolling", "frozen"):
            raise ConfigError(
                f"buffer_mode must be 'rolling' or 'frozen', got {self.buffer_mode!r}"
            )
        if self.aggregation not in ("ewa", "fixed"):
            raise ConfigError(
                f"aggregation must be 'ewa' or 'fixed', got {self.aggregation!r}"
            )
        if self.lag is not None and self.lag < 1:
            raise ConfigError(f"lag must be >= 1, got {self.lag}")
        if not isinstance(self.forecaster_params, dict):
            raise ConfigError("forecaster_params must be an object")

    @property
    def run_name(self) -> str:
        if self.name:
            return self.name
        return f"{dataset_label(self.dataset)}-{self.forecaster}-{self.method}"


_RUN_CONFIG_KEYS = {
    "dataset", "forecaster", "method", "name", "forecaster_params", "alpha",
    "gamma", "gamma_grid", "eta", "weight_floor", "aggregation", "cap_factor",
    "lag", "frequency", "split", "seed", "buffer_mode",
}

_FORECASTER_PARAM_KEYS = {"order", "refit_every", "drift", "threshold", "warmup"}


def run_config_from_dict(payload: dict) -> RunConfig:
    """Build a RunConfig from a parsed JSON object. Unknown keys are an error."""
    if not isinstance(payload, dict):
        raise ConfigError("run config must be a JSON object")
    unknown = sorted(set(payload) - _RUN_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys in run config: {', '.join(unknown)}")
    if "dataset" not in payload:
        raise ConfigError("run config is missing 'dataset'")
    params = payload.get("forecaster_params", {})
    if not isinstance(params, dict):
        raise ConfigError("forecaster_params must be an object")
    bad = sorted(set(params) - _FORECASTER_PARAM_KEYS)
    if bad:
        raise ConfigError(f"unknown keys in forecaster_params: {', '.join(bad)}")
    kwargs = dict(payload)
    for key in ("gamma_grid", "split"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return RunConfig(**kwargs)


def dataset_label(dataset: str) -> str:
    if dataset in ("toy", "lorenz"):
        return dataset
    return Path(dataset).stem


def load_dataset(config: RunConfig) -> TimeSeries:
    """Materialize the configured dataset (builtin generators use the run seed)."""
    if config.dataset == "toy":
        series, _ = datagen.generate_toy(datagen.default_toy_spec(seed=config.seed))
        return series
    if config.dataset == "lorenz":
        return datagen.generate_lorenz(datagen.LorenzSpec(seed=config.seed))
    return load_series_csv(config.dataset)


@dataclass(frozen=True)
class ForecastRecord:
    """One test step, in both unit systems.

    ``alpha_t`` is the working miscoverage level the band was formed at
    (the nominal level for split, the weighted effective level for
    aggregated runs); it is None when no band was formed.
    """

    index: int
    y: float
    y_hat: float
    lower: float | None
    upper: float | None
    alpha_t: float | None
    covered: bool | None
    y_scaled: float
    y_hat_scaled: float
    lower_scaled: float | None
    upper_scaled: float | None

    @property
    def width(self) -> float | None:
        if self.lower is None or self.upper is None:
            return None
        return self.upper - self.lower


@dataclass(frozen=True)
class RunReport:
    """Metrics plus the full per-step record table for one run."""

    config: RunConfig
    rmse: float
    coverage: float | None
    median_width: float | None
    n_infinite: int
    n_zero_width: int
    n_steps: int
    alpha_final: float | None
    records: tuple[ForecastRecord, ...]

    @property
    def name(self) -> str:
        return self.config.run_name


def compute_metrics(records: Sequence[ForecastRecord]) -> dict:
    """Metric fields over a record table.

    The width statistic is the lower median of the finite widths;
    infinite bands are counted separately so one of them cannot poison
    the number. Runs without bands get None for coverage and width.
    """
    if not records:
        raise ConfigError("cannot compute metrics over zero records")
    errors = np.array([r.y - r.y_hat for r in records])
    rmse = float(np.sqrt(np.mean(errors**2)))
    banded = [r for r in records if r.lower is not None]
    if not banded:
        return {
            "rmse": rmse,
            "coverage": None,
            "median_width": None,
            "n_infinite": 0,
            "n_zero_width": 0,
            "n_steps": len(records),
        }
    widths = [r.width for r in banded]
    finite = sorted(w for w in widths if math.isfinite(w))
    n_infinite = sum(1 for w in widths if math.isinf(w))
    if finite:
        median_width = finite[(len(finite) - 1) // 2]
    else:
        median_width = math.inf
    return {
        "rmse": rmse,
        "coverage": sum(1 for r in banded if r.covered) / len(banded),
        "median_width": median_width,
        "n_infinite": n_infinite,
        "n_zero_width": sum(1 for w in widths if w == 0.0),
        "n_steps": len(records),
    }


def _resolve_lag(config: RunConfig) -> int:
    return config.lag if config.lag is not None else default_lag(config.frequency)


def _default_forecaster_factory(config: RunConfig):
    def build(scaler: StandardScaler, series: TimeSeries, split: SplitSpec) -> Forecaster:
        if config.forecaster == "replay":
            raise ConfigError(
                "forecaster 'replay' only runs through the wrap command with a trace file"
            )
        params = dict(config.forecaster_params)
        if config.forecaster in ("ar", "segmented_ar") and "order" not in params:
            params["order"] = max(1, min(_resolve_lag(config), split.train_end // 4))
        return make_forecaster(config.forecaster, **params)

    return build


def run_rolling(
    config: RunConfig,
    series: TimeSeries | None = None,
    forecaster_factory: Callable[[StandardScaler, TimeSeries, SplitSpec], Forecaster]
    | None = None,
) -> RunReport:
    """Execute one full evaluation run.

    ``series`` and ``forecaster_factory`` exist for callers that bring
    their own data or wrap external predictions; both default to what
    the config describes.
    """
    if series is None:
        series = load_dataset(config)
    split = SplitSpec.from_fractions(len(series), config.split)
    split.check_length(len(series))

    try:
        scaler = fit_scaler(series.values, 0, split.train_end)
    except NumericError as exc:
        raise NumericError(f"while fitting the scaler on the training window: {exc}") from None
    z = scaler.transform(series.values)

    factory = forecaster_factory or _default_forecaster_factory(config)
    forecaster = factory(scaler, series, split)
    try:
        forecaster.fit(z[: split.train_end])
    except NumericError as exc:
        raise NumericError(f"while fitting the forecaster on the training window: {exc}") from None

    try:
        buffer = conformal.ScoreBuffer(capacity=split.cal_end - split.train_end)
    except ConfigError:
        raise ConfigError(
            f"calibration window [{split.train_end}, {split.cal_end}) is empty; "
            "widen the calibration fraction"
        ) from None
    for t in range(split.train_end, split.cal_end):
        y_hat = forecaster.predict_one(z[:t])
        buffer.append(conformal.residual_score(z[t], y_hat))
        forecaster.observe(z[t])

    state: conformal.AciState | conformal.AgAciState | None
    if config.method in ("split", "aci"):
        gamma = config.gamma if config.method == "aci" else 0.0
        state = conformal.AciState(alpha_nominal=config.alpha, gamma=gamma)
    elif config.method == "agaci":
        state = conformal.AgAciState.from_gammas(
            config.alpha,
            config.gamma_grid,
            eta=config.eta,
            weight_floor=config.weight_floor,
            mode=config.aggregation,
            infinite_cap_factor=config.cap_factor,
        )
    else:
        state = None

    records: list[ForecastRecord] = []
    for t in range(split.cal_end, split.test_end):
        y_hat_scaled = forecaster.predict_one(z[:t])
        y_scaled = float(z[t])
        interval = None
        alpha_used = None
        if isinstance(state, conformal.AciState):
            interval = conformal.aci_step(state, buffer, y_hat_scaled)
            alpha_used = state.alpha_t
            state = conformal.aci_update(state, y_scaled, interval)
        elif isinstance(state, conformal.AgAciState):
            interval, per_expert = conformal.agaci_step(state, buffer, y_hat_scaled)
            alpha_used = 1.0 - interval.level
            state = conformal.agaci_update(state, y_scaled, y_hat_scaled, per_expert)
        if config.buffer_mode == "rolling":
            buffer.append(conformal.residual_score(y_scaled, y_hat_scaled))
        forecaster.observe(y_scaled)

        if interval is None:
            lower = upper = lower_scaled = upper_scaled = None
            covered = None
        else:
            lower_scaled, upper_scaled = interval.lower, interval.upper
            lower = float(scaler.inverse_transform(lower_scaled))
            upper = float(scaler.inverse_transform(upper_scaled))
            covered = interval.covers(y_scaled)
        records.append(
            ForecastRecord(
                index=series.start_index + t,
                y=float(series.values[t]),
                y_hat=float(scaler.inverse_transform(y_hat_scaled)),
                lower=lower,
                upper=upper,
                alpha_t=alpha_used,
                covered=covered,
                y_scaled=y_scaled,
                y_hat_scaled=float(y_hat_scaled),
                lower_scaled=lower_scaled,
                upper_scaled=upper_scaled,
            )
        )

    if not records:
        raise ConfigError(
            f"test window [{split.cal_end}, {split.test_end}) is empty; "
            "widen the test fraction"
        )
    metrics = compute_metrics(records)
    alpha_final = state.alpha_t if isinstance(state, conformal.AciState) else None
    return RunReport(
        config=config,
        rmse=metrics["rmse"],
        coverage=metrics["coverage"],
        median_width=metrics["median_width"],
        n_infinite=metrics["n_infinite"],
        n_zero_width=metrics["n_zero_width"],
        n_steps=metrics["n_steps"],
        alpha_final=alpha_final,
        records=tuple(records),
    )


@dataclass(frozen=True)
class RunFailure:
    """A grid cell whose run raised instead of reporting."""

    config: RunConfig
    kind: str
    error: str

    @property
    def name(self) -> str:
        return self.config.run_name


def _run_one(config: RunConfig) -> RunReport | RunFailure:
    try:
        return run_rolling(config)
    except Exception as exc:  # noqa: BLE001 - grid cells must not abort siblings
        return RunFailure(config=config, kind=type(exc).__name__, error=str(exc))


def grid_run(configs: Sequence[RunConfig], jobs: int = 1) -> list[RunReport | RunFailure]:
    """Run many configs independently; failures become RunFailure cells."""
    if not configs:
        raise ConfigError("grid needs at least one config")
    if jobs < 1:
        raise ConfigError(f"jobs must be >= 1, got {jobs}")
    if jobs == 1 or len(configs) == 1:
        return [_run_one(c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
        return list(pool.map(_run_one, configs))


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        if math.isnan(x):
            return "nan"
        return "inf" if x > 0 else "-inf"
    return x


def _json_number(x):
    if isinstance(x, str):
        return float(x)
    return x


def report_payload(result: RunReport | RunFailure) -> dict:
    """The metrics JSON object for one run (or one failed grid cell)."""
    config = result.config
    payload = {
        "name": result.name,
        "dataset": dataset_label(config.dataset),
        "forecaster": config.forecaster,
        "method": config.method,
        "alpha": config.alpha,
        "gamma": config.gamma,
        "gamma_grid": list(config.gamma_grid),
        "split": list(config.split),
        "seed": config.seed,
        "buffer_mode": config.buffer_mode,
    }
    if isinstance(result, RunFailure):
        payload["status"] = "failed"
        payload["error"] = f"{result.kind}: {result.error}"
        return payload
    payload["status"] = "ok"
    payload["alpha_final"] = result.alpha_final
    payload["metrics"] = {
        "rmse": result.rmse,
        "coverage": result.coverage,
        "median_width": _json_safe(result.median_width),
        "n_infinite": result.n_infinite,
        "n_zero_width": result.n_zero_width,
        "n_steps": result.n_steps,
    }
    return payload


def write_metrics_json(path: str | Path, result: RunReport | RunFailure) -> None:
    atomic_write_text(path, json.dumps(report_payload(result), indent=2) + "\n")


def load_metrics_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as handle:
        payload = json.load(handle)
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: metrics file must hold a JSON object")
    for key in ("dataset", "forecaster", "method", "status"):
        if key not in payload:
            raise ConfigError(f"{path}: metrics file is missing {key!r}")
    if payload["status"] == "ok":
        metrics = payload.get("metrics")
        if not isinstance(metrics, dict):
            raise ConfigError(f"{path}: metrics file is missing the 'metrics' object")
        if "median_width" in metrics:
            metrics["median_width"] = _json_number(metrics["median_width"])
    return payload


def _csv_field(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return format_float(x)
    return str(x)


def write_bands_csv(path: str | Path, records: Sequence[ForecastRecord]) -> None:
    """Per-step band table in original units, one row per test step."""
    lines = [BANDS_CSV_HEADER]
    for r in records:
        fields = (r.index, r.y, r.y_hat, r.lower, r.upper, r.alpha_t, r.covered)
        lines.append(",".join(_csv_field(f) for f in fields))
    atomic_write_text(path, "\n".join(lines) + "\n")


def comparison_rows(payloads: Sequence[dict]) -> list[dict]:
    """Normalize metrics payloads into sorted comparison rows.

    Rows are keyed (dataset, forecaster, method); exact duplicates are
    collapsed, conflicting duplicates rejected.
    """
    by_key: dict[tuple[str, str, str], dict] = {}
    for p in payloads:
        key = (str(p["dataset"]), str(p["forecaster"]), str(p["method"]))
        row = {
            "dataset": key[0],
            "forecaster": key[1],
            "method": key[2],
            "status": p["status"],
            "alpha": p.get("alpha"),
        }
        if p["status"] == "ok":
            row.update(p["metrics"])
        else:
            row["error"] = p.get("error", "")
        if key in by_key:
            if by_key[key] != row:
                raise ConfigError(
                    f"conflicting results for dataset={key[0]} forecaster={key[1]} "
                    f"method={key[2]}"
                )
            continue
        by_key[key] = row
    return [by_key[k] for k in sorted(by_key)]


def _fmt_cell(row: dict | None, field_name: str) -> str:
    if row is None or row.get("status") != "ok":
        return "—"
    value = row.get(field_name)
    if value is None:
        return "—"
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return f"{value:.3f}"


def render_comparison_table(rows: Sequence[dict]) -> str:
    """Aligned text table: datasets down, methods across, one column group
    per metric (Coverage@90% and median width)."""
    if not rows:
        raise ConfigError("no rows to render")
    methods = sorted({r["method"] for r in rows})
    groups = sorted({(r["dataset"], r["forecaster"]) for r in rows})
    cells = {(r["dataset"], r["forecaster"], r["method"]): r for r in rows}
    alphas = {r.get("alpha") for r in rows if r.get("alpha") is not None}
    if len(alphas) == 1:
        coverage_title = f"Coverage@{100 * (1 - alphas.pop()):g}%"
    else:
        coverage_title = "Coverage"

    header = ["dataset", "forecaster"]
    for m in methods:
        header.append(f"{m} cov")
    for m in methods:
        header.append(f"{m} width")
    table = [header]
    for dataset, forecaster in groups:
        line = [dataset, forecaster]
        for m in methods:
            line.append(_fmt_cell(cells.get((dataset, forecaster, m)), "coverage"))
        for m in methods:
            line.append(_fmt_cell(cells.get((dataset, forecaster, m)), "median_width"))
        table.append(line)

    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    n_cov = len(methods)
    cov_span = sum(widths[2 : 2 + n_cov]) + 2 * (n_cov - 1)
    if cov_span < len(coverage_title):
        widths[1 + n_cov] += len(coverage_title) - cov_span
        cov_span = len(coverage_title)
    lead = widths[0] + widths[1] + 4
    out = [" " * lead + coverage_title.ljust(cov_span + 2) + "Median width"]
    for row in table:
        out.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(out) + "\n"


def comparison_csv(rows: Sequence[dict]) -> str:
    """Machine-readable comparison table, one row per run."""
    columns = (
        "dataset", "forecaster", "method", "status", "rmse", "coverage",
        "median_width", "n_infinite", "n_zero_width", "n_steps",
    )
    lines = [",".join(columns)]
    for row in rows:
        fields = []
        for col in columns:
            value = row.get(col)
            if value is None:
                fields.append("")
            elif isinstance(value, float):
                fields.append(format_float(value))
            else:
                fields.append(str(value))
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"
