"""One-step-ahead forecasters behind a single small contract.

A forecaster is fit once on a training window, asked for a point
prediction of the next value given the full observed history so far,
and then told what actually happened. The calibration layer never looks
inside; anything honoring ``fit`` / ``predict_one`` / ``observe`` can
be wrapped, including a replay of predictions made by an external
system.

All forecasters operate in standardized units; rescaling to the
original data units happens in the evaluation layer.
"""

from __future__ import annotations

import csv
import math
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, NumericError
from .fileio import atomic_write_text, format_float
from .series import TimeSeries, lag_embed

TRACE_CSV_HEADER = ("index", "y_true", "y_hat")


class Forecaster(ABC):
    """Contract between a point forecaster and the calibration loop.

    ``predict_one`` receives the entire history prefix observed so far
    (training window included), oldest first. Implementations may keep
    their own internal window; the passed history is authoritative for
    the prediction itself.
    """

    @abstractmethod
    def fit(self, window) -> None:
        """Train on an initial window of observations."""

    @abstractmethod
    def predict_one(self, history) -> float:
        """Point prediction for the value following ``history``."""

    def observe(self, y: float) -> None:
        """Ingest the realized value for the most recent prediction."""


class PersistenceForecaster(Forecaster):
    """Predicts the most recent observation. The no-skill baseline."""

    def fit(self, window) -> None:
        if len(window) < 1:
            raise NumericError("persistence needs at least one observation to fit")

    def predict_one(self, history) -> float:
        if len(history) < 1:
            raise NumericError("persistence needs a non-empty history")
        return float(history[-1])


@dataclass(frozen=True)
class ArModel:
    """Fitted autoregression y_t = intercept + coef . (p previous values).

    ``coef[j]`` multiplies the j-th oldest of the p lags, so prediction
    takes the last p history values in natural (oldest first) order.
    """

    coef: np.ndarray
    intercept: float
    order: int

    def __post_init__(self) -> None:
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != (self.order,):
            raise ConfigError(f"expected {self.order} coefficients, got shape {coef.shape}")
        coef.setflags(write=False)
        object.__setattr__(self, "coef", coef)

    def predict(self, history) -> float:
        history = np.asarray(history, dtype=float)
        if history.size < self.order:
            raise NumericError(
                f"history of length {history.size} is shorter than the model order "
                f"{self.order}"
            )
        return float(self.intercept + self.coef @ history[-self.order :])


def ar_fit(window, order: int) -> ArModel:
    """Least-squares autoregression of the given order on a window.

    The design is centered before solving, and the minimum-norm solution
    is taken, so rank-deficient windows (a constant window being the
    extreme case) yield zero coefficients and an intercept equal to the
    window mean instead of failing.
    """
    if order < 1:
        raise ConfigError(f"autoregression order must be >= 1, got {order}")
    window = np.asarray(window, dtype=float)
    if window.size < order + 1:
        raise NumericError(
            f"window of length {window.size} cannot fit an order-{order} autoregression"
        )
    lagged = lag_embed(window, order)
    x_mean = lagged.features.mean(axis=0)
    y_mean = lagged.targets.mean()
    coef, *_ = np.linalg.lstsq(lagged.features - x_mean, lagged.targets - y_mean, rcond=None)
    intercept = float(y_mean - x_mean @ coef)
    return ArModel(coef=coef, intercept=intercept, order=order)


class ArForecaster(Forecaster):
    """Autoregression refit periodically on a rolling window.

    The window length is pinned to the training window length at fit
    time; the model is refit every ``refit_every`` observations.
    """

    def __init__(self, order: int, refit_every: int = 25) -> None:
        if order < 1:
            raise ConfigError(f"autoregression order must be >= 1, got {order}")
        if refit_every < 1:
            raise ConfigError(f"refit interval must be >= 1, got {refit_every}")
        self.order = int(order)
        self.refit_every = int(refit_every)
        self._window: deque[float] | None = None
        self._model: ArModel | None = None
        self._since_refit = 0

    def fit(self, window) -> None:
        arr = np.asarray(window, dtype=float)
        self._window = deque(arr.tolist(), maxlen=arr.size)
        self._model = ar_fit(arr, self.order)
        self._since_refit = 0

    def predict_one(self, history) -> float:
        if self._model is None:
            raise NumericError("forecaster is not fitted")
        return self._model.predict(history)

    def observe(self, y: float) -> None:
        if self._window is None:
            raise NumericError("forecaster is not fitted")
        self._window.append(float(y))
        self._since_refit += 1
        if self._since_refit >= self.refit_every:
            self._refit()

    def _fit_window(self) -> np.ndarray:
        return np.asarray(self._window, dtype=float)

    def _refit(self) -> None:
        window = self._fit_window()
        if window.size >= self.order + 1:
            self._model = ar_fit(window, self.order)
            self._since_refit = 0


class CusumDetector:
    """Two-sided CUSUM on standardized values with a warm-up reference.

    The first ``warmup`` updates only collect reference statistics; each
    later value is standardized against them and accumulated into
    one-sided sums S+ and S- with the usual drift allowance. Crossing
    the threshold raises an alarm and resets the detector into a fresh
    warm-up, so successive alarms are always separated by a re-learned
    reference.
    """

    def __init__(self, drift: float = 0.5, threshold: float = 5.0, warmup: int = 50) -> None:
        if drift < 0:
            raise ConfigError(f"drift allowance must be non-negative, got {drift}")
        if threshold <= 0:
            raise ConfigError(f"alarm threshold must be positive, got {threshold}")
        # Shorter references make the plug-in std too noisy to standardize against.
        if warmup < 30:
            raise ConfigError(f"warm-up must be at least 30 samples, got {warmup}")
        self.drift = float(drift)
        self.threshold = float(threshold)
        self.warmup = int(warmup)
        self.reset()

    def reset(self) -> None:
        self._samples: list[float] = []
        self._mean: float | None = None
        self._std: float | None = None
        self._pos = 0.0
        self._neg = 0.0

    @property
    def in_warmup(self) -> bool:
        return self._mean is None

    @property
    def sums(self) -> tuple[float, float]:
        return self._pos, self._neg

    def update(self, value: float) -> bool:
        value = float(value)
        if not math.isfinite(value):
            raise NumericError(f"detector fed a non-finite value: {value}")
        if self._mean is None:
            self._samples.append(value)
            if len(self._samples) >= self.warmup:
                arr = np.asarray(self._samples, dtype=float)
                std = float(arr.std(ddof=1))
                if std == 0:
                    raise NumericError("degenerate warm-up: reference std is 0")
                self._mean = float(arr.mean())
                self._std = std
                self._samples = []
            return False
        z = (value - self._mean) / self._std
        self._pos = max(0.0, self._pos + z - self.drift)
        self._neg = max(0.0, self._neg - z - self.drift)
        if max(self._pos, self._neg) > self.threshold:
            self.reset()
            return True
        return False


class SegmentedArForecaster(ArForecaster):
    """Autoregression that restarts its fit window on detected breaks.

    One-step residuals feed a CUSUM detector; an alarm truncates the fit
    window to the observation that raised it, on the view that older
    data came from a different regime. Until the new segment has
    ``order + 2`` points the forecaster falls back to persistence, then
    refits eagerly. With an infinite threshold this reduces exactly to
    the plain rolling autoregression.
    """

    def __init__(
        self,
        order: int,
        refit_every: int = 25,
        drift: float = 0.5,
        threshold: float = 5.0,
        warmup: int = 50,
    ) -> None:
        super().__init__(order, refit_every)
        self.detector = CusumDetector(drift=drift, threshold=threshold, warmup=warmup)
        self._segment_len = 0
        self._last_pred: float | None = None

    def fit(self, window) -> None:
        super().fit(window)
        self.detector.reset()
        self._segment_len = len(self._window)  # type: ignore[arg-type]
        self._last_pred = None

    def predict_one(self, history) -> float:
        if self._window is None:
            raise NumericError("forecaster is not fitted")
        if self._model is None:
            if len(history) < 1:
                raise NumericError("persistence fallback needs a non-empty history")
            pred = float(history[-1])
        else:
            pred = self._model.predict(history)
        self._last_pred = pred
        return pred

    def observe(self, y: float) -> None:
        if self._window is None:
            raise NumericError("forecaster is not fitted")
        y = float(y)
        alarm = False
        if self._last_pred is not None:
            alarm = self.detector.update(y - self._last_pred)
            self._last_pred = None
        self._window.append(y)
        if alarm:
            self._segment_len = 1
            self._model = None
            self._since_refit = 0
            return
        self._segment_len += 1
        self._since_refit += 1
        if self._model is None:
            if self._segment_len >= self.order + 2:
                self._refit()
        elif self._since_refit >= self.refit_every:
            self._refit()

    def _fit_window(self) -> np.ndarray:
        window = np.asarray(self._window, dtype=float)
        take = min(self._segment_len, window.size)
        return window[window.size - take :]


@dataclass(frozen=True)
class ExternalForecastTrace:
    """Predictions produced outside this package, aligned by series index.

    Rows must cover a contiguous index range. ``y_true`` is carried so a
    wrap run can prove the trace really belongs to the series it is
    being calibrated against.
    """

    indices: np.ndarray
    y_true: np.ndarray
    y_hat: np.ndarray

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices, dtype=int)
        y_true = np.asarray(self.y_true, dtype=float)
        y_hat = np.asarray(self.y_hat, dtype=float)
        if not (indices.size == y_true.size == y_hat.size):
            raise ConfigError("trace columns must have equal length")
        if indices.size < 1:
            raise ConfigError("trace must contain at least one row")
        if indices.size > 1 and not np.all(np.diff(indices) == 1):
            raise ConfigError("trace indices must be consecutive and increasing")
        if not (np.all(np.isfinite(y_true)) and np.all(np.isfinite(y_hat))):
            raise ConfigError("trace values must be finite")
        for name, arr in (("indices", indices), ("y_true", y_true), ("y_hat", y_hat)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def start(self) -> int:
        return int(self.indices[0])

    @property
    def end(self) -> int:
        return int(self.indices[-1]) + 1

    def __len__(self) -> int:
        return int(self.indices.size)

    def y_hat_at(self, t: int) -> float:
        if not self.start <= t < self.end:
            raise AlignmentError(
                f"trace covers indices [{self.start}, {self.end}) and has no row for {t}"
            )
        return float(self.y_hat[t - self.start])

    def validate_against(self, series: TimeSeries, start: int, end: int) -> None:
        """Check the trace can serve predictions for indices [start, end).

        The trace's recorded truths must match the series values there to
        within 1e-9; a mismatch means the trace was made from different
        data and calibrating on it would be meaningless.
        """
        if self.start > start or self.end < end:
            raise AlignmentError(
                f"trace covers indices [{self.start}, {self.end}) but the run needs "
                f"[{start}, {end})"
            )
        lo = start - series.start_index
        hi = end - series.start_index
        if lo < 0 or hi > len(series):
            raise AlignmentError(
                f"series covers indices [{series.start_index}, "
                f"{series.start_index + len(series)}) but the run needs [{start}, {end})"
            )
        expected = series.values[lo:hi]
        recorded = self.y_true[start - self.start : end - self.start]
        mismatch = np.flatnonzero(np.abs(recorded - expected) > 1e-9)
        if mismatch.size:
            t = start + int(mismatch[0])
            raise AlignmentError(
                f"trace y_true disagrees with the series at index {t}: "
                f"{recorded[mismatch[0]]!r} vs {expected[mismatch[0]]!r}"
            )

    @classmethod
    def from_csv(cls, path: str | Path) -> "ExternalForecastTrace":
        path = Path(path)
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise ConfigError(
                    f"{path}: empty file, expected header 'index,y_true,y_hat'"
                ) from None
            if tuple(h.strip() for h in header) != TRACE_CSV_HEADER:
                raise ConfigError(
                    f"{path}: line 1: expected header 'index,y_true,y_hat', got {header!r}"
                )
            indices: list[int] = []
            y_true: list[float] = []
            y_hat: list[float] = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 3:
                    raise ConfigError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
                try:
                    indices.append(int(row[0]))
                    y_true.append(float(row[1]))
                    y_hat.append(float(row[2]))
                except ValueError as exc:
                    raise ConfigError(f"{path}: line {lineno}: {exc}") from None
        if not indices:
            raise ConfigError(f"{path}: no data rows")
        return cls(indices=np.asarray(indices), y_true=np.asarray(y_true), y_hat=np.asarray(y_hat))

    def write_csv(self, path: str | Path) -> None:
        lines = ["index,y_true,y_hat"]
        for i in range(len(self)):
            lines.append(
                f"{int(self.indices[i])},{format_float(self.y_true[i])},{format_float(self.y_hat[i])}"
            )
        atomic_write_text(path, "\n".join(lines) + "\n")


class ReplayForecaster(Forecaster):
    """Serves an external trace through the forecaster contract.

    Predictions are looked up by series index (the length of the history
    prefix fixes the index) and mapped into standardized units with the
    run's scaler, so calibration sees them exactly as it would a native
    forecaster's output.
    """

    def __init__(self, trace: ExternalForecastTrace, scaler, series_start: int = 0) -> None:
        self.trace = trace
        self._scaler = scaler
        self._series_start = int(series_start)

    def fit(self, window) -> None:
        pass

    def predict_one(self, history) -> float:
        t = self._series_start + len(history)
        return float(self._scaler.transform(self.trace.y_hat_at(t)))


def make_forecaster(
    name: str,
    order: int | None = None,
    refit_every: int = 25,
    drift: float = 0.5,
    threshold: float = 5.0,
    warmup: int = 50,
) -> Forecaster:
    """Build a native forecaster by name ("persistence", "ar", "segmented_ar")."""
    if name == "persistence":
        return PersistenceForecaster()
    if name in ("ar", "segmented_ar"):
        if order is None:
            raise ConfigError(f"forecaster {name!r} requires an order")
        if name == "ar":
            return ArForecaster(order=order, refit_every=refit_every)
        return SegmentedArForecaster(
            order=order,
            refit_every=refit_every,
            drift=drift,
            threshold=threshold,
            warmup=warmup,
        )
    raise ConfigError(f"unknown forecaster {name!r}")
