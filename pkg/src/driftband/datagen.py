"""Reproducible synthetic generators with regime structure.

Two families: a switching autoregression driven by a hidden Markov
regime chain, and the Lorenz-63 system observed through its x
coordinate. Both are pure functions of (spec, seed) and bit-identical
across reruns. The regime chain and the observation noise draw from
independent substreams of the seed, so changing a noise scale never
moves the regime path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericError
from .fileio import atomic_write_text
from .series import TimeSeries

_PROB_TOL = 1e-12

REGIME_CSV_HEADER = ("index", "regime")


def _check_known_keys(payload: dict, known: set[str], what: str) -> None:
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"unknown keys in {what}: {', '.join(unknown)}")


@dataclass(frozen=True, eq=False)
class MarkovChainSpec:
    """A finite Markov chain over regimes 0..K-1.

    ``transition[i, j]`` is the probability of moving from regime i to
    regime j; ``initial`` is the distribution of the first regime.
    """

    transition: np.ndarray
    initial: np.ndarray

    def __eq__(self, other) -> bool:
        if not isinstance(other, MarkovChainSpec):
            return NotImplemented
        return np.array_equal(self.transition, other.transition) and np.array_equal(
            self.initial, other.initial
        )

    def __post_init__(self) -> None:
        transition = np.asarray(self.transition, dtype=float)
        if transition.ndim != 2 or transition.shape[0] != transition.shape[1]:
            raise ConfigError(f"transition matrix must be square, got shape {transition.shape}")
        k = transition.shape[0]
        if k < 1:
            raise ConfigError("chain needs at least one regime")
        if np.any(transition < 0):
            raise ConfigError("transition probabilities must be non-negative")
        rows = transition.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > _PROB_TOL)
        if bad.size:
            raise ConfigError(
                f"transition row {int(bad[0])} sums to {rows[bad[0]]!r}, expected 1"
            )
        initial = np.asarray(self.initial, dtype=float)
        if initial.shape != (k,):
            raise ConfigError(
                f"initial distribution must have length {k}, got shape {initial.shape}"
            )
        if np.any(initial < 0) or abs(initial.sum() - 1.0) > _PROB_TOL:
            raise ConfigError("initial distribution must be a probability vector")
        transition.setflags(write=False)
        initial.setflags(write=False)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "initial", initial)

    @property
    def n_regimes(self) -> int:
        return int(self.transition.shape[0])

    @classmethod
    def start_in(cls, transition, regime: int = 0) -> "MarkovChainSpec":
        """Chain that starts deterministically in one regime."""
        transition = np.asarray(transition, dtype=float)
        initial = np.zeros(transition.shape[0])
        initial[regime] = 1.0
        return cls(transition=transition, initial=initial)


def sample_regimes(spec: MarkovChainSpec, T: int, seed) -> np.ndarray:
    """Sample a regime path of length T. ``seed`` is anything default_rng accepts."""
    if T < 1:
        raise ConfigError(f"regime path length must be >= 1, got {T}")
    rng = np.random.default_rng(seed)
    u = rng.random(T)
    cum_rows = np.cumsum(spec.transition, axis=1)
    cum_init = np.cumsum(spec.initial)
    last = spec.n_regimes - 1
    path = np.empty(T, dtype=int)
    path[0] = min(int(np.searchsorted(cum_init, u[0], side="right")), last)
    for t in range(1, T):
        path[t] = min(int(np.searchsorted(cum_rows[path[t - 1]], u[t], side="right")), last)
    return path


@dataclass(frozen=True)
class ArRegime:
    """AR(1) parameters of one regime: y' = intercept + coef * y + noise_std * eps."""

    intercept: float
    coef: float
    noise_std: float

    def __post_init__(self) -> None:
        if not abs(self.coef) < 1:
            raise ConfigError(
                f"regime coefficient must satisfy |coef| < 1 for stationarity, got {self.coef}"
            )
        if self.noise_std < 0:
            raise ConfigError(f"regime noise std must be non-negative, got {self.noise_std}")

    @property
    def stationary_mean(self) -> float:
        return self.intercept / (1.0 - self.coef)


@dataclass(frozen=True)
class SwitchingArSpec:
    """Markov-switching AR(1): y_t = c_d + phi_d * y_{t-1} + sigma_d * eps_t.

    The first emitted value is ``y0`` itself; the recursion starts at the
    second. The regime at each step is drawn from ``chain``.
    """

    regimes: tuple[ArRegime, ...]
    chain: MarkovChainSpec
    T: int = 3000
    seed: int = 0
    y0: float = 0.0

    def __post_init__(self) -> None:
        if len(self.regimes) != self.chain.n_regimes:
            raise ConfigError(
                f"got {len(self.regimes)} regime parameter sets for a chain with "
                f"{self.chain.n_regimes} regimes"
            )
        if self.T < 1:
            raise ConfigError(f"series length must be >= 1, got {self.T}")
        if not math.isfinite(self.y0):
            raise ConfigError(f"starting value must be finite, got {self.y0}")


def default_toy_spec(T: int = 3000, seed: int = 0) -> SwitchingArSpec:
    """The stock two-regime switching AR: a slow drifter and a fast mean-reverter.

    Regime 0 is (0, 0.9, 0.1), regime 1 is (2, -0.5, 0.4); the chain is
    sticky (0.99 / 0.98 self-transition) and starts in regime 0.
    """
    chain = MarkovChainSpec.start_in([[0.99, 0.01], [0.02, 0.98]], regime=0)
    return SwitchingArSpec(
        regimes=(
            ArRegime(intercept=0.0, coef=0.9, noise_std=0.1),
            ArRegime(intercept=2.0, coef=-0.5, noise_std=0.4),
        ),
        chain=chain,
        T=T,
        seed=seed,
    )


def generate_toy(spec: SwitchingArSpec) -> tuple[TimeSeries, np.ndarray]:
    """Simulate the switching AR. Returns (series, regime path).

    The regime path is ground truth for diagnostics only; forecasters
    never see it.
    """
    regime_seed, noise_seed = np.random.SeedSequence(spec.seed).spawn(2)
    path = sample_regimes(spec.chain, spec.T, regime_seed)
    eps = np.random.default_rng(noise_seed).standard_normal(spec.T)
    intercept = np.array([r.intercept for r in spec.regimes])
    coef = np.array([r.coef for r in spec.regimes])
    noise_std = np.array([r.noise_std for r in spec.regimes])
    y = np.empty(spec.T)
    y[0] = spec.y0
    for t in range(1, spec.T):
        d = path[t]
        y[t] = intercept[d] + coef[d] * y[t - 1] + noise_std[d] * eps[t]
    return TimeSeries(values=y), path


@dataclass(frozen=True)
class LorenzSpec:
    """Lorenz-63 observed through x with optional Gaussian measurement noise.

    Defaults put the system in the classical chaotic regime; the slow
    alternation between the two attractor lobes plays the role of regime
    switching in the observed coordinate.
    """

    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    dt: float = 0.01
    x0: float = 1.0
    y0: float = 1.0
    z0: float = 1.0
    T: int = 10000
    subsample: int = 5
    obs_noise: float = 0.01
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dt <= 0:
            raise ConfigError(f"integrator step must be positive, got {self.dt}")
        if self.subsample < 1:
            raise ConfigError(f"subsample must be >= 1, got {self.subsample}")
        if self.T < 1:
            raise ConfigError(f"series length must be >= 1, got {self.T}")
        if self.obs_noise < 0:
            raise ConfigError(f"observation noise must be non-negative, got {self.obs_noise}")
        for name in ("sigma", "rho", "beta", "x0", "y0", "z0"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")


def lorenz_derivative(state, sigma: float, rho: float, beta: float) -> np.ndarray:
    """Right-hand side of the Lorenz-63 system at a state (x, y, z)."""
    x, y, z = state
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def rk4_step(f, state, dt: float):
    """One classic fourth-order Runge-Kutta step of y' = f(y)."""
    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def generate_lorenz(spec: LorenzSpec) -> TimeSeries:
    """Integrate Lorenz-63 and emit the x coordinate every ``subsample`` steps."""
    deriv = lambda s: lorenz_derivative(s, spec.sigma, spec.rho, spec.beta)
    state = np.array([spec.x0, spec.y0, spec.z0], dtype=float)
    out = np.empty(spec.T)
    step = 0
    # overflow inside a diverging step is reported below, not by numpy
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(spec.T):
            for _ in range(spec.subsample):
                state = rk4_step(deriv, state, spec.dt)
                step += 1
            if not np.all(np.isfinite(state)):
                raise NumericError(
                    f"integration blew up at step {step} (dt = {spec.dt} is too coarse)"
                )
            out[i] = state[0]
    if spec.obs_noise > 0:
        out = out + spec.obs_noise * np.random.default_rng(spec.seed).standard_normal(spec.T)
    return TimeSeries(values=out)


def write_regimes_csv(path: str | Path, regimes: np.ndarray, start_index: int = 0) -> None:
    """Sidecar ground-truth regime file: ``index,regime``, 0-based regimes."""
    lines = ["index,regime"]
    for i, d in enumerate(np.asarray(regimes, dtype=int)):
        lines.append(f"{start_index + i},{int(d)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _chain_from_json(payload: dict) -> MarkovChainSpec:
    if not isinstance(payload, dict):
        raise ConfigError("chain must be an object with a 'transition' matrix")
    _check_known_keys(payload, {"transition", "initial"}, "chain spec")
    if "transition" not in payload:
        raise ConfigError("chain spec is missing 'transition'")
    transition = np.asarray(payload["transition"], dtype=float)
    if "initial" in payload:
        return MarkovChainSpec(transition=transition, initial=np.asarray(payload["initial"]))
    return MarkovChainSpec.start_in(transition, regime=0)


def toy_spec_from_json(payload: dict) -> SwitchingArSpec:
    _check_known_keys(
        payload, {"kind", "regimes", "chain", "T", "seed", "y0"}, "toy generator spec"
    )
    base = default_toy_spec()
    if "regimes" in payload:
        try:
            regimes = tuple(
                ArRegime(
                    intercept=float(r["intercept"]),
                    coef=float(r["coef"]),
                    noise_std=float(r["noise_std"]),
                )
                for r in payload["regimes"]
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(
                "each regime needs numeric 'intercept', 'coef' and 'noise_std' "
                f"fields ({exc})"
            ) from None
    else:
        regimes = base.regimes
    chain = _chain_from_json(payload["chain"]) if "chain" in payload else base.chain
    return SwitchingArSpec(
        regimes=regimes,
        chain=chain,
        T=int(payload.get("T", base.T)),
        seed=int(payload.get("seed", base.seed)),
        y0=float(payload.get("y0", base.y0)),
    )


def lorenz_spec_from_json(payload: dict) -> LorenzSpec:
    known = {
        "kind", "sigma", "rho", "beta", "dt", "x0", "y0", "z0",
        "T", "subsample", "obs_noise", "seed",
    }
    _check_known_keys(payload, known, "lorenz generator spec")
    base = LorenzSpec()
    kwargs = {}
    for field in known - {"kind"}:
        if field in payload:
            caster = int if field in ("T", "subsample", "seed") else float
            kwargs[field] = caster(payload[field])
    return LorenzSpec(**kwargs) if kwargs else base


def generator_spec_from_json(payload: dict) -> SwitchingArSpec | LorenzSpec:
    """Parse a generator spec document; ``kind`` picks the family."""
    if not isinstance(payload, dict):
        raise ConfigError("generator spec must be a JSON object")
    kind = payload.get("kind")
    if kind == "toy":
        return toy_spec_from_json(payload)
    if kind == "lorenz":
        return lorenz_spec_from_json(payload)
    raise ConfigError(f"generator spec 'kind' must be 'toy' or 'lorenz', got {kind!r}")
