"""Acceptance gate: one test per release criterion.

Run with ``pytest -v tests/test_acceptance.py`` to get exactly one
pass/fail line per criterion. Each test also prints a verdict line with
the measured numbers, visible with ``-s`` or on failure. Tolerances and
runtime budgets are pinned here on purpose; loosening them is a release
decision, not a test fix.
"""

import json
import math
import time

import numpy as np

from driftband.cli import main
from driftband.conformal import (
    AciState,
    AgAciState,
    ScoreBuffer,
    aci_step,
    aci_update,
    agaci_step,
    agaci_update,
    empirical_quantile,
    residual_score,
)
from driftband.datagen import (
    LorenzSpec,
    default_toy_spec,
    generate_lorenz,
    generate_toy,
    lorenz_derivative,
    rk4_step,
)
from driftband.evaluate import (
    RunConfig,
    comparison_rows,
    render_comparison_table,
    report_payload,
    run_rolling,
)
from driftband.forecasters import CusumDetector
from driftband.series import write_series_csv


def _verdict(num: int, label: str, ok: bool, detail: str) -> None:
    print(f"criterion {num:02d} {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {num:02d} {label}: {detail}"


def test_criterion_01_telescoping_identity_is_exact():
    # (alpha_T - alpha_0) / gamma must equal the accumulated coverage
    # surplus to within 1e-9, for small and large step sizes alike.
    T = 1000
    worst = 0.0
    for gamma in (1e-4, 1e-3, 1e-2):
        rng = np.random.default_rng(11)
        buffer = ScoreBuffer(capacity=250, scores=np.abs(rng.normal(size=250)))
        state = AciState(alpha_nominal=0.1, gamma=gamma)
        terms = []
        for _ in range(T):
            interval = aci_step(state, buffer, y_hat=0.0)
            y = float(rng.normal())
            err = 0.0 if interval.covers(y) else 1.0
            terms.append(state.alpha_nominal - err)
            state = aci_update(state, y, interval)
            buffer.append(residual_score(y, 0.0))
        residual = abs((state.alpha_t - 0.1) / gamma - math.fsum(terms))
        worst = max(worst, residual)
    _verdict(1, "telescoping identity", worst < 1e-9,
             f"max |residual| = {worst:.3e} over gammas 1e-4, 1e-3, 1e-2, T={T}")


def test_criterion_02_aci_long_run_coverage_on_toy_ar():
    config = RunConfig(
        dataset="toy", forecaster="ar", method="aci",
        alpha=0.1, gamma=0.01, lag=12,
        split=(1 / 3, 1 / 3, 1 / 3), seed=7,
    )
    start = time.monotonic()
    report = run_rolling(config)
    elapsed = time.monotonic() - start
    ok = report.n_steps == 1000 and 0.87 <= report.coverage <= 0.93 and elapsed < 10.0
    _verdict(2, "long-run coverage", ok,
             f"coverage = {report.coverage:.4f} over {report.n_steps} steps "
             f"in {elapsed:.2f}s")


def test_criterion_03_split_cp_exchangeable_coverage():
    # With n = 200 exchangeable scores at level 0.9 the band uses the
    # 181st order statistic, so the hit rate should sit near 181/201.
    n, trials, chunk = 200, 100_000, 25_000
    k = math.ceil((n + 1) * 0.9)
    rng = np.random.default_rng(2024)
    start = time.monotonic()
    hits = 0
    checked_against_library = False
    for _ in range(trials // chunk):
        scores = np.abs(rng.standard_normal((chunk, n + 1)))
        kth = np.partition(scores[:, :n], k - 1, axis=1)[:, k - 1]
        hits += int(np.count_nonzero(scores[:, n] <= kth))
        if not checked_against_library:
            for row in range(3):
                buffer = ScoreBuffer(capacity=n, scores=scores[row, :n])
                assert empirical_quantile(buffer, 0.9) == kth[row]
            checked_against_library = True
    elapsed = time.monotonic() - start
    coverage = hits / trials
    ok = 0.89 <= coverage <= 0.93 and elapsed < 30.0
    _verdict(3, "exchangeable coverage", ok,
             f"coverage = {coverage:.5f} over {trials} trials in {elapsed:.2f}s, "
             f"expected about {k / (n + 1):.5f}")


def test_criterion_04_quantile_matches_sort_oracle_exhaustively():
    rng = np.random.default_rng(5)
    start = time.monotonic()
    comparisons = 0
    for n in range(1, 501):
        values = rng.standard_exponential(n)
        buffer = ScoreBuffer(capacity=n, scores=values)
        ordered = np.sort(values)
        for k in range(0, n + 2):
            got = empirical_quantile(buffer, k / (n + 1))
            if k == 0:
                want = 0.0
            elif k > n:
                want = math.inf
            else:
                want = float(ordered[k - 1])
            assert got == want, f"n={n} k={k}: got {got!r}, sort oracle {want!r}"
            comparisons += 1
    elapsed = time.monotonic() - start
    ok = elapsed < 5.0
    _verdict(4, "quantile sort oracle", ok,
             f"{comparisons} exact matches for n in [1, 500] in {elapsed:.2f}s")


def test_criterion_05_expert_bank_sanity():
    # One expert must reproduce the plain adaptive track step for step.
    rng = np.random.default_rng(3)
    shared = np.abs(rng.normal(size=150))
    buf_a = ScoreBuffer(capacity=150, scores=shared)
    buf_b = ScoreBuffer(capacity=150, scores=shared)
    solo = AciState(alpha_nominal=0.1, gamma=0.02)
    bank = AgAciState.from_gammas(0.1, [0.02])
    for _ in range(2000):
        y_hat = float(rng.normal())
        y = float(rng.normal(loc=y_hat))
        plain = aci_step(solo, buf_a, y_hat)
        agg, per_expert = agaci_step(bank, buf_b, y_hat)
        assert agg.half_width == plain.half_width
        assert agg.level == plain.level
        solo = aci_update(solo, y, plain)
        bank = agaci_update(bank, y, y_hat, per_expert)
        assert bank.experts[0].alpha_t == solo.alpha_t
        assert bank.weights == (1.0,)
        buf_a.append(residual_score(y, y_hat))
        buf_b.append(residual_score(y, y_hat))

    # Identical experts incur identical losses, so weights stay uniform.
    rng = np.random.default_rng(4)
    buffer = ScoreBuffer(capacity=150, scores=np.abs(rng.normal(size=150)))
    twins = AgAciState(
        alpha_nominal=0.1,
        experts=(AciState(0.1, 0.01), AciState(0.1, 0.01), AciState(0.1, 0.01)),
        weights=(1 / 3, 1 / 3, 1 / 3),
    )
    for _ in range(1000):
        y_hat = float(rng.normal())
        y = float(rng.normal(loc=y_hat))
        _, per_expert = agaci_step(twins, buffer, y_hat)
        twins = agaci_update(twins, y, y_hat, per_expert)
        assert all(abs(w - 1 / 3) <= 1e-12 for w in twins.weights)
        buffer.append(residual_score(y, y_hat))

    # Distinct experts under heavy reweighting: sums stay at 1 +- 1e-12.
    rng = np.random.default_rng(6)
    buffer = ScoreBuffer(capacity=200, scores=np.abs(rng.normal(size=200)))
    bank = AgAciState.from_gammas(0.1, [0.001, 0.01, 0.05], eta=2.0)
    worst = 0.0
    for _ in range(10_000):
        y_hat = float(rng.normal())
        y = float(rng.normal(loc=y_hat, scale=1.0 + 0.5 * abs(y_hat)))
        _, per_expert = agaci_step(bank, buffer, y_hat)
        bank = agaci_update(bank, y, y_hat, per_expert)
        worst = max(worst, abs(math.fsum(bank.weights) - 1.0))
        buffer.append(residual_score(y, y_hat))
    _verdict(5, "expert bank sanity", worst <= 1e-12,
             f"single expert exact, twins uniform, max |sum(w) - 1| = {worst:.2e} "
             f"over 10000 steps")


def test_criterion_06_rk4_order():
    # Scalar surrogate y' = y: one dt = 0.1 step against exp(0.1).
    scalar_error = abs(rk4_step(lambda y: y, 1.0, 0.1) - math.exp(0.1))

    # Self-convergence on the chaotic system, measured over the first
    # half time unit where truncation error is not yet amplified by the
    # attractor's expanding directions: halving dt should shrink the
    # terminal difference by about 2**4.
    def integrate(dt: float, total: float) -> np.ndarray:
        state = np.array([1.0, 1.0, 1.0])
        for _ in range(round(total / dt)):
            state = rk4_step(lambda s: lorenz_derivative(s, 10.0, 28.0, 8 / 3), state, dt)
        return state

    dt, horizon = 0.01, 0.5
    coarse = integrate(dt, horizon)
    halved = integrate(dt / 2, horizon)
    quartered = integrate(dt / 4, horizon)
    ratio = float(
        np.linalg.norm(coarse - halved) / np.linalg.norm(halved - quartered)
    )
    ok = scalar_error < 1e-7 and 12.0 <= ratio <= 20.0
    _verdict(6, "rk4 order", ok,
             f"scalar one-step error = {scalar_error:.2e}, "
             f"halving ratio = {ratio:.2f} over {horizon} time units at dt = {dt}")


def test_criterion_07_cusum_reacts_within_five_steps():
    reps, shift, budget = 1000, 5.0, 5
    start = time.monotonic()
    successes = 0
    for rep in range(reps):
        rng = np.random.default_rng(rep)
        detector = CusumDetector(drift=0.5, threshold=5.0, warmup=50)
        for value in rng.normal(size=50):
            detector.update(value)
        for value in rng.normal(size=budget) + shift:
            if detector.update(value):
                successes += 1
                break
    elapsed = time.monotonic() - start
    rate = successes / reps
    ok = rate >= 0.99 and elapsed < 10.0
    _verdict(7, "cusum reactivity", ok,
             f"alarm within {budget} steps in {rate:.1%} of {reps} replications "
             f"in {elapsed:.2f}s")


def test_criterion_08_wrap_path_matches_direct_run(tmp_path, capsys):
    # Bands calibrated around a replayed persistence trace must be bit
    # for bit the same as running the persistence forecaster directly.
    assert main(["generate", "--spec", "toy", "--out", str(tmp_path)]) == 0
    series_path = tmp_path / "toy.csv"
    values = [float(v) for v in np.loadtxt(series_path, delimiter=",", skiprows=1)[:, 1]]
    lines = ["index,y_true,y_hat"]
    for t in range(1, len(values)):
        lines.append(f"{t},{values[t]!r},{values[t - 1]!r}")
    trace = tmp_path / "trace.csv"
    trace.write_text("\n".join(lines) + "\n")
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({
        "dataset": str(series_path), "forecaster": "persistence",
        "method": "aci", "seed": 3,
    }))
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "r")]) == 0
    assert main([
        "wrap", "--trace", str(trace), "--series", str(series_path),
        "--config", str(config), "--out", str(tmp_path / "w"),
    ]) == 0
    direct = json.loads((tmp_path / "r" / "toy-persistence-aci.metrics.json").read_text())
    wrapped = json.loads((tmp_path / "w" / "toy-replay-aci.metrics.json").read_text())
    same_metrics = wrapped["metrics"] == direct["metrics"]
    direct_bands = (tmp_path / "r" / "toy-persistence-aci.bands.csv").read_bytes()
    wrapped_bands = (tmp_path / "w" / "toy-replay-aci.bands.csv").read_bytes()
    _verdict(8, "wrap equivalence", same_metrics and direct_bands == wrapped_bands,
             f"metrics equal = {same_metrics}, "
             f"bands byte-identical = {direct_bands == wrapped_bands}")


def test_criterion_09_comparison_report_schema_only(tmp_path):
    """Published benchmark tables are a schema reference, not targets.

    Externally reported coverage/width figures depend on model backbones
    and data splits outside this package, so no test anywhere in this
    suite asserts such absolute numbers. What is pinned instead: the
    comparison report carries exactly the fields needed to present a
    coverage-and-width table, computed from this package's own runs.
    """
    series, _ = generate_toy(default_toy_spec(T=600, seed=3))
    path = tmp_path / "small.csv"
    write_series_csv(path, series)
    payloads = []
    for method in ("split", "aci"):
        config = RunConfig(dataset=str(path), forecaster="ar", method=method, seed=3)
        payloads.append(report_payload(run_rolling(config)))
    rows = comparison_rows(payloads)
    expected = {
        "dataset", "forecaster", "method", "status", "alpha",
        "rmse", "coverage", "median_width", "n_infinite", "n_zero_width", "n_steps",
    }
    schemas_ok = all(set(row) == expected and row["status"] == "ok" for row in rows)
    table = render_comparison_table(rows)
    headers_ok = "Coverage@90%" in table and "Median width" in table
    _verdict(9, "report schema reference", schemas_ok and headers_ok and len(rows) == 2,
             f"{len(rows)} rows with fields {sorted(expected)}; "
             f"no external absolute numbers asserted")


def test_criterion_10_default_dataset_shapes():
    toy_series, toy_regimes = generate_toy(default_toy_spec())
    lorenz_series = generate_lorenz(LorenzSpec())
    ok = (
        len(toy_series) == 3000
        and toy_regimes.shape == (3000,)
        and len(lorenz_series) == 10000
    )
    _verdict(10, "default dataset shapes", ok,
             f"toy T = {len(toy_series)}, lorenz T = {len(lorenz_series)}")
