import json
import subprocess
import sys

import numpy as np
import pytest

from driftband.cli import main
from driftband.series import TimeSeries, load_series_csv, write_series_csv


@pytest.fixture()
def series_csv(tmp_path):
    rng = np.random.default_rng(0)
    values = np.cumsum(rng.normal(size=300)) + rng.normal(scale=0.3, size=300)
    path = tmp_path / "walk.csv"
    write_series_csv(path, TimeSeries(values=values))
    return path


def write_config(tmp_path, name="cfg.json", **overrides):
    payload = {
        "dataset": "toy",
        "forecaster": "persistence",
        "method": "aci",
        "seed": 1,
    }
    payload.update(overrides)
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return path


def test_generate_builtin_toy(tmp_path, capsys):
    assert main(["generate", "--spec", "toy", "--out", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    assert "generated toy: T=3000 regimes=2" in out
    series = load_series_csv(tmp_path / "d" / "toy.csv")
    assert len(series) == 3000
    sidecar = (tmp_path / "d" / "toy.regimes.csv").read_text().splitlines()
    assert sidecar[0] == "index,regime"
    assert len(sidecar) == 3001


def test_generate_custom_spec_file(tmp_path, capsys):
    spec = tmp_path / "small.json"
    spec.write_text(json.dumps({"kind": "lorenz", "T": 120, "subsample": 2}))
    assert main(["generate", "--spec", str(spec), "--out", str(tmp_path)]) == 0
    assert "generated small: T=120" in capsys.readouterr().out
    assert len(load_series_csv(tmp_path / "small.csv")) == 120


def test_generate_malformed_json_reports_offset(tmp_path, capsys):
    spec = tmp_path / "broken.json"
    spec.write_text('{"kind": "toy", }')
    assert main(["generate", "--spec", str(spec), "--out", str(tmp_path)]) == 2
    assert "byte offset" in capsys.readouterr().err


def test_generate_unknown_key_exits_2(tmp_path, capsys):
    spec = tmp_path / "typo.json"
    spec.write_text(json.dumps({"kind": "toy", "length": 100}))
    assert main(["generate", "--spec", str(spec), "--out", str(tmp_path)]) == 2
    assert "unknown keys" in capsys.readouterr().err


def test_run_writes_outputs_and_prints_metrics(tmp_path, series_csv, capsys):
    config = write_config(tmp_path, dataset=str(series_csv))
    out_dir = tmp_path / "runs"
    assert main(["run", "--config", str(config), "--out", str(out_dir)]) == 0
    stdout = capsys.readouterr().out
    assert "coverage=" in stdout and "width=" in stdout and "rmse=" in stdout

    metrics = json.loads((out_dir / "walk-persistence-aci.metrics.json").read_text())
    assert metrics["status"] == "ok"
    bands = (out_dir / "walk-persistence-aci.bands.csv").read_text().splitlines()
    assert bands[0] == "index,y,y_hat,lower,upper,alpha_t,covered"
    assert len(bands) == metrics["metrics"]["n_steps"] + 1
    first = bands[1].split(",")
    assert len(first) == 7 and first[6] in ("0", "1")


def test_run_method_none_omits_coverage(tmp_path, series_csv, capsys):
    config = write_config(tmp_path, dataset=str(series_csv), method="none")
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "o")]) == 0
    stdout = capsys.readouterr().out
    assert "rmse=" in stdout and "coverage=" not in stdout


def test_run_missing_dataset_exits_3(tmp_path, capsys):
    config = write_config(tmp_path, dataset=str(tmp_path / "nope.csv"))
    assert main(["run", "--config", str(config), "--out", str(tmp_path)]) == 3


def test_run_unknown_config_key_exits_2(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"dataset": "toy", "alpa": 0.1}))
    assert main(["run", "--config", str(config), "--out", str(tmp_path)]) == 2
    assert "alpa" in capsys.readouterr().err


def test_run_degenerate_series_exits_4(tmp_path, capsys):
    flat = tmp_path / "flat.csv"
    write_series_csv(flat, TimeSeries(values=np.zeros(100) + 3.0))
    config = write_config(tmp_path, dataset=str(flat))
    assert main(["run", "--config", str(config), "--out", str(tmp_path)]) == 4
    assert "degenerate" in capsys.readouterr().err


def test_run_gapped_series_exits_2(tmp_path):
    gapped = tmp_path / "gap.csv"
    gapped.write_text("index,value\n0,1.0\n2,2.0\n")
    config = write_config(tmp_path, dataset=str(gapped))
    assert main(["run", "--config", str(config), "--out", str(tmp_path)]) == 2


def test_run_grid_survives_failures(tmp_path, series_csv, capsys):
    ok = write_config(tmp_path, "ok.json", dataset=str(series_csv))
    bad = write_config(tmp_path, "bad.json", dataset=str(tmp_path / "missing.csv"))
    out_dir = tmp_path / "grid"
    code = main(["run", "--config", str(ok), str(bad), "--out", str(out_dir)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "walk-persistence-aci: coverage=" in stdout
    assert "failed: FileNotFoundError" in stdout
    failed = json.loads((out_dir / "missing-persistence-aci.metrics.json").read_text())
    assert failed["status"] == "failed"


def test_run_seed_override_changes_builtin_data(tmp_path, capsys):
    config = write_config(tmp_path, dataset="toy", method="split")
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["run", "--config", str(config), "--out", str(out_a)]) == 0
    assert main(["run", "--config", str(config), "--out", str(out_b), "--seed", "99"]) == 0
    a = json.loads((out_a / "toy-persistence-split.metrics.json").read_text())
    b = json.loads((out_b / "toy-persistence-split.metrics.json").read_text())
    assert a["seed"] == 1 and b["seed"] == 99
    assert a["metrics"]["rmse"] != b["metrics"]["rmse"]


def persistence_trace_csv(tmp_path, series_csv):
    series = load_series_csv(series_csv)
    lines = ["index,y_true,y_hat"]
    for t in range(1, len(series)):
        lines.append(f"{t},{float(series.values[t])!r},{float(series.values[t - 1])!r}")
    path = tmp_path / "trace.csv"
    path.write_text("\n".join(lines) + "\n")
    return path


def test_wrap_matches_direct_run(tmp_path, series_csv, capsys):
    config = write_config(tmp_path, dataset=str(series_csv))
    trace = persistence_trace_csv(tmp_path, series_csv)
    assert main(["run", "--config", str(config), "--out", str(tmp_path / "r")]) == 0
    assert main([
        "wrap", "--trace", str(trace), "--series", str(series_csv),
        "--config", str(config), "--out", str(tmp_path / "w"),
    ]) == 0
    direct = json.loads((tmp_path / "r" / "walk-persistence-aci.metrics.json").read_text())
    wrapped = json.loads((tmp_path / "w" / "walk-replay-aci.metrics.json").read_text())
    assert wrapped["metrics"] == direct["metrics"]
    assert wrapped["forecaster"] == "replay"


def test_wrap_partial_trace_exits_5(tmp_path, series_csv, capsys):
    series = load_series_csv(series_csv)
    lines = ["index,y_true,y_hat"]
    for t in range(1, len(series) // 2):
        lines.append(f"{t},{float(series.values[t])!r},{float(series.values[t - 1])!r}")
    trace = tmp_path / "half.csv"
    trace.write_text("\n".join(lines) + "\n")
    config = write_config(tmp_path, dataset=str(series_csv))
    code = main([
        "wrap", "--trace", str(trace), "--series", str(series_csv),
        "--config", str(config), "--out", str(tmp_path),
    ])
    assert code == 5
    err = capsys.readouterr().err
    assert "covers indices" in err and "needs" in err


def test_wrap_truth_mismatch_exits_5_naming_index(tmp_path, series_csv, capsys):
    series = load_series_csv(series_csv)
    lines = ["index,y_true,y_hat"]
    for t in range(1, len(series)):
        y = series.values[t] + (0.5 if t == 200 else 0.0)
        lines.append(f"{t},{float(y)!r},{float(series.values[t - 1])!r}")
    trace = tmp_path / "tampered.csv"
    trace.write_text("\n".join(lines) + "\n")
    config = write_config(tmp_path, dataset=str(series_csv))
    code = main([
        "wrap", "--trace", str(trace), "--series", str(series_csv),
        "--config", str(config), "--out", str(tmp_path),
    ])
    assert code == 5
    assert "index 200" in capsys.readouterr().err


def test_wrap_perfect_trace_gives_zero_width_full_coverage(tmp_path, series_csv, capsys):
    series = load_series_csv(series_csv)
    lines = ["index,y_true,y_hat"]
    for t in range(len(series)):
        lines.append(f"{t},{float(series.values[t])!r},{float(series.values[t])!r}")
    trace = tmp_path / "perfect.csv"
    trace.write_text("\n".join(lines) + "\n")
    config = write_config(tmp_path, dataset=str(series_csv))
    out_dir = tmp_path / "perfect"
    assert main([
        "wrap", "--trace", str(trace), "--series", str(series_csv),
        "--config", str(config), "--out", str(out_dir),
    ]) == 0
    metrics = json.loads((out_dir / "walk-replay-aci.metrics.json").read_text())["metrics"]
    assert metrics["coverage"] == 1.0
    assert metrics["median_width"] == 0.0
    assert metrics["n_zero_width"] == metrics["n_steps"]


def test_report_single_and_failed_cells(tmp_path, series_csv, capsys):
    ok = write_config(tmp_path, "ok.json", dataset=str(series_csv), method="split")
    bad = write_config(tmp_path, "bad.json", dataset=str(tmp_path / "gone.csv"))
    out_dir = tmp_path / "runs"
    main(["run", "--config", str(ok), str(bad), "--out", str(out_dir)])
    capsys.readouterr()
    inputs = sorted(str(p) for p in out_dir.glob("*.metrics.json"))
    rep_dir = tmp_path / "rep"
    assert main(["report", "--inputs", *inputs, "--out", str(rep_dir)]) == 0
    stdout = capsys.readouterr().out
    assert "Coverage@90%" in stdout and "Median width" in stdout
    assert "—" in stdout
    report_txt = (rep_dir / "report.txt").read_text()
    assert report_txt in stdout or stdout.strip() in report_txt
    lines = (rep_dir / "report.csv").read_text().splitlines()
    assert lines[0].startswith("dataset,forecaster,method,status")
    assert len(lines) == 3


def test_report_conflicting_duplicates_exit_2(tmp_path, capsys):
    # same (dataset, forecaster, method) key, different seeds on generated
    # data -> different metrics under one key must be refused
    config = write_config(tmp_path, dataset="toy", method="split")
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(config), "--out", str(out_a)])
    main(["run", "--config", str(config), "--out", str(out_b), "--seed", "77"])
    capsys.readouterr()
    code = main([
        "report",
        "--inputs",
        str(out_a / "toy-persistence-split.metrics.json"),
        str(out_b / "toy-persistence-split.metrics.json"),
        "--out", str(tmp_path / "rep"),
    ])
    assert code == 2
    assert "conflicting" in capsys.readouterr().err


def test_report_identical_duplicates_collapse(tmp_path, series_csv, capsys):
    config = write_config(tmp_path, dataset=str(series_csv), method="split")
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(config), "--out", str(out_a)])
    main(["run", "--config", str(config), "--out", str(out_b)])
    capsys.readouterr()
    code = main([
        "report",
        "--inputs",
        str(out_a / "walk-persistence-split.metrics.json"),
        str(out_b / "walk-persistence-split.metrics.json"),
        "--out", str(tmp_path / "rep"),
    ])
    assert code == 0
    lines = (tmp_path / "rep" / "report.csv").read_text().splitlines()
    assert len(lines) == 2  # header + the single deduplicated row


def test_report_missing_input_exits_3(tmp_path, capsys):
    assert main(["report", "--inputs", str(tmp_path / "no.json"),
                 "--out", str(tmp_path)]) == 3


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "driftband", "generate", "--spec", "toy",
         "--out", str(tmp_path)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0
    assert "generated toy" in proc.stdout
