import os
import subprocess
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))
import fixtures  # noqa: E402

from dials_plots import (  # noqa: E402
    SchemaError,
    load_run,
    load_runset,
    plot_ce_curves,
    plot_learning_curves,
    plot_runtime_bars,
)

GOLDEN_DIR = os.path.join(os.path.dirname(__file__), "goldens")


def _golden_compare(name, out_path):
    golden = os.path.join(GOLDEN_DIR, name)
    rendered = open(out_path, "rb").read()
    if os.environ.get("DIALS_PLOTS_REGOLD"):
        os.makedirs(GOLDEN_DIR, exist_ok=True)
        with open(golden, "wb") as fh:
            fh.write(rendered)
    expected = open(golden, "rb").read()
    assert rendered == expected, f"{name} differs from golden"


def test_learning_curves_golden(tmp_path):
    fixtures.curves_fixture(tmp_path / "runs")
    runset = load_runset(tmp_path / "runs")
    out = tmp_path / "curves.svg"
    plot_learning_curves(runset, out)
    _golden_compare("curves.svg", out)


def test_learning_curves_single_seed_zero_band(tmp_path):
    fixtures.curves_fixture(tmp_path / "runs", seeds=(0,))
    runset = load_runset(tmp_path / "runs")
    out = tmp_path / "curves1.svg"
    plot_learning_curves(runset, out)
    _golden_compare("curves_single_seed.svg", out)


def test_runtime_bars_golden_and_annotation(tmp_path):
    fixtures.runtime_fixture(tmp_path / "runs", ratio=40.0)
    runset = load_runset(tmp_path / "runs")
    out = tmp_path / "runtime.svg"
    plot_runtime_bars(runset, out)
    svg = out.read_text()
    assert "40.0x" in svg
    _golden_compare("runtime.svg", out)


def test_runtime_bars_equal_heights(tmp_path):
    fixtures.runtime_fixture(tmp_path / "runs", equal=True)
    runset = load_runset(tmp_path / "runs")
    out = tmp_path / "runtime_eq.svg"
    plot_runtime_bars(runset, out)
    assert "1.0x" in out.read_text()
    _golden_compare("runtime_equal.svg", out)


def test_runtime_zero_reports_cleanly(tmp_path):
    fixtures.runtime_zero_fixture(tmp_path / "runs")
    runset = load_runset(tmp_path / "runs")
    with pytest.raises(SchemaError, match="zero"):
        plot_runtime_bars(runset, tmp_path / "x.svg")


def test_ce_curves_golden(tmp_path):
    fixtures.ce_fixture(tmp_path / "runs")
    runset = load_runset(tmp_path / "runs")
    out = tmp_path / "ce.svg"
    plot_ce_curves(runset, out)
    _golden_compare("ce.svg", out)


def test_ce_curves_without_ce_values_error(tmp_path):
    fixtures.runtime_fixture(tmp_path / "runs")
    runset = load_runset(tmp_path / "runs")
    with pytest.raises(SchemaError, match="CE"):
        plot_ce_curves(runset, tmp_path / "x.svg")


def test_missing_column_named_in_error(tmp_path):
    fixtures.missing_column_fixture(tmp_path / "runs")
    with pytest.raises(SchemaError, match="aip_ce"):
        load_run(tmp_path / "runs" / "bad")


def test_empty_directory_errors(tmp_path):
    os.makedirs(tmp_path / "empty", exist_ok=True)
    with pytest.raises(SchemaError, match="no runs"):
        load_runset(tmp_path / "empty")


def test_render_deterministic(tmp_path):
    fixtures.curves_fixture(tmp_path / "runs")
    runset = load_runset(tmp_path / "runs")
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    plot_learning_curves(runset, a)
    plot_learning_curves(runset, b)
    assert a.read_bytes() == b.read_bytes()


def test_cli_entry_point(tmp_path):
    fixtures.curves_fixture(tmp_path / "runs")
    out = tmp_path / "fig.svg"
    proc = subprocess.run(
        [sys.executable, "-m", "dials_plots", "--in", str(tmp_path / "runs"),
         "--fig", "curves", "--out", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    assert "wrote curves figure" in proc.stdout


def test_cli_schema_failure_exit_code(tmp_path):
    fixtures.missing_column_fixture(tmp_path / "runs")
    proc = subprocess.run(
        [sys.executable, "-m", "dials_plots", "--in", str(tmp_path / "runs" / "bad"),
         "--fig", "curves", "--out", str(tmp_path / "fig.svg")],
        capture_output=True, text=True)
    assert proc.returncode == 1
    assert "aip_ce" in proc.stderr
