import json
import os
import re
import subprocess
import sys

import pytest

from superrad.analysis.fitting import fit_decay
from superrad.cli import main
from superrad.correlator import lifetime_histogram, read_histogram_csv
from superrad.emitters import EmitterEnsemble, write_geometry
from superrad.timetag import read_stream

DATA = os.path.join(os.path.dirname(__file__), "data")
ERROR_LINE = re.compile(r'^error: kind=(\w+) code=(\d) message=".*"$')


def run(*argv):
    return main([str(a) for a in argv])


def error_of(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    m = ERROR_LINE.match(err[0])
    assert m, err[0]
    return m.group(1), int(m.group(2))


def test_simulate_single_emitter_lifetime(tmp_path):
    out = tmp_path / "n1.ttg"
    assert run("simulate", "--engine", "dicke", "--n", 1, "--tau-ns", 1.85, "--pulses", "1e6", "--seed", 7, "-o", out) == 0
    fit = fit_decay(lifetime_histogram(read_stream(out)), 500.0, "mono")
    assert abs(fit.lifetime_ns - 1.85) <= 0.020


def test_simulate_is_deterministic(tmp_path):
    args = ["simulate", "--engine", "trajectory", "--n", 2, "--pulses", "2e4", "--seed", 3]
    assert run(*args, "-o", tmp_path / "a.ttg") == 0
    assert run(*args, "-o", tmp_path / "b.ttg") == 0
    assert (tmp_path / "a.ttg").read_bytes() == (tmp_path / "b.ttg").read_bytes()
    ma = json.loads((tmp_path / "a.ttg.manifest.json").read_text())
    mb = json.loads((tmp_path / "b.ttg.manifest.json").read_text())
    assert ma["config"] == mb["config"] and ma["outputs"] == ["a.ttg"]
    assert "duration_s" not in ma
    assert ma["subcommand"] == "simulate" and ma["seed"] == 3


def test_record_timing_adds_duration(tmp_path):
    assert run("simulate", "--pulses", 1000, "--record-timing", "-o", tmp_path / "t.ttg") == 0
    assert "duration_s" in json.loads((tmp_path / "t.ttg.manifest.json").read_text())


def test_capacity_error(tmp_path, capsys):
    assert run("simulate", "--n", 13, "--engine", "trajectory", "-o", tmp_path / "x.ttg") == 1
    assert error_of(capsys) == ("CapacityError", 1)
    assert not (tmp_path / "x.ttg").exists()


def test_config_file_and_geometry(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("engine = trajectory\nn_pulses = 5000\nseed = 4\n")
    geom = tmp_path / "pair.txt"
    write_geometry(EmitterEnsemble.from_positions([[0, 0, 0], [0, 30, 0]], 436.0, 1 / 1.85), geom)
    out = tmp_path / "p.ttg"
    assert run("simulate", "--config", cfg, "--geometry", geom, "-o", out) == 0
    manifest = json.loads((tmp_path / "p.ttg.manifest.json").read_text())
    assert manifest["inputs"] == ["run.cfg", "pair.txt"]
    assert manifest["config"]["n_emitters"] == 2
    assert manifest["config"]["pulses"]["n_pulses"] == 5000


@pytest.mark.parametrize(
    "argv, kind",
    [
        (["simulate", "--engine", "qutip", "-o", "x"], "ValidationError"),
        (["simulate", "--pulses", "2.5", "-o", "x"], "ValidationError"),
        (["simulate", "--efficiency", "0", "-o", "x"], "ValidationError"),
        (["bogus"], "ValidationError"),
    ],
)
def test_validation_errors_exit_one(argv, kind, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(*argv) == 1
    assert error_of(capsys) == (kind, 1)


def test_io_errors_exit_two(tmp_path, capsys):
    assert run("correlate", tmp_path / "missing.ttg") == 2
    assert error_of(capsys)[1] == 2
    bad = tmp_path / "bad.ttg"
    bad.write_bytes(b"NOPE" + bytes(20))
    assert run("correlate", bad) == 2
    assert error_of(capsys) == ("BadMagicError", 2)


def test_correlate_matches_golden_file(tmp_path):
    prefix = tmp_path / "fixture_10k"
    assert run("correlate", os.path.join(DATA, "fixture_10k.ttg"), "--max-delay-ps", 60000, "-o", prefix) == 0
    golden = open(os.path.join(DATA, "fixture_10k.g2.golden.csv"), "rb").read()
    assert (tmp_path / "fixture_10k.g2.csv").read_bytes() == golden


def test_correlate_lifetime_needs_sync(tmp_path, capsys):
    rc = run("correlate", os.path.join(DATA, "fixture_10k.ttg"), "--lifetime", "-o", tmp_path / "f")
    assert rc == 1
    kind, _ = error_of(capsys)
    assert kind == "ValidationError"


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    """Single emitter and Dicke pair, simulated and correlated through the CLI."""
    d = tmp_path_factory.mktemp("bundle")
    for name, extra in (("single", ["--n", 1]), ("pair", ["--n", 2])):
        stream = d / f"{name}.ttg"
        assert run("simulate", "--engine", "dicke", "--pulses", "3e5", "--seed", 5, *extra, "-o", stream) == 0
        assert run("correlate", stream, "--lifetime") == 0
    return d


def test_correlate_writes_metadata(bundle):
    g2 = read_histogram_csv(bundle / "pair.g2.csv")
    assert g2.metadata["source"] == "pair" and g2.metadata["n_emitters"] == "2"
    assert g2.normalization.window_ps == 1000
    assert (bundle / "pair.g2.csv.manifest.json").exists()


def test_analyze_bundle_verdicts(bundle, capsys):
    files = sorted(str(p) for p in bundle.glob("*.csv"))
    assert run("analyze", *files, "-o", bundle / "report") == 0
    text = (bundle / "report.report.txt").read_text()
    single = text.split("[single]")[1].split("[")[0]
    pair = text.split("[pair]")[1].split("[")[0]
    assert "verdict = single" in single
    assert "verdict = cooperative" in pair
    rows = (bundle / "report.report.csv").read_text().splitlines()
    assert rows[0].startswith("source,n_emitters") and len(rows) == 3
    assert (bundle / "report.report.txt.manifest.json").exists()


def test_analyze_bi_on_mono_data_is_flagged(bundle):
    assert run("analyze", bundle / "single.lifetime.csv", "--model", "bi", "-o", bundle / "bi") == 0
    text = (bundle / "bi.report.txt").read_text()
    assert "model = mono (collapsed)" in text
    assert "not distinct" in text


def test_analyze_empty_histogram(tmp_path, capsys):
    p = tmp_path / "empty.lifetime.csv"
    p.write_text(
        "# kind=lifetime\n# bin_width_ps=100\n# n_sync=10\n# period_ps=1000\n"
        "bin_center_ps,counts\n" + "".join(f"{50 + 100 * i},0\n" for i in range(10))
    )
    assert run("analyze", p, "-o", tmp_path / "r") == 1
    assert error_of(capsys) == ("InsufficientDataError", 1)


def test_plmap(tmp_path):
    geom = tmp_path / "g.txt"
    write_geometry(EmitterEnsemble.from_positions([[0, 0, 0], [900, 400, 0]], 436.0, 0.5), geom)
    out, spots = tmp_path / "map.csv", tmp_path / "spots.csv"
    assert run("plmap", "--geometry", geom, "--pixel-nm", 25, "--size", 121, "--spots", spots, "-o", out) == 0
    rows = spots.read_text().splitlines()
    assert rows[0] == "x_nm,y_nm,brightness,fwhm_nm" and len(rows) == 3
    assert (tmp_path / "map.csv.manifest.json").exists()


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "superrad.cli", "simulate", "--n", "13", "--engine", "trajectory", "-o", str(tmp_path / "x")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 1
    assert ERROR_LINE.match(proc.stderr.strip())
