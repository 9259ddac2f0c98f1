"""Config parsing, report plumbing, SVG plotting, and the exit-code contract."""

import os
import subprocess
import sys

import numpy as np
import pytest

from wavedecay import cli, feedback
from wavedecay.cli import MalformedCSV, ParseError, Report, ValidationError


def write(path, text):
    path.write_text(text)
    return str(path)


ENVELOPE_TOML = """
mode = "envelope"
seed = 0

[feedback.origin]
kind = "linear"
m0 = 1.0
M0 = 1.0

[feedback.infinity]
kind = "linear"
m = 1.0
M = 1.0

[decay]
gamma = 0.9
C_obs = 1.0
measQT = 1.0
p0 = 4.0
E0 = 1.0
T0 = 1.0

[integration]
ds = 1e-3
t_max = 6.0

[envelope]
example = "exp_origin"
tolerance = 1e-6

[envelope.params]
K = 1.0
measQT = 1.0
m0 = 1.0
M0 = 1.0
"""


# ---------------------------------------------------------------------------
# parse_config
# ---------------------------------------------------------------------------

def test_parse_roundtrip(tmp_path):
    cfg = cli.parse_config(write(tmp_path / "c.toml", ENVELOPE_TOML))
    assert cfg.mode == "envelope"
    assert cfg.seed == 0
    assert cfg.section("decay")["gamma"] == 0.9
    assert cfg.has("feedback")
    assert cfg.section("nonexistent") == {}


def test_unknown_key_names_the_path(tmp_path):
    p = write(tmp_path / "c.toml", "[decay]\nmeasQt = 1.0\n")
    with pytest.raises(ParseError, match="decay.measQt"):
        cli.parse_config(p)


def test_unknown_section_rejected(tmp_path):
    p = write(tmp_path / "c.toml", "[decai]\ngamma = 0.5\n")
    with pytest.raises(ParseError, match="unknown key"):
        cli.parse_config(p)


def test_gamma_outside_unit_interval(tmp_path):
    p = write(tmp_path / "c.toml", "[decay]\ngamma = 1.5\n")
    with pytest.raises(ValidationError, match=r"gamma in \(0,1\)"):
        cli.parse_config(p)


@pytest.mark.parametrize("body, path, tag", [
    ("[grid]\npoints = [10.5]\n", "grid.points", "intlist"),
    ("[grid]\nextent = \"wide\"\n", "grid.extent", "floatlist"),
    ("[output]\nprefix = 3\n", "output.prefix", "str"),
    ("seed = true\n", "seed", "int"),
])
def test_leaf_type_mismatch(tmp_path, body, path, tag):
    p = write(tmp_path / "c.toml", body)
    with pytest.raises(ValidationError, match=f"{path}: expected {tag}"):
        cli.parse_config(p)


def test_bad_mode_value(tmp_path):
    p = write(tmp_path / "c.toml", 'mode = "fly"\n')
    with pytest.raises(ValidationError, match="mode: must be one of"):
        cli.parse_config(p)


def test_negative_seed(tmp_path):
    p = write(tmp_path / "c.toml", "seed = -1\n")
    with pytest.raises(ValidationError, match="seed"):
        cli.parse_config(p)


def test_missing_file_is_parse_error(tmp_path):
    with pytest.raises(ParseError, match="no such config"):
        cli.parse_config(str(tmp_path / "absent.toml"))


def test_toml_syntax_error(tmp_path):
    p = write(tmp_path / "c.toml", "mode = envelope\n")
    with pytest.raises(ParseError, match="TOML syntax"):
        cli.parse_config(p)


@pytest.mark.parametrize("body, key", [
    ("[integration]\ndt = 0.0\n", "integration.dt"),
    ("[integration]\nsample_every = 0\n", "integration.sample_every"),
    ("[decay]\np0 = -1.0\n", "decay.p0"),
])
def test_positivity_constraints(tmp_path, body, key):
    p = write(tmp_path / "c.toml", body)
    with pytest.raises(ValidationError, match=key):
        cli.parse_config(p)


def test_free_form_params_must_be_numeric(tmp_path):
    p = write(tmp_path / "c.toml", '[envelope.params]\nrho = "big"\n')
    with pytest.raises(ValidationError, match="envelope.params.rho"):
        cli.parse_config(p)


# ---------------------------------------------------------------------------
# build_feedback
# ---------------------------------------------------------------------------

def test_feedback_kind_mapping(tmp_path):
    p = write(tmp_path / "c.toml", """
[feedback.origin]
kind = "power"
exponent = 3.0
m0 = 0.5
M0 = 2.0

[feedback.infinity]
kind = "power"
r = 2.0
m = 1.0
M = 3.0
""")
    spec = cli.build_feedback(cli.parse_config(p))
    assert spec.origin == feedback.OriginPower(3.0, 0.5, 2.0)
    assert spec.infinity == feedback.InfinityPower(2.0, 1.0, 3.0)


def test_feedback_defaults_to_linear(tmp_path):
    spec = cli.build_feedback(cli.parse_config(write(tmp_path / "c.toml", "")))
    assert spec.origin == feedback.OriginLinear(1.0, 1.0)
    assert spec.infinity == feedback.InfinityLinear(1.0, 1.0)
    assert spec.is_linear()


def test_feedback_unknown_kind(tmp_path):
    p = write(tmp_path / "c.toml", '[feedback.origin]\nkind = "sinusoid"\n')
    with pytest.raises(ValidationError, match="feedback.origin.kind"):
        cli.build_feedback(cli.parse_config(p))


def test_feedback_bad_bound_is_wrapped(tmp_path):
    p = write(tmp_path / "c.toml", "[feedback.origin]\nm0 = -1.0\n")
    with pytest.raises(ValidationError, match="feedback:"):
        cli.build_feedback(cli.parse_config(p))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

def test_report_checks_and_overall_pass():
    r = Report()
    r.check_under("small", 1e-9, 1e-6)
    r.info("context", 42.0)
    assert r.passed
    r.check_under("big", 2.0, 1.0)
    assert not r.passed
    assert [row.passed for row in r.rows] == [True, True, False]


def test_report_check_under_uses_magnitude():
    r = Report()
    r.check_under("signed", -0.5, 1.0)
    assert r.rows[0].passed


def test_report_csv_format(tmp_path):
    r = Report()
    r.add("alpha", 0.5, 1.0, True)
    r.info("beta", 2.0)
    r.add("gamma", 3.0, 1.0, False)
    path = tmp_path / "report.csv"
    r.to_csv(str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "name,measured,threshold,pass"
    assert lines[1] == "alpha,0.5,1,true"
    assert lines[2] == "beta,2,inf,true"
    assert lines[3] == "gamma,3,1,false"


# ---------------------------------------------------------------------------
# emit_plot
# ---------------------------------------------------------------------------

def plot_csv(tmp_path, body="t,E\n0,1\n1,0.5\n2,0.25\n"):
    return write(tmp_path / "data.csv", body)


def test_svg_structure(tmp_path):
    svg = tmp_path / "out.svg"
    cli.emit_plot(plot_csv(tmp_path), str(svg))
    text = svg.read_text()
    assert text.startswith("<svg xmlns")
    assert "<polyline" in text
    assert ">E</text>" in text
    assert text.endswith("</svg>\n")


def test_svg_deterministic(tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    csv_path = plot_csv(tmp_path)
    cli.emit_plot(csv_path, str(a), "semilogy")
    cli.emit_plot(csv_path, str(b), "semilogy")
    assert a.read_bytes() == b.read_bytes()


def test_semilogy_drops_nonpositive_points(tmp_path):
    csv_path = plot_csv(tmp_path, "t,E\n0,1\n1,0\n2,0.25\n3,0.1\n")
    svg = tmp_path / "out.svg"
    cli.emit_plot(csv_path, str(svg), "semilogy")
    poly = [ln for ln in svg.read_text().splitlines() if "<polyline" in ln]
    assert len(poly) == 1
    assert poly[0].count(",") == 3  # three surviving points


def test_all_nonpositive_series_fails(tmp_path):
    csv_path = plot_csv(tmp_path, "t,E\n0,-1\n1,-2\n")
    with pytest.raises(MalformedCSV, match="no plottable points"):
        cli.emit_plot(csv_path, str(tmp_path / "out.svg"), "semilogy")


@pytest.mark.parametrize("body, msg", [
    ("", "empty CSV"),
    ("t,E\n", "empty CSV"),
    ("t\n0\n1\n", "two columns"),
    ("t,E\n0,1\n1\n", "fields"),
    ("t,E\n0,one\n", "non-numeric"),
])
def test_malformed_csv(tmp_path, body, msg):
    csv_path = plot_csv(tmp_path, body)
    with pytest.raises(MalformedCSV, match=msg):
        cli.emit_plot(csv_path, str(tmp_path / "out.svg"))


def test_unknown_axes(tmp_path):
    with pytest.raises(ValueError, match="axes"):
        cli.emit_plot(plot_csv(tmp_path), str(tmp_path / "out.svg"), "polar")


# ---------------------------------------------------------------------------
# thread cap environment variable
# ---------------------------------------------------------------------------

def test_thread_cap_default(monkeypatch):
    monkeypatch.delenv("WAVEDECAY_THREADS", raising=False)
    assert cli._thread_cap() == 0


def test_thread_cap_parses(monkeypatch):
    monkeypatch.setenv("WAVEDECAY_THREADS", "4")
    assert cli._thread_cap() == 4


@pytest.mark.parametrize("raw", ["junk", "-2", "1.5"])
def test_thread_cap_rejects(monkeypatch, raw):
    monkeypatch.setenv("WAVEDECAY_THREADS", raw)
    with pytest.raises(ValidationError, match="WAVEDECAY_THREADS"):
        cli._thread_cap()


# ---------------------------------------------------------------------------
# main: exit codes and artifacts
# ---------------------------------------------------------------------------

def test_main_envelope_succeeds(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", ENVELOPE_TOML)
    out = tmp_path / "out"
    assert cli.main(["envelope", "--config", cfg, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "PASS closed_form_match_rel_err" in stdout
    for name in ("envelope_curve.csv", "envelope_curve.svg",
                 "envelope_report.csv"):
        assert (out / name).exists()


def test_main_mode_mismatch(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", ENVELOPE_TOML)
    rc = cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "config error:" in err and "config says" in err


def test_main_config_error(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", "[decay]\ngamma = 1.5\n")
    rc = cli.main(["envelope", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 1
    assert "config error:" in capsys.readouterr().err


def test_main_seed_override_validated(tmp_path, capsys):
    cfg = write(tmp_path / "c.toml", ENVELOPE_TOML)
    rc = cli.main(["envelope", "--config", cfg, "--out", str(tmp_path / "o"),
                   "--seed", "-3"])
    assert rc == 1
    assert "seed" in capsys.readouterr().err


def test_main_numeric_error(tmp_path, capsys):
    # time step above the mesh spacing trips the stability guard
    cfg = write(tmp_path / "c.toml", """
mode = "simulate"

[grid]
extent = [1.0]
points = [101]

[integration]
dt = 0.02
t_max = 1.0

[init]
family = "eigenmode"
amplitude = 1.0
""")
    rc = cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "numeric error: CFLViolation" in capsys.readouterr().err


def test_main_check_failure(tmp_path, capsys):
    # horizon too short for interior rays to reach the collar
    cfg = write(tmp_path / "c.toml", """
mode = "raytrace"

[medium]
kind = "constant"
dim = 1

[grid]
extent = [1.0]

[damping]
collar_width = 0.1

[bundle]
n_pos = 19
t_max = 0.05
ds = 1e-3
""")
    rc = cli.main(["raytrace", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "FAIL" in capsys.readouterr().out


def test_main_rejects_unknown_mode_at_usage_level(tmp_path):
    cfg = write(tmp_path / "c.toml", ENVELOPE_TOML)
    with pytest.raises(SystemExit) as exc:
        cli.main(["fly", "--config", cfg])
    assert exc.value.code == 2


def test_module_entrypoint(tmp_path):
    cfg = write(tmp_path / "c.toml", ENVELOPE_TOML)
    proc = subprocess.run(
        [sys.executable, "-m", "wavedecay", "envelope", "--config", cfg,
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "PASS" in proc.stdout


# ---------------------------------------------------------------------------
# reproduce mode
# ---------------------------------------------------------------------------

def test_reproduce_tabulates_catalog(tmp_path):
    cfg = cli.parse_config(write(tmp_path / "c.toml", 'mode = "reproduce"\n'))
    report = cli.run_mode(cfg, str(tmp_path))
    assert report.passed
    assert len(report.rows) == 7

    lines = (tmp_path / "reproduce_tables.csv").read_text().splitlines()
    assert len(lines) == 6
    header = lines[0].split(",")
    assert header[0] == "attribute" and len(header) == 8
    assert lines[1].startswith("table,1,1,1,1,1,2,2")
    assert lines[2].split(",")[0] == "decay_form"
    errs = [float(v) for v in lines[5].split(",")[1:]]
    assert all(e < 1e-5 for e in errs)

    report_lines = (tmp_path / "reproduce_report.csv").read_text().splitlines()
    assert all(ln.endswith("true") for ln in report_lines[1:])
