"""Experiment driver: TOML configs in, CSV/SVG artifacts and a report out.

Five modes share one config format.  ``envelope`` builds the decay ODE
from a feedback law and solves it against the closed-form catalog;
``simulate`` runs the finite-difference solver and fits decay forms;
``raytrace`` scores a ray bundle against the damping collar; ``verify``
runs a fast deterministic property battery; ``reproduce`` regenerates
the decay-family catalog as a CSV matrix.

Exit codes partition failures: 1 config (parse or validation), 2 numeric
(solver/construction breakdown), 3 failed report checks.  Same config
and seed give byte-identical outputs; floats are serialized with 17
significant digits.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import envelope, feedback, raytrace, wavesim


class ParseError(Exception):
    """Config file is syntactically broken or has unknown keys."""


class ValidationError(Exception):
    """Config value violates a documented constraint."""


class MalformedCSV(Exception):
    """CSV lacks the numeric columns a plot needs."""


MODES = ("envelope", "simulate", "raytrace", "verify", "reproduce")

# exceptions that signal a numeric breakdown at run time (exit code 2)
NUMERIC_ERRORS = (
    feedback.ConstructionFailed, feedback.OutOfRange, feedback.NoConvergence,
    envelope.InvalidExponents, envelope.MissingD0, envelope.StepTooLarge,
    envelope.UnknownExample, envelope.InvalidParams,
    wavesim.CFLViolation, wavesim.NodeSolveFailure, wavesim.ZeroDenominator,
    wavesim.InsufficientData,
    raytrace.DegenerateDirection, raytrace.LeftDomain,
    FloatingPointError, ZeroDivisionError, OverflowError,
    np.linalg.LinAlgError,
)


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

# leaf tags: float (int accepted), int, str, floatlist, intlist;
# "{float}" admits arbitrary keys with numeric values
_SCHEMA = {
    "mode": "str",
    "seed": "int",
    "feedback": {
        "origin": {"kind": "str", "exponent": "float", "m0": "float", "M0": "float"},
        "infinity": {"kind": "str", "r": "float", "m": "float", "M": "float"},
    },
    "source": {"p": "float", "k": "float"},
    "grid": {"extent": "floatlist", "points": "intlist"},
    "damping": {"collar_width": "float", "a0": "float", "a_max": "float"},
    "decay": {"gamma": "float", "C_obs": "float", "D0": "float",
              "measQT": "float", "p0": "float", "E0": "float", "T0": "float",
              "t0": "float", "delta": "float"},
    "integration": {"dt": "float", "t_max": "float", "ds": "float",
                    "sample_every": "int", "burn_in": "float"},
    "init": {"family": "str", "amplitude": "float", "modes": "intlist",
             "center": "floatlist", "width": "float", "mmax": "int"},
    "medium": {"kind": "str", "dim": "int", "rho": "float",
               "k_diag": "floatlist", "speeds": "floatlist", "beta": "float"},
    "bundle": {"n_pos": "int", "n_dir": "int", "t_max": "float", "ds": "float"},
    "envelope": {"example": "str", "tolerance": "float", "params": "{float}"},
    "simulate": {"fit": "str", "r2_min": "float"},
    "output": {"prefix": "str"},
}


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_leaf(value, tag: str, path: str) -> None:
    if tag == "float":
        ok = _is_number(value)
    elif tag == "int":
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif tag == "str":
        ok = isinstance(value, str)
    elif tag == "floatlist":
        ok = isinstance(value, list) and value and all(_is_number(v) for v in value)
    elif tag == "intlist":
        ok = (isinstance(value, list) and value
              and all(isinstance(v, int) and not isinstance(v, bool) for v in value))
    else:
        raise AssertionError(f"bad schema tag {tag}")
    if not ok:
        raise ValidationError(f"{path}: expected {tag}")


def _check_section(data: dict, schema: dict, path: str) -> None:
    for key, value in data.items():
        here = f"{path}.{key}" if path else key
        if key not in schema:
            raise ParseError(f"unknown key {here!r}")
        sub = schema[key]
        if sub == "{float}":
            if not isinstance(value, dict):
                raise ValidationError(f"{here}: expected a table of numbers")
            for pk, pv in value.items():
                if not _is_number(pv):
                    raise ValidationError(f"{here}.{pk}: expected float")
        elif isinstance(sub, dict):
            if not isinstance(value, dict):
                raise ValidationError(f"{here}: expected a table")
            _check_section(value, sub, here)
        else:
            _check_leaf(value, sub, here)


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (sections stay as plain mappings)."""

    mode: str | None
    seed: int
    data: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    def has(self, name: str) -> bool:
        return name in self.data


def parse_config(path) -> ExperimentConfig:
    """Read and validate a TOML experiment config.

    Unknown keys are hard ParseErrors; values violating documented
    constraints raise ValidationError naming the key.
    """
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ParseError(f"no such config file: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"TOML syntax: {exc}") from None

    _check_section(data, _SCHEMA, "")

    mode = data.get("mode")
    if mode is not None and mode not in MODES:
        raise ValidationError(f"mode: must be one of {', '.join(MODES)}")
    seed = int(data.get("seed", 0))
    if seed < 0:
        raise ValidationError("seed: must be a non-negative integer")

    dec = data.get("decay", {})
    if "gamma" in dec and not (0.0 < dec["gamma"] < 1.0):
        raise ValidationError("decay.gamma: gamma in (0,1)")
    for key in ("C_obs", "measQT", "p0", "E0", "T0", "t0", "delta", "D0"):
        if key in dec and dec[key] <= 0.0:
            raise ValidationError(f"decay.{key}: must be positive")
    integ = data.get("integration", {})
    for key in ("dt", "t_max", "ds"):
        if key in integ and integ[key] <= 0.0:
            raise ValidationError(f"integration.{key}: must be positive")
    if "sample_every" in integ and integ["sample_every"] < 1:
        raise ValidationError("integration.sample_every: must be >= 1")
    return ExperimentConfig(mode=mode, seed=seed, data=data)


# ---------------------------------------------------------------------------
# section -> library object builders
# ---------------------------------------------------------------------------

def build_feedback(cfg: ExperimentConfig) -> feedback.FeedbackSpec:
    sec = cfg.section("feedback")
    og = sec.get("origin", {})
    inf = sec.get("infinity", {})
    okind = og.get("kind", "linear")
    ikind = inf.get("kind", "linear")
    try:
        if okind == "linear":
            origin = feedback.OriginLinear(og.get("m0", 1.0), og.get("M0", 1.0))
        elif okind == "power":
            origin = feedback.OriginPower(og.get("exponent", 3.0),
                                          og.get("m0", 1.0), og.get("M0", 1.0))
        elif okind == "exp_cubic":
            origin = feedback.OriginExpCubic()
        elif okind == "exp_abs":
            origin = feedback.OriginExpAbs()
        else:
            raise ValidationError(
                "feedback.origin.kind: one of linear, power, exp_cubic, exp_abs")
        if ikind == "linear":
            infinity = feedback.InfinityLinear(inf.get("m", 1.0), inf.get("M", 1.0))
        elif ikind == "power":
            infinity = feedback.InfinityPower(inf.get("r", 1.0),
                                              inf.get("m", 1.0), inf.get("M", 1.0))
        else:
            raise ValidationError("feedback.infinity.kind: one of linear, power")
        return feedback.FeedbackSpec(origin, infinity)
    except ValueError as exc:
        raise ValidationError(f"feedback: {exc}") from None


def build_grid(cfg: ExperimentConfig) -> wavesim.Grid:
    sec = cfg.section("grid")
    if not sec:
        raise ValidationError("grid: section required for this mode")
    try:
        return wavesim.Grid(tuple(sec.get("extent", [1.0])),
                            tuple(sec.get("points", [201])))
    except ValueError as exc:
        raise ValidationError(f"grid: {exc}") from None


def build_source(cfg: ExperimentConfig) -> wavesim.SourceSpec | None:
    if not cfg.has("source"):
        return None
    sec = cfg.section("source")
    try:
        return wavesim.SourceSpec(p=sec.get("p", 3.0),
                                  k=sec.get("k", math.inf))
    except ValueError as exc:
        raise ValidationError(f"source: {exc}") from None


def build_damping_field(cfg: ExperimentConfig,
                        grid: wavesim.Grid) -> wavesim.DampingField | None:
    if not cfg.has("damping"):
        return None
    sec = cfg.section("damping")
    try:
        return wavesim.build_damping(grid, sec.get("collar_width", 0.1),
                                     sec.get("a0", 0.5), sec.get("a_max", 1.0))
    except wavesim.InvalidCollar as exc:
        raise ValidationError(f"damping: {exc}") from None


def build_decay_problem(cfg: ExperimentConfig,
                        spec: feedback.FeedbackSpec) -> envelope.DecayProblem:
    sec = cfg.section("decay")
    try:
        h0 = feedback.build_h0(spec, delta=sec.get("delta", 1.0))
        r = spec.infinity.r if isinstance(spec.infinity, feedback.InfinityPower) else 1.0
        return envelope.DecayProblem(
            h0=h0, r=r, p0=sec.get("p0", 4.0), measQT=sec.get("measQT", 1.0),
            C_obs=sec.get("C_obs", 1.0), E0=sec.get("E0", 1.0),
            T0=sec.get("T0", 1.0), gamma=sec.get("gamma", 0.9),
            D0=sec.get("D0"))
    except ValueError as exc:
        raise ValidationError(f"decay: {exc}") from None


def build_medium(cfg: ExperimentConfig) -> raytrace.MediumFields:
    sec = cfg.section("medium")
    kind = sec.get("kind", "constant")
    dim = sec.get("dim", 1)
    if dim not in (1, 2):
        raise ValidationError("medium.dim: must be 1 or 2")
    if kind == "constant":
        return raytrace.constant_medium(dim, rho=sec.get("rho", 1.0),
                                        k_diag=sec.get("k_diag"))
    if kind == "radial":
        return raytrace.radial_medium(dim)
    if kind == "diagonal":
        return raytrace.diagonal_medium(dim, speeds=sec.get("speeds"),
                                        beta=sec.get("beta", 0.25))
    raise ValidationError("medium.kind: one of constant, radial, diagonal")


def build_init(cfg: ExperimentConfig) -> tuple[str, dict]:
    sec = dict(cfg.section("init"))
    family = sec.pop("family", "eigenmode")
    if family not in ("eigenmode", "gaussian", "random"):
        raise ValidationError("init.family: one of eigenmode, gaussian, random")
    if "modes" in sec:
        sec["modes"] = tuple(sec["modes"])
    if "center" in sec:
        sec["center"] = tuple(sec["center"])
    return family, sec


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckRow:
    name: str
    measured: float
    threshold: float
    passed: bool


@dataclass
class Report:
    rows: list[CheckRow] = field(default_factory=list)

    def add(self, name: str, measured: float, threshold: float,
            passed: bool) -> None:
        self.rows.append(CheckRow(name, float(measured), float(threshold), passed))

    def check_under(self, name: str, measured: float, threshold: float) -> None:
        self.add(name, measured, threshold, abs(measured) <= threshold)

    def info(self, name: str, measured: float) -> None:
        self.add(name, measured, math.inf, True)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("name,measured,threshold,pass\n")
            for r in self.rows:
                fh.write(f"{r.name},{r.measured:.17g},{r.threshold:.17g},"
                         f"{'true' if r.passed else 'false'}\n")


def _write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


# ---------------------------------------------------------------------------
# SVG plotting
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _read_plot_csv(csv_path) -> tuple[list[str], np.ndarray]:
    try:
        with open(csv_path) as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise MalformedCSV(f"cannot read {csv_path}: {exc}") from None
    if len(lines) < 2:
        raise MalformedCSV("empty CSV")
    header = lines[0].split(",")
    if len(header) < 2:
        raise MalformedCSV("need at least two columns")
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != len(header):
            raise MalformedCSV(f"row at line {i} has {len(parts)} fields, "
                               f"expected {len(header)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise MalformedCSV(f"non-numeric value at line {i}") from None
    return header, np.asarray(rows, float)


def emit_plot(csv_path, svg_path, axes: str = "linear") -> None:
    """Render a CSV (first column x, remaining columns series) to SVG.

    Deterministic output: same CSV and axes give identical bytes.
    """
    if axes not in ("linear", "semilogy", "loglog"):
        raise ValueError("axes: one of linear, semilogy, loglog")
    header, data = _read_plot_csv(csv_path)
    logx = axes == "loglog"
    logy = axes in ("semilogy", "loglog")

    series = []
    for j in range(1, len(header)):
        x = data[:, 0].copy()
        y = data[:, j].copy()
        keep = np.isfinite(x) & np.isfinite(y)
        if logx:
            keep &= x > 0.0
        if logy:
            keep &= y > 0.0
        x, y = x[keep], y[keep]
        if x.size >= 2:
            series.append((header[j],
                           np.log10(x) if logx else x,
                           np.log10(y) if logy else y))
    if not series:
        raise MalformedCSV("no plottable points after axis filtering")

    xmin = min(float(s[1].min()) for s in series)
    xmax = max(float(s[1].max()) for s in series)
    ymin = min(float(s[2].min()) for s in series)
    ymax = max(float(s[2].max()) for s in series)
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5

    W, H = 640.0, 420.0
    ML, MR, MT, MB = 64.0, 16.0, 18.0, 46.0

    def sx(v):
        return ML + (v - xmin) / (xmax - xmin) * (W - ML - MR)

    def sy(v):
        return H - MB - (v - ymin) / (ymax - ymin) * (H - MT - MB)

    def tick_label(v, log):
        return f"{10.0 ** v:.3g}" if log else f"{v:.4g}"

    out = []
    out.append(f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.0f}" '
               f'height="{H:.0f}" viewBox="0 0 {W:.0f} {H:.0f}">')
    out.append(f'<rect width="{W:.0f}" height="{H:.0f}" fill="white"/>')
    out.append(f'<rect x="{ML:.1f}" y="{MT:.1f}" width="{W - ML - MR:.1f}" '
               f'height="{H - MT - MB:.1f}" fill="none" stroke="#404040" '
               'stroke-width="1"/>')
    for i in range(5):
        vx = xmin + i * (xmax - xmin) / 4.0
        vy = ymin + i * (ymax - ymin) / 4.0
        px, py = sx(vx), sy(vy)
        out.append(f'<line x1="{px:.2f}" y1="{H - MB:.2f}" x2="{px:.2f}" '
                   f'y2="{H - MB + 5:.2f}" stroke="#404040"/>')
        out.append(f'<text x="{px:.2f}" y="{H - MB + 18:.2f}" font-size="11" '
                   f'text-anchor="middle" font-family="sans-serif">'
                   f'{tick_label(vx, logx)}</text>')
        out.append(f'<line x1="{ML - 5:.2f}" y1="{py:.2f}" x2="{ML:.2f}" '
                   f'y2="{py:.2f}" stroke="#404040"/>')
        out.append(f'<text x="{ML - 8:.2f}" y="{py + 4:.2f}" font-size="11" '
                   f'text-anchor="end" font-family="sans-serif">'
                   f'{tick_label(vy, logy)}</text>')
    out.append(f'<text x="{(ML + W - MR) / 2:.2f}" y="{H - 8:.2f}" '
               f'font-size="12" text-anchor="middle" '
               f'font-family="sans-serif">{header[0]}</text>')
    for idx, (name, x, y) in enumerate(series):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                   'stroke-width="1.5"/>')
        out.append(f'<text x="{W - MR - 6:.2f}" y="{MT + 16 + 14 * idx:.2f}" '
                   f'font-size="11" text-anchor="end" fill="{color}" '
                   f'font-family="sans-serif">{name}</text>')
    out.append("</svg>")
    with open(svg_path, "w") as fh:
        fh.write("\n".join(out) + "\n")


# ---------------------------------------------------------------------------
# modes
# ---------------------------------------------------------------------------

def _prefix(cfg: ExperimentConfig, mode: str) -> str:
    return cfg.section("output").get("prefix", mode)


def _mode_envelope(cfg: ExperimentConfig, out: str) -> Report:
    spec = build_feedback(cfg)
    prob = build_decay_problem(cfg, spec)
    q = envelope.build_problem_q(prob)
    integ = cfg.section("integration")
    t_max = integ.get("t_max", 20.0 * prob.T0)
    ds = integ.get("ds", 1e-3)
    if t_max <= prob.T0:
        raise ValidationError("integration.t_max: must exceed decay.T0")
    curve = envelope.solve_envelope(q, E0=prob.E0,
                                    t_max=t_max / prob.T0 - 1.0, dt=ds)
    pfx = _prefix(cfg, "envelope")
    csv_path = os.path.join(out, f"{pfx}_curve.csv")
    abs_curve = envelope.EnvelopeCurve((curve.t + 1.0) * prob.T0, curve.S)
    abs_curve.to_csv(csv_path)
    emit_plot(csv_path, os.path.join(out, f"{pfx}_curve.svg"), "semilogy")

    report = Report()
    report.info("final_S", float(curve.S[-1]))
    report.info("K_constant", envelope.K_constant(
        prob.growth_class(), prob.C_obs, prob.D0, prob.r, prob.p0))
    env_sec = cfg.section("envelope")
    if "example" in env_sec:
        params = dict(env_sec.get("params", {}))
        params.setdefault("E0", prob.E0)
        params.setdefault("T0", prob.T0)
        tol = env_sec.get("tolerance", 1e-3)
        err = envelope.match_closed_form(curve, env_sec["example"], params)
        report.check_under("closed_form_match_rel_err", err, tol)
    report.to_csv(os.path.join(out, f"{pfx}_report.csv"))
    return report


def _mode_simulate(cfg: ExperimentConfig, out: str) -> Report:
    grid = build_grid(cfg)
    src = build_source(cfg)
    damp = build_damping_field(cfg, grid)
    spec = build_feedback(cfg) if damp is not None else None
    family, init_params = build_init(cfg)
    integ = cfg.section("integration")
    sim = wavesim.SimConfig(
        grid=grid, dt=integ.get("dt", 1e-3), t_max=integ.get("t_max", 10.0),
        source=src, damping=damp, feedback=spec,
        sample_every=integ.get("sample_every", 20),
        init=family, init_params=init_params, seed=cfg.seed)
    trace = wavesim.run(sim)

    pfx = _prefix(cfg, "simulate")
    csv_path = os.path.join(out, f"{pfx}_trace.csv")
    trace.to_csv(csv_path)
    emit_plot(csv_path, os.path.join(out, f"{pfx}_trace.svg"), "semilogy")

    report = Report()
    report.info("final_E", float(trace.E[-1]))
    resid = wavesim.energy_identity_residual(trace, 0, len(trace.times) - 1)
    report.check_under("energy_identity_residual", resid, 1e-3)
    sim_sec = cfg.section("simulate")
    if "fit" in sim_sec:
        fit = wavesim.fit_decay(trace, sim_sec["fit"],
                                burn_in=integ.get("burn_in", 0.0))
        report.info(f"fit_{fit.model}_param", fit.param)
        report.add(f"fit_{fit.model}_r2", fit.r2, sim_sec.get("r2_min", 0.0),
                   fit.r2 >= sim_sec.get("r2_min", 0.0))
    report.to_csv(os.path.join(out, f"{pfx}_report.csv"))
    return report


def _collar_omega(extent: tuple[float, ...], width: float):
    """Membership test for the boundary collar of a box, batched over
    trailing axis = space dimension."""
    ext = np.asarray(extent, float)

    def omega(pos: np.ndarray) -> np.ndarray:
        pos = np.asarray(pos, float)
        d = np.minimum(pos, ext - pos).min(axis=-1)
        return d <= width + 1e-12

    return omega


def _mode_raytrace(cfg: ExperimentConfig, out: str) -> Report:
    med = build_medium(cfg)
    grid_sec = cfg.section("grid")
    extent = tuple(float(e) for e in grid_sec.get("extent", [1.0] * med.dim))
    if len(extent) != med.dim:
        raise ValidationError("grid.extent: dimension must match medium.dim")
    domain = raytrace.Box((0.0,) * med.dim, extent)
    bun = cfg.section("bundle")
    bundle = raytrace.sample_bundle(domain, bun.get("n_pos", 99),
                                    bun.get("n_dir", 8))
    width = cfg.section("damping").get("collar_width", 0.1)
    omega = _collar_omega(extent, width)
    ds = bun.get("ds", 1e-3)
    gcc = raytrace.gcc_entry_time(med, domain, omega, bundle,
                                  t_max=bun.get("t_max", 5.0), dt=ds)

    pfx = _prefix(cfg, "raytrace")
    gcc.to_csv(os.path.join(out, f"{pfx}_gcc.csv"))
    x0, d0 = bundle[gcc.worst_ray if math.isfinite(gcc.T0) else 0]
    start = raytrace.make_null(med, x0, d0)
    n_steps = max(int(round(bun.get("t_max", 5.0) / ds)), 1)
    try:
        path = raytrace.flow(med, start, ds, n_steps, bounds=domain)
    except raytrace.LeftDomain:
        path = raytrace.flow(med, start, ds, n_steps)
    path.to_csv(os.path.join(out, f"{pfx}_ray.csv"))

    report = Report()
    report.add("gcc_entry_time", gcc.T0, math.inf, math.isfinite(gcc.T0))
    entered = float(np.mean(np.isfinite(gcc.entry_times)))
    report.add("bundle_fraction_entered", entered, 1.0, entered == 1.0)
    report.info("symbol_drift",
                float(np.max(np.abs(path.ptilde - path.ptilde[0]))))
    report.to_csv(os.path.join(out, f"{pfx}_report.csv"))
    return report


def _mode_reproduce(cfg: ExperimentConfig, out: str) -> Report:
    """Solve every catalog family and tabulate its decay form."""
    families = [
        # (family, table, decay form, params)
        ("exp_origin", 1, "exponential",
         {"E0": 1.0, "K": 1.0, "measQT": 1.0, "m0": 1.0, "M0": 1.0}),
        ("poly_origin", 1, "power", {"E0": 1.0, "C": 0.3, "p": 3.0}),
        ("sublin_origin", 1, "power", {"E0": 1.0, "C": 0.4, "theta": 0.5}),
        ("exp_cubic", 1, "log_inverse", {"E0": 1.0, "C": 0.5}),
        ("exp_abs", 1, "log_inverse_sq", {"E0": 1.0, "C": 0.5}),
        ("sublin_infinity", 2, "power",
         {"E0": 1.0, "alpha": 0.45, "theta": 0.5, "p0": 4.0}),
        ("superlin_infinity", 2, "power",
         {"E0": 1.0, "alpha": 0.45, "r": 1.5, "p0": 4.0}),
    ]
    integ = cfg.section("integration")
    ds = integ.get("ds", 1e-3)
    t_max = integ.get("t_max", 20.0)

    report = Report()
    names, tables, forms, tails, closed_tails, errs = [], [], [], [], [], []
    for name, table, form, params in families:
        rate = envelope.example_ode_rate(name, params)
        curve = envelope.solve_envelope(rate, E0=params["E0"],
                                        t_max=t_max - 1.0, dt=ds)
        err = envelope.match_closed_form(curve, name, params)
        names.append(name)
        tables.append(table)
        forms.append(form)
        tails.append(float(curve.S[-1]))
        closed_tails.append(envelope.closed_form(name, params, t_max))
        errs.append(err)
        report.check_under(f"{name}_match_rel_err", err, 1e-5)

    pfx = _prefix(cfg, "reproduce")
    with open(os.path.join(out, f"{pfx}_tables.csv"), "w") as fh:
        fh.write("attribute," + ",".join(names) + "\n")
        fh.write("table," + ",".join(str(t) for t in tables) + "\n")
        fh.write("decay_form," + ",".join(forms) + "\n")
        fh.write("solved_tail," + ",".join(f"{v:.17g}" for v in tails) + "\n")
        fh.write("closed_tail," + ",".join(f"{v:.17g}" for v in closed_tails) + "\n")
        fh.write("match_rel_err," + ",".join(f"{v:.17g}" for v in errs) + "\n")
    report.to_csv(os.path.join(out, f"{pfx}_report.csv"))
    return report


def _mode_verify(cfg: ExperimentConfig, out: str) -> Report:
    """Fast deterministic property battery; report.csv is written last,
    after every check has run, so a crash leaves no partial report."""
    rng = np.random.default_rng(cfg.seed)
    report = Report()
    pfx = _prefix(cfg, "verify")

    # 1. q for the identity h is x/3
    q = envelope.build_q(feedback.identity_fn(), 1.0)
    xg = np.linspace(0.0, 10.0, 201)
    report.check_under("q_identity_max_err",
                       float(np.max(np.abs(q(xg) - xg / 3.0))), 1e-9)

    # 2. certified concave majorant for cubic feedback
    spec3 = feedback.FeedbackSpec(feedback.OriginPower(3.0, 1.0, 1.0),
                                  feedback.InfinityLinear(1.0, 1.0))
    h0 = feedback.build_h0(spec3)
    violation = feedback.verify_h0(spec3, h0, 2001)
    report.add("h0_certificate_max_violation", violation, 0.0, violation <= 0.0)

    # 3. golden closed form at coarse resolution
    params = {"E0": 1.0, "C": 0.3, "p": 3.0}
    rate = envelope.example_ode_rate("poly_origin", params)
    curve = envelope.solve_envelope(rate, E0=1.0, t_max=10.0, dt=1e-2)
    report.check_under("poly_origin_match_rel_err",
                       envelope.match_closed_form(curve, "poly_origin", params),
                       1e-6)
    env_csv = os.path.join(out, f"{pfx}_envelope.csv")
    curve.to_csv(env_csv)

    # 4. recursion domination for random concave nonlinearities
    worst_excess = 0.0
    for _ in range(3):
        c1 = rng.uniform(0.1, 0.5)
        c2 = rng.uniform(0.0, 0.5)
        a = rng.uniform(0.3, 0.9)
        p = feedback.MonotoneFn(
            fn=lambda x, c1=c1, c2=c2, a=a: c1 * np.asarray(x, float)
            + c2 * np.asarray(x, float) ** a,
            concave=True)
        seq = envelope.lasiecka_sequence(p, 1.0, 50).s
        qq = envelope.build_recursion_q(p, x_max=100.0)
        sc = envelope.solve_envelope(qq, E0=1.0, t_max=50.0, dt=0.05)
        idx = np.searchsorted(sc.t, np.arange(51.0))
        worst_excess = max(worst_excess, float(np.max(seq - sc.S[idx])))
    report.check_under("recursion_domination_excess", worst_excess, 1e-8)

    # 5. undamped standing mode conserves energy
    grid = wavesim.Grid((1.0,), (101,))
    st = wavesim.WaveState(np.sin(np.pi * grid.axes()[0]), grid.zeros(), 0.0)
    E0 = wavesim.energy(st, grid, None)
    for _ in range(1000):
        st = wavesim.step(st, grid, None, None, None, 2e-3)
    report.check_under("conservation_drift",
                       (wavesim.energy(st, grid, None) - E0) / E0, 1e-9)

    # 6. damped energy identity
    damp = wavesim.build_damping(grid, 0.1, 0.5, 1.0)
    sim = wavesim.SimConfig(grid=grid, dt=2e-3, t_max=2.0,
                            source=wavesim.SourceSpec(), damping=damp,
                            feedback=spec3, sample_every=50)
    trace = wavesim.run(sim)
    trace_csv = os.path.join(out, f"{pfx}_trace.csv")
    trace.to_csv(trace_csv)
    report.check_under(
        "energy_identity_residual",
        wavesim.energy_identity_residual(trace, 0, len(trace.times) - 1), 1e-4)

    # 7. source truncation above the solution range changes nothing
    sim_k = replace(sim, source=wavesim.SourceSpec(k=4.0))
    trace_k = wavesim.run(sim_k)
    report.check_under("truncation_trace_diff",
                       float(np.max(np.abs(trace_k.E - trace.E))), 1e-12)

    # 8. straight-ray entry time for the 1D collar
    med = raytrace.constant_medium(1)
    domain = raytrace.Box((0.0,), (1.0,))
    bundle = raytrace.sample_bundle(domain, 99)
    gcc = raytrace.gcc_entry_time(med, domain, _collar_omega((1.0,), 0.1),
                                  bundle, t_max=2.0, dt=1e-3)
    gcc_csv = os.path.join(out, f"{pfx}_gcc.csv")
    gcc.to_csv(gcc_csv)
    report.check_under("gcc_entry_time_err", gcc.T0 - 0.8, 2e-2)

    # 9. symbol conservation along the flow
    pp = raytrace.make_null(raytrace.radial_medium(2), [0.3, -0.2], [1.0, 0.4])
    path = raytrace.flow(raytrace.radial_medium(2), pp, 1e-3, 1000)
    report.check_under("symbol_drift",
                       float(np.max(np.abs(path.ptilde - path.ptilde[0]))),
                       1e-10)

    emit_plot(env_csv, os.path.join(out, f"{pfx}_envelope.svg"), "semilogy")
    emit_plot(trace_csv, os.path.join(out, f"{pfx}_trace.svg"), "linear")
    report.to_csv(os.path.join(out, f"{pfx}_report.csv"))
    return report


def run_mode(cfg: ExperimentConfig, out_dir: str) -> Report:
    """Dispatch one experiment mode; artifacts land in out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    if cfg.mode == "envelope":
        return _mode_envelope(cfg, out_dir)
    if cfg.mode == "simulate":
        return _mode_simulate(cfg, out_dir)
    if cfg.mode == "raytrace":
        return _mode_raytrace(cfg, out_dir)
    if cfg.mode == "verify":
        return _mode_verify(cfg, out_dir)
    if cfg.mode == "reproduce":
        return _mode_reproduce(cfg, out_dir)
    raise ValidationError(f"mode: must be one of {', '.join(MODES)}")


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _thread_cap() -> int:
    raw = os.environ.get("WAVEDECAY_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(
            "WAVEDECAY_THREADS: must be a non-negative integer") from None
    if n < 0:
        raise ValidationError("WAVEDECAY_THREADS: must be a non-negative integer")
    return n


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wavedecay",
        description="decay-rate experiments for damped semilinear waves")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="TOML experiment config")
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    args = parser.parse_args(argv)

    try:
        _thread_cap()  # engines are serial; the cap is validated, not needed
        cfg = parse_config(args.config)
        if cfg.mode is not None and cfg.mode != args.mode:
            raise ValidationError(
                f"mode: config says {cfg.mode!r} but {args.mode!r} was requested")
        seed = args.seed if args.seed is not None else cfg.seed
        if seed < 0:
            raise ValidationError("seed: must be a non-negative integer")
        cfg = ExperimentConfig(mode=args.mode, seed=seed, data=cfg.data)
        report = run_mode(cfg, args.out)
    except (ParseError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERIC_ERRORS as exc:
        print(f"numeric error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    for r in report.rows:
        tag = "PASS" if r.passed else "FAIL"
        print(f"{tag} {r.name}: measured {r.measured:.6g} "
              f"(threshold {r.threshold:.6g})")
    if not report.passed:
        return 3
    return 0
