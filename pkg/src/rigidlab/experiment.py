"""Experiment configs, validation and the named pipelines behind the CLI.

A config is a YAML mapping::

    experiment: bump-rho
    pipeline: rho-rigidity
    medium:                      # media schema; lengths in units of the ball radius
      kind: density
      dimension: 2
      bumps: [{amplitude: 0.2, center: [0, 0], radius: 0.8}]
    numerics:                    # h, dt, T have no defaults
      h: 0.015                   # grid spacing (length)
      dt: 0.0053                 # time step (time)
      T: 3.88                    # horizon (time)
      epsilon: 0.06              # mollifier half-width (length), default 4h
    omega: [1, 0]                # default e_1; metric-rigidity always runs Omega
    output: runs/bump-rho

Every run is deterministic; there are no seeds.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, io
from .arrival import (
    arrival_by_shooting,
    arrival_by_sweeping,
    arrival_difference,
    default_grid,
    eikonal_residual,
    lipschitz_excess,
)
from .forward import (
    ConfigError,
    Violation,
    WaveConfig,
    cfl_limit,
    euclidean_trace,
    horizon_bound,
    reflection_radius,
    solve_wave,
    trace_distance,
)
from .geodesics import exit_map, integrate_fan, sigma_minus_fan
from .media import compute_bounds, medium_from_dict
from .rigidity import (
    Check,
    RigidityReport,
    _check,
    _info,
    diffeo_condition_checklist,
    omega_set,
    verify_metric_rigidity,
    verify_rho_rigidity,
)

log = logging.getLogger(__name__)

PIPELINES = ("forward", "geodesics", "arrival", "rho-rigidity", "metric-rigidity", "diffeo-checklist")
RIGIDITY = ("rho-rigidity", "metric-rigidity")
WAVE_PIPELINES = ("forward", "rho-rigidity", "metric-rigidity", "diffeo-checklist")
TOP_KEYS = {"experiment", "pipeline", "medium", "numerics", "omega", "output", "deterministic"}
NUMERIC_KEYS = {"h", "dt", "T", "epsilon", "fan_spacing", "ray_dt", "tolerances", "trace_samples", "snapshot_stride"}
TOLERANCES = {"cg": 1e-12, "sweep": 1e-10, "geodesic": 1e-6}
REQUIRED_NUMERICS = ("h", "dt", "T")


class ExperimentConfigError(ConfigError):
    """A config problem tied to one field (and, when known, a source line)."""

    def __init__(self, field_name, message, line=None, source=None):
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(f"{where}{field_name}: {message}")
        self.field = field_name
        self.line = line


def _key_lines(node, prefix="", out=None):
    """Map dotted key paths to 1-based source lines from a composed YAML node."""
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            _key_lines(v, path, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            path = f"{prefix}[{i}]"
            out[path] = v.start_mark.line + 1
            _key_lines(v, path, out)
    return out


@dataclass
class ExperimentConfig:
    name: str
    pipeline: str
    medium: object
    h: float
    dt: float
    T: float
    epsilon: float
    omega: tuple
    output: str | None = None
    fan_spacing: float | None = None
    ray_dt: float = 1e-3
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCES))
    trace_samples: int | None = None
    snapshot_stride: int = 0
    raw: dict = field(default_factory=dict, repr=False)
    source: str | None = None
    lines: dict = field(default_factory=dict, repr=False)

    @property
    def dimension(self):
        return self.medium.dimension

    def directions(self):
        if self.pipeline == "metric-rigidity":
            return omega_set(self.dimension)
        return [np.asarray(self.omega, dtype=float)]

    def horizon_rule(self, g_max):
        """``(bound, text, fatal)`` for the pipeline's horizon constraint."""
        if self.pipeline in RIGIDITY:
            return horizon_bound(g_max), "4√g_max − 1", True
        if self.pipeline == "forward":
            return horizon_bound(g_max), "4√g_max − 1", False
        lower = 2.0 * math.sqrt(g_max) - 1.0
        return lower, "2√g_max − 1", self.pipeline in ("arrival", "diffeo-checklist")

    def wave_config(self, omega, **kw):
        return WaveConfig(
            self.medium,
            tuple(omega),
            self.T,
            self.h,
            self.epsilon,
            self.dt,
            trace_samples=self.trace_samples,
            **kw,
        )

    def error(self, key, message):
        return ExperimentConfigError(key, message, self.lines.get(key), self.source)

    def validate(self, allow_short_horizon=False):
        """Constraint report without running anything."""
        b = compute_bounds(self.medium)
        n = self.dimension
        problems, derived = [], {}
        derived.update({k: v for k, v in b.as_dict().items()})
        bound, text, fatal = self.horizon_rule(b.g_max)
        derived["horizon_bound"] = bound
        if not self.T > bound:
            msg = f"T={self.T:g} violates T > {text} = {bound:.2f}"
            hard = fatal and not allow_short_horizon
            if not hard:
                msg += " (allowed: --allow-short-horizon)" if fatal else " (allowed for solver tests)"
            problems.append(Violation("numerics.T", msg, hard))
        derived["epsilon"] = self.epsilon
        if self.pipeline in WAVE_PIPELINES:
            limit = cfl_limit(self.medium.kind, self.h, n, b)
            derived["cfl_dt"] = limit
            if self.dt > limit * (1 + 1e-12):
                problems.append(Violation("numerics.dt", f"dt={self.dt:g} violates the CFL limit dt ≤ {limit:.6g}"))
            rmin = reflection_radius(self.T, self.epsilon, self.h)
            derived["reflection_R"] = rmin
            derived["R"] = math.ceil(rmin / self.h - 1e-9) * self.h
            derived["wave_steps"] = int(math.ceil((self.T + 1.0 + self.epsilon) / self.dt - 1e-9))
            derived["wave_grid_points"] = (2 * int(round(derived["R"] / self.h)) + 1) ** n
        else:
            derived["ray_steps"] = int(math.ceil((self.T + 1.0) / self.dt - 1e-9))
        if self.pipeline == "metric-rigidity" and self.medium.kind != "metric":
            problems.append(Violation("pipeline", "metric-rigidity needs a metric medium"))
        if self.pipeline == "rho-rigidity" and self.medium.kind != "density":
            problems.append(Violation("pipeline", "rho-rigidity needs a density medium"))
        derived["directions"] = len(self.directions())
        return ValidationReport(self, problems, derived)


@dataclass
class ValidationReport:
    config: ExperimentConfig
    violations: list
    derived: dict

    @property
    def ok(self):
        return not any(v.fatal for v in self.violations)

    def raise_for_errors(self):
        fatal = [v for v in self.violations if v.fatal]
        if fatal:
            v = fatal[0]
            raise self.config.error(v.field, v.message.removeprefix(f"{v.field}: "))

    def to_text(self):
        c = self.config
        lines = [
            f"experiment: {c.name}",
            f"pipeline:   {c.pipeline}",
            f"medium:     {c.medium.describe()}",
            f"numerics:   h={c.h:g} dt={c.dt:g} T={c.T:g} epsilon={c.epsilon:g}",
            f"|Omega| = {self.derived['directions']} direction(s) to be run",
            "",
            "derived quantities:",
        ]
        w = max(len(k) for k in self.derived)
        for k, v in self.derived.items():
            lines.append(f"  {k:<{w}}  {v:.6g}" if isinstance(v, float) else f"  {k:<{w}}  {v}")
        lines.append("")
        for v in self.violations:
            tag = "VIOLATION" if v.fatal else "WARNING"
            lines.append(f"{tag} {v.field}: {v.message}")
        lines.append("OK" if self.ok else "INVALID")
        return "\n".join(lines) + "\n"


def _number(cfg_lines, source, key, value, positive=True, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ExperimentConfigError(key, f"expected a number, got {value!r}", cfg_lines.get(key), source)
    if integer and int(value) != value:
        raise ExperimentConfigError(key, f"expected an integer, got {value!r}", cfg_lines.get(key), source)
    value = int(value) if integer else float(value)
    if not math.isfinite(value) or (positive and value <= 0):
        raise ExperimentConfigError(key, f"must be positive, got {value!r}", cfg_lines.get(key), source)
    return value


def parse_config(text, source=None):
    """Parse and check a YAML experiment config; errors name the field and line."""
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise ExperimentConfigError("yaml", f"parse error: {problem}", line, source) from None
    lines = _key_lines(node) if node is not None else {}

    def err(key, msg):
        line = lines.get(key, lines.get(key.rpartition(".")[0]))
        return ExperimentConfigError(key, msg, line, source)

    if not isinstance(data, dict):
        raise err("config", "top level must be a mapping")
    unknown = sorted(set(data) - TOP_KEYS)
    if unknown:
        raise err(unknown[0], f"unknown key (allowed: {', '.join(sorted(TOP_KEYS))})")
    for key in ("experiment", "pipeline", "medium", "numerics"):
        if key not in data:
            raise err(key, "missing required field")
    name = str(data["experiment"])
    pipeline = data["pipeline"]
    if pipeline not in PIPELINES:
        raise err("pipeline", f"unknown pipeline {pipeline!r} (choose from {', '.join(PIPELINES)})")
    if data.get("deterministic", True) is not True:
        raise err("deterministic", "runs are always deterministic; the flag cannot be turned off")

    if not isinstance(data["medium"], dict):
        raise err("medium", "expected a mapping")
    try:
        medium = medium_from_dict(data["medium"])
    except (TypeError, ValueError) as exc:
        raise err("medium", str(exc)) from None

    num = data["numerics"]
    if not isinstance(num, dict):
        raise err("numerics", "expected a mapping")
    unknown = sorted(set(num) - NUMERIC_KEYS)
    if unknown:
        raise err(f"numerics.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(NUMERIC_KEYS))})")
    for key in REQUIRED_NUMERICS:
        if key not in num:
            raise err(f"numerics.{key}", "missing required field (no default: set it explicitly)")

    def number(key, **kw):
        return _number(lines, source, f"numerics.{key}", num[key], **kw)

    h = number("h")
    dt = number("dt")
    T = number("T", positive=False)
    if not T > -1.0:
        raise err("numerics.T", f"T={T:g} must exceed -1")
    eps = number("epsilon") if "epsilon" in num else 4.0 * h
    fan = number("fan_spacing") if "fan_spacing" in num else None
    ray_dt = number("ray_dt") if "ray_dt" in num else 1e-3
    samples = number("trace_samples", integer=True) if "trace_samples" in num else None
    stride = 0
    if "snapshot_stride" in num:
        stride = _number(lines, source, "numerics.snapshot_stride", num["snapshot_stride"], positive=False, integer=True)
        if stride < 0:
            raise err("numerics.snapshot_stride", f"must be non-negative, got {stride}")

    tols = dict(TOLERANCES)
    given = num.get("tolerances") or {}
    if not isinstance(given, dict):
        raise err("numerics.tolerances", "expected a mapping")
    for key, value in given.items():
        if key not in TOLERANCES:
            raise err(f"numerics.tolerances.{key}", f"unknown tolerance (allowed: {', '.join(TOLERANCES)})")
        tols[key] = _number(lines, source, f"numerics.tolerances.{key}", value)

    n = medium.dimension
    if "omega" in data and data["omega"] is not None:
        w = data["omega"]
        if not isinstance(w, list) or len(w) != n:
            raise err("omega", f"expected a list of {n} numbers")
        w = np.array([_number(lines, source, "omega", v, positive=False) for v in w])
        norm = float(np.linalg.norm(w))
        if norm == 0:
            raise err("omega", "direction must be non-zero")
        if abs(norm - 1.0) > 1e-12:
            raise err("omega", f"direction must have unit norm, got |omega|={norm:.12g}")
        omega = tuple(float(v) for v in w)
    else:
        omega = tuple(float(v) for v in np.eye(n)[0])
    out = data.get("output")
    return ExperimentConfig(
        name,
        pipeline,
        medium,
        h,
        dt,
        T,
        eps,
        omega,
        None if out is None else str(out),
        fan,
        ray_dt,
        tols,
        samples,
        stride,
        data,
        source,
        lines,
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ExperimentConfigError("config", f"cannot read file: {exc.strerror}", source=str(path)) from None
    return parse_config(text, str(path))


# ----------------------------------------------------------------------------
# pipelines; each returns a report and writes its artifacts into ``out``


def _label(omega):
    return ",".join(f"{v:.3g}" for v in omega)


def _trace_csv(cfg, trace, path, extra=()):
    head = [f"experiment={cfg.name}", f"medium={cfg.medium.describe()}", *extra]
    return trace.to_csv(path, head)


def run_forward(cfg, out, jobs=1):
    omega = cfg.directions()[0]
    wc = cfg.wave_config(omega, snapshot_stride=cfg.snapshot_stride)
    res = solve_wave(wc)
    exact = euclidean_trace(wc)
    vals = res.trace.values
    err = float(np.max(np.abs(vals - exact.values)))
    excursion = float(max(0.0, -vals.min(), vals.max() - 1.0))
    window = res.energy_window()
    drift = res.energy.drift(window)
    files = [_trace_csv(cfg, res.trace, out / "trace.csv")]
    files.append(
        io.write_csv(out / "energy.csv", ["t", "energy", "boundary_work", "conserved"], res.energy.to_rows(), res.config.header())
    )
    if res.field is not None:
        for k, (t, frame) in enumerate(zip(res.field.times, res.field.frames)):
            files.append(io.write_pgm(out / f"snapshot_{k:04d}.pgm", frame, 0.0, 1.0))
    checks = [
        _check("energy_drift", drift, 1e-3, detail=f"window [{window[0]:.3g}, {window[1]:.3g}]"),
        _check("trace_excursion", excursion, 0.1, detail="overshoot beyond [0, 1]"),
        _info("trace_linf_vs_plane_wave", err, "max |U - H_eps(t - x.omega)| on the boundary"),
        _info("trace_distance_vs_plane_wave", trace_distance(res.trace, exact)),
        _info("max_abs_u", res.max_abs),
    ]
    data = {"steps": res.steps, **res.config.derived()}
    return RigidityReport(cfg.name, cfg.medium.describe(), checks, "", data=data), files


def run_geodesics(cfg, out, jobs=1):
    omega = cfg.directions()[0]
    spacing = cfg.fan_spacing or 0.05
    tol = cfg.tolerances["geodesic"]
    starts = sigma_minus_fan(omega, spacing, ring_radius=None)
    stride = max(1, int(round(0.01 / cfg.dt)))
    fan = integrate_fan(cfg.medium, omega, starts, cfg.T, cfg.dt, tol, store_every=stride)
    em = exit_map(cfg.medium, omega, starts, cfg.T, cfg.dt, spacing=spacing, tol=tol)
    drift = float(fan.unit_speed_drift().max())
    n = cfg.dimension
    names = ["x", "y", "z"][:n]
    rows = (
        (r, t, *fan.X[k, r], *fan.V[k, r]) for r in range(fan.n_rays) for k, t in enumerate(fan.t)
    )
    files = [
        io.write_csv(
            out / "rays.csv",
            ["ray", "t", *names, *[f"v{c}" for c in names]],
            rows,
            [f"experiment={cfg.name}", f"omega={_label(omega)} dt={cfg.dt!r} spacing={spacing!r}"],
        ),
        io.write_csv(
            out / "exit_map.csv",
            ["ray", *[f"a_{c}" for c in names], "crossed", "t_star", *[f"A_{c}" for c in names], "recross"],
            em.to_rows(),
            [f"experiment={cfg.name}", f"omega={_label(omega)} T={cfg.T!r}"],
        ),
    ]
    ok = [c.crossed for c in em.crossings]
    shift = em.images[ok] - (em.starts[ok] + 2 * omega)
    checks = [
        _check("unit_speed_drift", drift, tol),
        _info("rays", fan.n_rays),
        _info("missed_sigma_plus", len(em.missed)),
        _info("recrossed_sigma_plus", len(em.recrossed)),
        _info("exit_collisions", len(em.collisions)),
        _info("exit_map_vs_translation", float(np.abs(shift).max()) if shift.size else math.nan, "max |A(a) - (a + 2 omega)|"),
    ]
    return RigidityReport(cfg.name, cfg.medium.describe(), checks, ""), files


def run_arrival(cfg, out, jobs=1):
    omega = cfg.directions()[0]
    grid = default_grid(cfg.dimension, cfg.h)
    h = cfg.h
    shoot = arrival_by_shooting(cfg.medium, omega, grid, fan_spacing=cfg.fan_spacing, horizon=cfg.T, dt=cfg.dt)
    sweep = arrival_by_sweeping(cfg.medium, omega, grid, tol=cfg.tolerances["sweep"])
    files = []
    for f in (shoot, sweep):
        files.append(f.to_csv(out / f"alpha_{f.method}.csv"))
        files.append(f.to_pgm(out / f"alpha_{f.method}.pgm"))
    files.append(io.write_pgm(out / "residual_sweeping.pgm", np.where(sweep.smooth, sweep.residual, np.nan)))
    g_max = compute_bounds(cfg.medium).g_max
    checks = [
        _check("arrival_methods_agree", arrival_difference(shoot, sweep), 4 * h),
        _check("eikonal_residual_l2", eikonal_residual(sweep).l2, 10 * h),
        _info("eikonal_residual_l2_shooting", eikonal_residual(shoot).l2),
        _info("lipschitz_excess", lipschitz_excess(sweep, g_max)),
        _info("kink_cells", int(sweep.kinks[(slice(1, -1),) * cfg.dimension].sum()), "interior cells"),
    ]
    data = {"shooting": shoot.info, "sweeping": sweep.info}
    return RigidityReport(cfg.name, cfg.medium.describe(), checks, "", data=data), files


def run_rho(cfg, out, jobs=1, allow_short_horizon=False):
    report = verify_rho_rigidity(
        cfg.medium,
        cfg.directions()[0],
        cfg.h,
        cfg.T,
        cfg.epsilon,
        allow_short_horizon=allow_short_horizon,
        experiment=cfg.name,
        dt=cfg.dt,
        sweep_tol=cfg.tolerances["sweep"],
        cg_tol=cfg.tolerances["cg"],
    )
    comp = report.traces
    files = [
        _trace_csv(cfg, comp.medium_trace, out / "trace_medium.csv"),
        _trace_csv(cfg, comp.reference_trace, out / "trace_euclidean.csv", ["medium=euclidean reference"]),
    ]
    shoot, sweep = report.arrival
    for f in (shoot, sweep):
        files.append(f.to_csv(out / f"alpha_{f.method}.csv"))
    files.append(sweep.to_pgm(out / "alpha.pgm"))
    ball = sweep.grid.radius() <= 1.0 + 1e-12
    files.append(io.write_pgm(out / "rho_hat.pgm", np.where(ball, report.rho_hat, np.nan)))
    return report, files


def run_metric(cfg, out, jobs=1, allow_short_horizon=False):
    report, rec = verify_metric_rigidity(
        cfg.medium,
        cfg.h,
        cfg.T,
        cfg.epsilon,
        tol=cfg.tolerances["cg"],
        allow_short_horizon=allow_short_horizon,
        experiment=cfg.name,
        dt=cfg.dt,
        jobs=jobs,
    )
    files = [rec.to_csv(out / "recovery.csv"), *rec.to_pgms(out)]
    for k, comp in enumerate(report.traces):
        files.append(_trace_csv(cfg, comp.medium_trace, out / f"trace_medium_{k}.csv"))
        files.append(_trace_csv(cfg, comp.reference_trace, out / f"trace_euclidean_{k}.csv", ["medium=euclidean reference"]))
    return report, files


def run_checklist(cfg, out, jobs=1):
    omega = cfg.directions()[0]
    grid = default_grid(cfg.dimension, cfg.h)
    wave = solve_wave(cfg.wave_config(omega, track_arrival=True, arrival_half_width=grid.half_width))
    field_ = arrival_by_shooting(cfg.medium, omega, grid, horizon=cfg.T)
    spacing = cfg.fan_spacing or 0.02
    cl = diffeo_condition_checklist(cfg.medium, omega, cfg.T, spacing, cfg.h, cfg.ray_dt, wave=wave, field=field_)
    checks = []
    for item in cl.items:
        # folds and a large eikonal residual warn; only outright failures count
        required = item.status not in ("skipped", "warn")
        checks.append(Check(f"({item.key}) {item.label}", float(item.value), None, item.status, required, item.detail))
    files = [
        field_.to_csv(out / "alpha_shooting.csv"),
        field_.to_pgm(out / "alpha_shooting.pgm"),
        io.write_pgm(out / "front_arrival.pgm", np.where(np.isfinite(wave.arrival), wave.arrival, np.nan)),
    ]
    data = {"checklist": cl.as_dict()}
    return RigidityReport(cfg.name, cfg.medium.describe(), checks, "", data=data), files


_RUNNERS = {
    "forward": run_forward,
    "geodesics": run_geodesics,
    "arrival": run_arrival,
    "rho-rigidity": run_rho,
    "metric-rigidity": run_metric,
    "diffeo-checklist": run_checklist,
}


@dataclass
class RunOutcome:
    exit_code: int
    report: RigidityReport
    manifest: Path
    files: list


def _metrics(report):
    out = {}
    for c in report.checks:
        if isinstance(c.value, float) and math.isfinite(c.value):
            out[c.name] = c.value
    for key in ("trace_distance", "noise_floor"):
        if key in report.data:
            out[key] = float(report.data[key])
    return out


def run_experiment(cfg, out=None, jobs=1, allow_short_horizon=False):
    """Validate, execute the pipeline, write the report, summary and manifest."""
    val = cfg.validate(allow_short_horizon)
    val.raise_for_errors()
    for v in val.violations:
        log.warning("%s: %s", v.field, v.message)
    out = Path(out if out is not None else (cfg.output or f"runs/{cfg.name}"))
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    runner = _RUNNERS[cfg.pipeline]
    if cfg.pipeline in RIGIDITY:
        report, files = runner(cfg, out, jobs, allow_short_horizon=allow_short_horizon)
        code = report.exit_code
    else:
        report, files = runner(cfg, out, jobs)
        code = 0 if report.passed else 2
        if not report.verdict:
            report.verdict = "all checks pass" if report.passed else "CHECK FAILURE: " + ", ".join(
                c.name for c in report.checks if c.required and c.status == "fail"
            )
    log.info("%s finished in %.1fs", cfg.pipeline, time.perf_counter() - start)

    text = report.to_text()
    warn = [f"warning: {v.field}: {v.message}" for v in val.violations]
    head = [f"pipeline: {cfg.pipeline}", *warn]
    (out / "report.txt").write_text("\n".join(head) + "\n" + text)
    summary = {
        "pipeline": cfg.pipeline,
        "exit_code": code,
        "derived": val.derived,
        "warnings": [v.message for v in val.violations],
        **report.as_dict(),
    }
    files = [Path(f) for f in files] + [out / "report.txt", io.write_json(out / "summary.json", summary)]
    manifest = {
        "package": "rigidlab",
        "version": __version__,
        "experiment": cfg.name,
        "pipeline": cfg.pipeline,
        "config": cfg.raw,
        "resolved": {
            "h": cfg.h,
            "dt": cfg.dt,
            "T": cfg.T,
            "epsilon": cfg.epsilon,
            "omega": list(cfg.omega),
            "directions": [list(map(float, w)) for w in cfg.directions()],
            "fan_spacing": cfg.fan_spacing,
            "ray_dt": cfg.ray_dt,
            "tolerances": cfg.tolerances,
            "trace_samples": cfg.trace_samples,
            "snapshot_stride": cfg.snapshot_stride,
            "allow_short_horizon": allow_short_horizon,
            "medium": cfg.medium.to_dict(),
        },
        "derived": val.derived,
        "verdict": report.verdict,
        "exit_code": code,
        "metrics": _metrics(report),
        "checks": {c.name: c.status for c in report.checks},
        "outputs": {str(f.relative_to(out)): io.sha256_file(f) for f in sorted(set(files))},
    }
    path = io.write_json(out / "manifest.json", manifest)
    return RunOutcome(code, report, path, files)


# ----------------------------------------------------------------------------
# comparing two runs


def _load_manifest(path):
    import json

    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        return path, json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read manifest ({exc.strerror})") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: not a JSON manifest ({exc})") from None


@dataclass
class Comparison:
    a: str
    b: str
    artifacts: list
    metrics: list
    flips: list
    traces: list

    def as_dict(self):
        return {
            "a": self.a,
            "b": self.b,
            "artifacts": self.artifacts,
            "metrics": self.metrics,
            "flips": self.flips,
            "trace_distances": self.traces,
        }

    def to_text(self):
        lines = [f"A: {self.a}", f"B: {self.b}", "", "artifacts:"]
        for name, same in self.artifacts:
            lines.append(f"  {'identical' if same else 'differs  '}  {name}")
        lines += ["", "trace distances (A vs B, relative L2):"]
        for name, d in self.traces:
            lines.append(f"  {name:<28s} {d:.6g}")
        lines += ["", "metrics:", f"  {'name':<40s} {'A':>12s} {'B':>12s} {'A/B':>10s}"]
        for name, va, vb, r in self.metrics:
            lines.append(f"  {name:<40s} {va:12.5g} {vb:12.5g} {r:10.4g}")
        lines += ["", "pass/fail flips:"]
        if not self.flips:
            lines.append("  none")
        for name, sa, sb in self.flips:
            lines.append(f"  {name}: {sa} -> {sb}")
        return "\n".join(lines) + "\n"


def compare_runs(a, b):
    """Diff two run directories (or manifest files)."""
    from .forward import read_trace_csv

    pa, ma = _load_manifest(a)
    pb, mb = _load_manifest(b)
    common = sorted(set(ma.get("outputs", {})) & set(mb.get("outputs", {})))
    if not common:
        raise ConfigError(f"manifests {pa} and {pb} share no artifact keys")
    artifacts = [(k, ma["outputs"][k] == mb["outputs"][k]) for k in common]
    traces = []
    for k in common:
        if k.startswith("trace") and k.endswith(".csv"):
            ta = read_trace_csv(pa.parent / k)
            tb = read_trace_csv(pb.parent / k)
            traces.append((k, 0.0 if ma["outputs"][k] == mb["outputs"][k] else trace_distance(ta, tb)))
    metrics = []
    xa, xb = ma.get("metrics", {}), mb.get("metrics", {})
    for k in sorted(set(xa) & set(xb)):
        va, vb = float(xa[k]), float(xb[k])
        r = va / vb if vb != 0 else (1.0 if va == 0 else math.inf)
        metrics.append((k, va, vb, r))
    ca, cb = ma.get("checks", {}), mb.get("checks", {})
    flips = [(k, ca[k], cb[k]) for k in sorted(set(ca) & set(cb)) if ca[k] != cb[k]]
    return Comparison(str(pa), str(pb), artifacts, metrics, flips, traces)
