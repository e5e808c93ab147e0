"""Experiment drivers: configuration, error series, contrast sweeps, elliptic study, plots."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cem import build_cem_basis, build_global_cem_basis, solve_aux_spectral
from .coarse import build_coarse_decomposition
from .complement import build_v2_first, build_v2_second, compute_constants
from .errors import CemSplitError, ConfigError
from .fem import (ConstantSource, GridSource, PointSource, assemble_load, build_fine_mesh, build_system, read_kappa_file,
                  reference_solve, solve_spd)
from .fields import generate_streak_field
from .splitting import SchemeConfig, init_split, reduce, run

V2_CHOICES = ("first", "second")
SOURCES = ("point", "constant", "box")


@dataclass
class ExperimentConfig:
    """Flat experiment configuration; every field is a valid config-file key."""

    n: int = 100
    N: int = 10
    layers: int = 3
    L: int = 3
    J: int = 3
    aux_mode: str = "H-2"
    kappa_file: str = ""
    background: float = 1.0
    streak_value: float = 1e6
    streak_seed: int = 0
    streak_density: float = 0.15
    source: str = "point"
    source_x: float = 0.5
    source_y: float = 0.5
    source_value: float = 1.0
    source_width: float = 0.06
    omega: float = 1.0
    tau: float = 1e-4
    steps: int = 500
    T: float = float("nan")
    v2_choices: tuple = V2_CHOICES
    contrasts: tuple = (1e5, 1e6, 1e7, 1e8, 1e9)
    elliptic_N: tuple = (5, 10, 20)
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n < 2 or self.N < 1 or self.n % self.N:
            raise ConfigError(f"need n >= 2 and N dividing n, got n={self.n}, N={self.N}")
        if self.layers < 1 or self.L < 1 or self.J < 1:
            raise ConfigError("layers, L and J must be positive")
        if not self.tau > 0 or self.steps < 1:
            raise ConfigError("tau must be positive and steps >= 1")
        if math.isnan(self.T):
            self.T = self.tau * self.steps
        elif abs(self.tau * self.steps - self.T) > 1e-12:
            raise ConfigError(f"tau * steps = {self.tau * self.steps!r} differs from T = {self.T!r}")
        if self.source not in SOURCES:
            raise ConfigError(f"unknown source {self.source!r}")
        bad = set(self.v2_choices) - set(V2_CHOICES)
        if bad or not self.v2_choices:
            raise ConfigError(f"v2_choices must be a nonempty subset of {V2_CHOICES}")
        if self.background <= 0 or self.streak_value <= 0:
            raise ConfigError("kappa values must be positive")
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError("omega must lie in [0, 1]")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def with_values(self, **kw) -> "ExperimentConfig":
        if "tau" in kw or "steps" in kw:
            kw.setdefault("T", float("nan"))
        return dataclasses.replace(self, **kw)


def _convert(name: str, raw: str, default):
    try:
        if isinstance(default, tuple):
            kind = float if name == "contrasts" else int if name == "elliptic_N" else str
            return tuple(kind(v.strip()) for v in raw.split(",") if v.strip())
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_assignments(lines, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines to ``base`` (default config). ``#`` starts a comment."""
    base = base or ExperimentConfig()
    defaults = {f.name: getattr(base, f.name) for f in dataclasses.fields(ExperimentConfig)}
    updates = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, raw = (s.strip() for s in text.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        updates[key] = _convert(key, raw, defaults[key])
    if ("tau" in updates or "steps" in updates) and "T" not in updates:
        updates["T"] = float("nan")
    return dataclasses.replace(base, **updates)


def load_config(path=None, overrides=()) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse_assignments(text.splitlines(), cfg)
    return parse_assignments(list(overrides), cfg) if overrides else cfg


def dump_config(cfg: ExperimentConfig) -> str:
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(out) + "\n"


# problem setup --------------------------------------------------------------


def make_kappa(cfg: ExperimentConfig, streak_value: float | None = None) -> np.ndarray:
    if cfg.kappa_file:
        return read_kappa_file(cfg.kappa_file, cfg.n)
    value = cfg.streak_value if streak_value is None else streak_value
    return generate_streak_field(cfg.n, cfg.background, value, cfg.streak_seed, cfg.streak_density)


def make_load(cfg: ExperimentConfig, mesh) -> np.ndarray:
    if cfg.source == "point":
        return assemble_load(mesh, PointSource(mesh.nearest_node(cfg.source_x, cfg.source_y), cfg.source_value))
    if cfg.source == "box":
        c = mesh.cell_centers()
        half = 0.5 * cfg.source_width
        inside = (np.abs(c[:, 0] - cfg.source_x) < half) & (np.abs(c[:, 1] - cfg.source_y) < half)
        if not inside.any():
            raise ConfigError("box source covers no fine cell; increase source_width")
        return assemble_load(mesh, GridSource(cfg.source_value * inside))
    return assemble_load(mesh, ConstantSource(cfg.source_value))


@dataclass
class Spaces:
    system: object
    decomp: object
    aux: object
    V1: object
    V2: dict = field(default_factory=dict)


def build_spaces(cfg: ExperimentConfig, kappa=None, choices=None, N: int | None = None) -> Spaces:
    mesh = build_fine_mesh(cfg.n)
    system = build_system(mesh, make_kappa(cfg) if kappa is None else kappa)
    decomp = build_coarse_decomposition(mesh, cfg.N if N is None else N, cfg.layers)
    aux = solve_aux_spectral(system, decomp, cfg.L, cfg.aux_mode)
    V1 = build_cem_basis(system, decomp, aux)
    spaces = Spaces(system, decomp, aux, V1)
    for choice in (cfg.v2_choices if choices is None else choices):
        build = build_v2_first if choice == "first" else build_v2_second
        spaces.V2[choice] = build(system, decomp, aux, cfg.J)
    return spaces


# time-dependent examples ----------------------------------------------------

ERROR_COLUMNS = ("err_L2_cem", "err_en_cem", "err_L2_implicit_extra", "err_en_implicit_extra",
                 "err_L2_partial", "err_en_partial")
METHOD_LABELS = {"cem": "CEM-GMsFEM", "implicit_extra": "implicit, extra basis", "partial": "partially explicit"}


@dataclass
class ErrorSeries:
    """Relative errors of the coarse methods against the fine reference, one row per step."""

    steps: np.ndarray
    times: np.ndarray
    errors: dict
    blowup: dict = field(default_factory=dict)
    label: str = ""

    def final(self, column: str) -> float:
        return float(self.errors[column][-1])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "time") + ERROR_COLUMNS)
        for k, (s, t) in enumerate(zip(self.steps, self.times)):
            w.writerow([int(s), repr(float(t))] + [repr(float(self.errors[c][k])) for c in ERROR_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _relative_errors(ref_states, coarse_states, system) -> tuple[np.ndarray, np.ndarray]:
    l2, en = [], []
    for u, v in zip(ref_states, coarse_states):
        e = u - v
        vals = []
        for op in (system.M, system.A):
            num = math.sqrt(max(float(e @ (op @ e)), 0.0))
            den = math.sqrt(max(float(u @ (op @ u)), 0.0))
            vals.append(num / den if den > 0 else num)
        l2.append(vals[0])
        en.append(vals[1])
    n = len(ref_states)
    pad = lambda a: np.concatenate([a, np.full(n - len(a), np.inf)])
    return pad(np.array(l2)), pad(np.array(en))


def _coarse_run(scheme: str, system, V1, V2, load, cfg: ExperimentConfig):
    red = reduce(system, V1, V2, load)
    traj = run(SchemeConfig(scheme, cfg.tau, cfg.steps, omega=cfg.omega), red, init_split(None, red))
    return [red.fine(c[:red.m1], c[red.m1:]) for c in traj.states], traj.blowup


def _stage(tag: str, fn, *args):
    try:
        return fn(*args)
    except CemSplitError as exc:
        raise type(exc)(f"[{tag}] {exc}") from exc


def run_example(cfg: ExperimentConfig, write: bool = True) -> dict:
    """Fine reference plus the three coarse methods for each V2 choice.

    Returns ``{choice: ErrorSeries}`` and, when ``write`` is set, writes
    ``errors_<choice>.csv`` into ``cfg.output_dir``.
    """
    spaces = _stage("spaces", build_spaces, cfg)
    system = spaces.system
    load = make_load(cfg, system.mesh)
    ref = _stage("reference", reference_solve, system, load, None, cfg.tau, cfg.steps)
    cem_states, cem_blow = _stage("cem", _coarse_run, "implicit_coarse", system, spaces.V1, None, load, cfg)
    cem_errs = _relative_errors(ref.states, cem_states, system)
    out = {}
    for choice, V2 in spaces.V2.items():
        imp_states, imp_blow = _stage(f"implicit_{choice}", _coarse_run, "implicit_coarse", system, spaces.V1, V2,
                                      load, cfg)
        par_states, par_blow = _stage(f"partial_{choice}", _coarse_run, "partial_explicit", system, spaces.V1, V2,
                                      load, cfg)
        imp_errs = _relative_errors(ref.states, imp_states, system)
        par_errs = _relative_errors(ref.states, par_states, system)
        errors = dict(zip(ERROR_COLUMNS, (*cem_errs, *imp_errs, *par_errs)))
        series = ErrorSeries(np.arange(cfg.steps + 1), np.array(ref.times), errors,
                             {"cem": cem_blow, "implicit_extra": imp_blow, "partial": par_blow}, label=choice)
        out[choice] = series
        if write:
            os.makedirs(cfg.output_dir, exist_ok=True)
            series.to_csv(Path(cfg.output_dir) / f"errors_{choice}.csv")
    return out


# contrast sweep -------------------------------------------------------------

SWEEP_COLUMNS = ("contrast", "supG_V1", "supG_V2_first", "supG_V2_second", "gamma", "beta", "tau_thm32",
                 "tau_thm33", "gamma_second", "beta_second", "tau_thm32_second", "tau_thm33_second")


def sweep_entry(cfg: ExperimentConfig, contrast: float) -> dict:
    """Constants for one contrast value; the streak geometry is shared across the sweep."""
    if cfg.kappa_file:
        raise ConfigError("contrast sweeps use the streak generator, not a kappa file")
    kappa = make_kappa(cfg, streak_value=cfg.background * contrast)
    spaces = build_spaces(cfg, kappa=kappa, choices=V2_CHOICES)
    rep1 = compute_constants(spaces.system, spaces.decomp, spaces.V1, spaces.V2["first"], cfg.omega)
    rep2 = compute_constants(spaces.system, spaces.decomp, spaces.V1, spaces.V2["second"], cfg.omega)
    return {
        "contrast": contrast, "supG_V1": rep1.supG_V1, "supG_V2_first": rep1.supG_V2,
        "supG_V2_second": rep2.supG_V2, "gamma": rep1.gamma, "beta": rep1.beta,
        "tau_thm32": rep1.tau_thm32, "tau_thm33": rep1.tau_thm33, "gamma_second": rep2.gamma,
        "beta_second": rep2.beta, "tau_thm32_second": rep2.tau_thm32, "tau_thm33_second": rep2.tau_thm33,
    }


def contrast_sweep(cfg: ExperimentConfig, contrasts=None, write: bool = True) -> list:
    contrasts = list(cfg.contrasts if contrasts is None else contrasts)
    if len(contrasts) < 2:
        raise ConfigError("a sweep needs at least two contrast values")
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(sweep_entry, [cfg] * len(contrasts), contrasts))
    else:
        rows = [sweep_entry(cfg, c) for c in contrasts]
    if write:
        os.makedirs(cfg.output_dir, exist_ok=True)
        (Path(cfg.output_dir) / "constants.csv").write_text(sweep_csv(rows))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([repr(float(r[c])) for c in SWEEP_COLUMNS])
    return buf.getvalue()


# elliptic projection study --------------------------------------------------


def galerkin(system, V, load) -> np.ndarray:
    X = V.vectors
    G = X.T @ (system.A @ X)
    return X @ np.linalg.solve(0.5 * (G + G.T), X.T @ load)


def _errors(system, u, uh) -> tuple[float, float]:
    e = u - uh
    en = math.sqrt(max(float(e @ (system.A @ e)), 0.0))
    l2 = math.sqrt(max(float(e @ (system.M @ e)), 0.0))
    un = math.sqrt(max(float(u @ (system.A @ u)), 0.0))
    ul = math.sqrt(max(float(u @ (system.M @ u)), 0.0))
    return (en / un if un else en), (l2 / ul if ul else l2)


def fine_elliptic(system, load) -> np.ndarray:
    f = system.free
    # 1e-10 is below the round-off floor at high contrast; see solve_spd
    return system.extend(solve_spd(system.A_free, load[f], tol=1e-8, method="direct"))


@dataclass
class EllipticReport:
    energy: dict
    l2: dict
    theta: dict
    sweep_H: list
    sweep_energy: dict
    slope: dict

    def lines(self) -> list:
        out = [f"{k:>10s}: energy {self.energy[k]:.4e}  L2 {self.l2[k]:.4e}" for k in self.energy]
        out += [f"theta[{k}] = {v:.4f}" for k, v in self.theta.items()]
        for k, errs in self.sweep_energy.items():
            pts = ", ".join(f"H={H:g}: {e:.3e}" for H, e in zip(self.sweep_H, errs))
            out.append(f"H-sweep {k}: {pts}; slope {self.slope[k]:.3f}")
        return out


def loglog_slope(H, err) -> float:
    err = np.asarray(err, float)
    if np.any(err <= 0):
        return float("nan")
    return float(np.polyfit(np.log(np.asarray(H, float)), np.log(np.asarray(err, float)), 1)[0])


def elliptic_projection_study(cfg: ExperimentConfig, load=None) -> EllipticReport:
    """Fine elliptic solve against Galerkin projections onto V1 and V1 + V2.

    V1 is the global CEM space, so the errors carry no localization
    component; the localized CEM error is reported as ``cem_local``.
    ``theta`` is the ratio of enriched to V1-only energy errors. The H-sweep
    reports V1-only energy errors for ``cfg.elliptic_N`` and is skipped for
    fewer than two sizes.
    """
    spaces = build_spaces(cfg, choices=())
    system, decomp, aux = spaces.system, spaces.decomp, spaces.aux
    load = make_load(cfg, system.mesh) if load is None else load
    u = fine_elliptic(system, load)
    V1 = build_global_cem_basis(system, aux)
    V2s = {}
    if "first" in cfg.v2_choices:
        V2s["first"] = build_v2_first(system, decomp, aux, cfg.J)
    if "second" in cfg.v2_choices:
        V2s["second"] = build_v2_second(system, decomp, aux, cfg.J, variant="global")
    energy, l2, theta = {}, {}, {}
    energy["cem_local"], l2["cem_local"] = _errors(system, u, galerkin(system, spaces.V1, load))
    energy["cem"], l2["cem"] = _errors(system, u, galerkin(system, V1, load))
    for choice, V2 in V2s.items():
        joint = dataclasses.replace(V2, vectors=np.hstack([V1.vectors, V2.vectors]))
        energy[choice], l2[choice] = _errors(system, u, galerkin(system, joint, load))
        theta[choice] = energy[choice] / energy["cem"] if energy["cem"] > 0 else 0.0
    sweep_H, sweep = [], {"cem": []} if len(cfg.elliptic_N) >= 2 else {}
    for Nc in (cfg.elliptic_N if sweep else ()):
        dec = build_coarse_decomposition(system.mesh, Nc, cfg.layers)
        Vg = build_global_cem_basis(system, solve_aux_spectral(system, dec, cfg.L, cfg.aux_mode))
        sweep_H.append(1.0 / Nc)
        sweep["cem"].append(_errors(system, u, galerkin(system, Vg, load))[0])
    slope = {k: loglog_slope(sweep_H, v) for k, v in sweep.items()}
    return EllipticReport(energy, l2, theta, sweep_H, sweep, slope)


# plotting -------------------------------------------------------------------

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def emit_plot(series: dict, path=None, title: str = "", width: int = 640, height: int = 400) -> str:
    """Deterministic SVG line chart with a log-scale y axis.

    ``series`` maps a legend label to ``(x, y)`` arrays. Non-positive and
    non-finite y values are skipped. Single-point series get a marker.
    """
    if not series:
        raise ConfigError("nothing to plot")
    pts = {k: [(float(a), float(b)) for a, b in zip(*v) if np.isfinite(b) and b > 0] for k, v in series.items()}
    allp = [p for v in pts.values() for p in v]
    if not allp:
        raise ConfigError("no positive finite values to plot")
    xs = [p[0] for p in allp]
    ly = [math.log10(p[1]) for p in allp]
    x0, x1 = min(xs), max(xs)
    y0, y1 = math.floor(min(ly)), math.ceil(max(ly))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y1 = y0 + 1
    ml, mr, mt, mb = 70, 160, 30, 45
    pw, ph = width - ml - mr, height - mt - mb
    X = lambda x: ml + (x - x0) / (x1 - x0) * pw
    Y = lambda y: mt + (y1 - math.log10(y)) / (y1 - y0) * ph
    f = lambda v: f"{v:.2f}"
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    if title:
        out.append(f'<text x="{ml + pw / 2:.2f}" y="18" text-anchor="middle" font-size="14">{_esc(title)}</text>')
    for d in range(y0, y1 + 1):
        yy = f(Y(10.0**d))
        out.append(f'<line x1="{ml}" y1="{yy}" x2="{ml + pw}" y2="{yy}" stroke="#dddddd"/>')
        out.append(f'<text x="{ml - 6}" y="{yy}" text-anchor="end" font-size="11">1e{d}</text>')
    for k in range(5):
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<text x="{f(X(xv))}" y="{mt + ph + 16}" text-anchor="middle" font-size="11">{xv:.4g}</text>')
    for idx, (label, p) in enumerate(pts.items()):
        color = _COLORS[idx % len(_COLORS)]
        if len(p) == 1:
            out.append(f'<circle cx="{f(X(p[0][0]))}" cy="{f(Y(p[0][1]))}" r="3" fill="{color}"/>')
        elif p:
            coords = " ".join(f"{f(X(a))},{f(Y(b))}" for a, b in p)
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        ly_ = mt + 15 + 18 * idx
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly_}" x2="{ml + pw + 30}" y2="{ly_}" stroke="{color}" '
                   f'stroke-width="2"/>')
        out.append(f'<text x="{ml + pw + 35}" y="{ly_ + 4}" font-size="11">{_esc(label)}</text>')
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def error_plots(series: ErrorSeries, prefix) -> list:
    """Write ``<prefix>_L2.svg`` and ``<prefix>_energy.svg`` for one error series."""
    paths = []
    for kind, tag in (("L2", "L2"), ("en", "energy")):
        data = {METHOD_LABELS[m]: (series.times, series.errors[f"err_{kind}_{m}"]) for m in METHOD_LABELS}
        path = f"{prefix}_{tag}.svg"
        emit_plot(data, path, title=f"relative {tag} error ({series.label} V2)")
        paths.append(path)
    return paths


def read_error_csv(path) -> ErrorSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty error series")
    missing = set(("step", "time") + ERROR_COLUMNS) - set(rows[0])
    if missing:
        raise ConfigError(f"{path}: missing columns {sorted(missing)}")
    return ErrorSeries(np.array([int(r["step"]) for r in rows]), np.array([float(r["time"]) for r in rows]),
                       {c: np.array([float(r[c]) for r in rows]) for c in ERROR_COLUMNS},
                       label=Path(path).stem.removeprefix("errors_"))
