"""Sweep configuration, orchestration, rate fitting and reporting."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import fem
from .correctors import (CorrectorCache, HomogenizedCoeffs, realization_correctors)
from .expansion import (ErrorRow, ScatterSetup, exterior_alpha_mask, homogenized_operator,
                        run_realization, solve_u0)
from .microstructure import MediumParams, ProcessConfig, calibrate_intensity
from .scattering import PlaneWave, TruncationClosure
from .seeding import derive_seed

log = logging.getLogger(__name__)

__all__ = ["ConfigError", "InsufficientData", "RateModel", "SweepConfig", "SweepReport",
           "derive_seed", "fit_rate", "load_config", "parse_config", "render_report",
           "run_sweep", "MODELS"]


class ConfigError(ValueError):
    pass


class InsufficientData(ValueError):
    pass


# -- rate models ---------------------------------------------------------

def mu(d: int, y):
    """Rate weight: sqrt(y) in 1D, |log(2 + y)|^(1/2) in 2D, 1 in 3D."""
    y = np.asarray(y, dtype=float)
    if d == 1:
        return np.sqrt(y)
    if d == 2:
        return np.sqrt(np.abs(np.log(2.0 + y)))
    if d == 3:
        return np.ones_like(y)
    raise ValueError("dimension must be 1, 2 or 3")


@dataclass(frozen=True)
class RateModel:
    """Predictor ``eps^p * w(eps)^s``.

    ``form="mu"`` uses ``w = mu_d(1/eps)``; ``form="abs_log"`` uses
    ``w = |log eps|``, the form quoted for the first-order exterior error.
    """

    p: float
    s: float = 0.0
    d: int = 2
    form: str = "mu"

    def __post_init__(self):
        if self.form not in ("mu", "abs_log"):
            raise ValueError(f"unknown rate form {self.form!r}")
        if self.d not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")

    def __call__(self, eps):
        eps = np.asarray(eps, dtype=float)
        w = mu(self.d, 1.0 / eps) if self.form == "mu" else np.abs(np.log(eps))
        return eps ** self.p * w ** self.s


MODELS = {
    "err_L2_box": RateModel(1.0, 1.0),
    "err_H1_ext": RateModel(0.5, 0.5),
    "err_H1_D_2scale": RateModel(0.5, 0.5),
    "err_L2_ext_U1": RateModel(1.5, 0.5, form="abs_log"),
    "err_H1_ext_U1": RateModel(1.5, 0.5, form="abs_log"),
    "diag_F": RateModel(1.0, 1.0),
    "diag_G": RateModel(1.0, 1.0),
}


def ensemble_rms(rows, column):
    """``{eps: RMS over successful rows}`` for one error column."""
    groups: dict[float, list[float]] = {}
    for r in rows:
        v = getattr(r, column)
        if r.ok and math.isfinite(v):
            groups.setdefault(r.eps, []).append(v)
    return {e: float(np.sqrt(np.mean(np.square(v)))) for e, v in sorted(groups.items())}


def fit_rate(rows, column: str, model: RateModel):
    """Least-squares slope of log RMS error against log of the model predictor.

    Returns ``(exponent, residual)``; the residual is the root sum of squared
    regression residuals. An exponent of 1 means the data follow the model.
    """
    rms = ensemble_rms(rows, column)
    eps = np.array([e for e, v in rms.items() if v > 0])
    if len(eps) < 3:
        raise InsufficientData(f"{column}: need at least 3 distinct epsilon values")
    y = np.log([rms[e] for e in eps])
    x = np.log(model(eps))
    X = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    return float(coef[0]), float(np.sqrt(np.sum(resid ** 2)))


# -- configuration -------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    """Desk-scale homogenization sweep.

    The box step is ``eps / step_ratio`` unless ``fixed_step`` is set. With
    ``step_ratio = 1 / torus_step`` the box grid inside D is the rescaled
    torus grid, which keeps the discrete media of all solves identical.
    """

    epsilon_list: tuple = (0.2, 1 / 6, 0.125, 0.1)
    n_realizations: int = 8
    master_seed: int = 20240601
    step_ratio: float = 10.0
    fixed_step: float | None = None
    k: float = 5.0
    incidence_angle: float = 0.0
    box_side: float = 4.0
    scatterer_side: float = 2.0
    closure: str = "PML_BOX"
    closure_order: int = 1
    pml_width: float = 0.6
    pml_strength: float = 8.0
    a_M: float = 2.0
    a_S: float = 3.5
    n_M: float = 1.5
    n_S: float = 0.5
    n_0: float = 1.0
    volume_fraction: float = 0.226
    inclusion_radius: float = 0.5
    hardcore_distance: float = 1.05
    torus_period: float = 20.0
    massive_T: float = 1e7
    torus_step: float = 0.1
    alpha: float | None = None
    output_dir: str = "out"
    cache_dir: str | None = None
    record_runtime: bool = False

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilon_list)
        object.__setattr__(self, "epsilon_list", eps)
        if not eps or any(e <= 0 for e in eps):
            raise ConfigError("epsilon_list must hold positive values")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError("epsilon_list must be strictly decreasing")
        if self.n_realizations < 1:
            raise ConfigError("n_realizations must be at least 1")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must be a 64-bit unsigned integer")
        if self.fixed_step is None and self.step_ratio < 8:
            raise ConfigError("step_ratio below 8 under-resolves the inclusions")
        if self.fixed_step is not None and self.fixed_step > min(eps) / 8:
            log.warning("fixed step %.3g exceeds eps/8 for the smallest epsilon",
                        self.fixed_step)
        if self.box_side <= self.scatterer_side:
            raise ConfigError("box must contain the scatterer")
        if self.alpha is not None and not 0 < self.alpha < self.margin:
            raise ConfigError("alpha must lie strictly inside the box margin")
        try:
            self.medium()
            self.process_template()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def margin(self) -> float:
        return (self.box_side - self.scatterer_side) / 2

    @property
    def alpha_value(self) -> float:
        return 0.25 * self.margin if self.alpha is None else self.alpha

    def step(self, eps: float) -> float:
        if self.fixed_step is not None:
            return self.fixed_step
        # round away float noise so that 1 / step stays an exact grid count
        return float(np.round(eps / self.step_ratio, 12))

    def medium(self) -> MediumParams:
        return MediumParams.scalar(self.a_M, self.a_S, self.n_M, self.n_S, self.n_0)

    def process_template(self) -> ProcessConfig:
        lam = calibrate_intensity(self.volume_fraction, self.inclusion_radius,
                                  self.hardcore_distance)
        return ProcessConfig(lam, self.hardcore_distance, self.inclusion_radius,
                             self.torus_period, 0)

    def process(self, seed: int) -> ProcessConfig:
        return replace(self.process_template(), seed=seed)

    def closure_for(self) -> TruncationClosure:
        return TruncationClosure(self.box_side, self.k, self.n_0, self.scatterer_side,
                                 self.closure, self.closure_order,
                                 self.pml_width if self.closure == "PML_BOX" else 0.0,
                                 self.pml_strength)

    def incident(self) -> PlaneWave:
        return PlaneWave.from_angle(self.k, self.incidence_angle)

    def seeds(self) -> list[int]:
        return [derive_seed(self.master_seed, "microstructure", m)
                for m in range(self.n_realizations)]


# ``section.key`` -> SweepConfig field
CONFIG_KEYS = {
    "sweep.epsilon_list": "epsilon_list",
    "sweep.n_realizations": "n_realizations",
    "sweep.master_seed": "master_seed",
    "sweep.alpha": "alpha",
    "mesh.step_ratio": "step_ratio",
    "mesh.fixed_step": "fixed_step",
    "scatter.k": "k",
    "scatter.incidence_angle": "incidence_angle",
    "scatter.box_side": "box_side",
    "scatter.scatterer_side": "scatterer_side",
    "scatter.closure": "closure",
    "scatter.closure_order": "closure_order",
    "scatter.pml_width": "pml_width",
    "scatter.pml_strength": "pml_strength",
    "medium.a_M": "a_M",
    "medium.a_S": "a_S",
    "medium.n_M": "n_M",
    "medium.n_S": "n_S",
    "medium.n_0": "n_0",
    "process.volume_fraction": "volume_fraction",
    "process.inclusion_radius": "inclusion_radius",
    "process.hardcore_distance": "hardcore_distance",
    "corrector.period": "torus_period",
    "corrector.massive_T": "massive_T",
    "corrector.step": "torus_step",
    "output.dir": "output_dir",
    "output.cache_dir": "cache_dir",
    "output.record_runtime": "record_runtime",
}


def _convert(name: str, raw: str):
    types = {f.name: f.type for f in fields(SweepConfig)}
    t = str(types[name])
    raw = raw.strip()
    if raw.lower() in ("none", "") and "None" in t:
        return None
    try:
        if name == "epsilon_list":
            return tuple(_number(v) for v in raw.replace(",", " ").split())
        if t.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if t.startswith("int"):
            return int(raw)
        if t.startswith("float"):
            return _number(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def _number(text: str) -> float:
    """Float, also accepting a simple fraction such as ``1/6``."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_config(text: str, **overrides) -> SweepConfig:
    """SweepConfig from ``section.key = value`` lines (``#`` starts a comment)."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        name = CONFIG_KEYS[key]
        values[name] = _convert(name, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SweepConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path=None, **overrides) -> SweepConfig:
    text = "" if path is None else Path(path).read_text(encoding="utf-8")
    return parse_config(text, **overrides)


# -- sweep ---------------------------------------------------------------

@dataclass
class SweepReport:
    config: SweepConfig
    rows: list
    homog: HomogenizedCoeffs | None = None
    rates: dict = field(default_factory=dict)
    ensemble_mean: list = field(default_factory=list)
    timings: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return (len(self.rows) == len(self.config.epsilon_list) * self.config.n_realizations
                and all(r.ok for r in self.rows))

    def failed(self) -> list:
        return [r for r in self.rows if not r.ok]

    def fit_all(self):
        self.rates = {}
        for col, model in MODELS.items():
            try:
                self.rates[col] = fit_rate(self.rows, col, model)
            except InsufficientData:
                self.rates[col] = (math.nan, math.nan)
        return self.rates


def run_sweep(config: SweepConfig) -> SweepReport:
    """Full study: correctors per seed, shared homogenization, then each epsilon.

    A failing realization produces rows marked ``failed`` and the run goes on.
    """
    seeds = config.seeds()
    params = config.medium()
    cache = CorrectorCache(config.cache_dir) if config.cache_dir else None
    torus, tdofs = fem.build_torus_mesh(config.torus_period, config.torus_step)
    rows: list[ErrorRow] = []
    timings = []
    sets, micro = {}, {}
    for m, seed in enumerate(seeds):
        t0 = time.perf_counter()
        try:
            ms, cs = realization_correctors(config.process(seed), params, config.massive_T,
                                            config.torus_step, torus, tdofs, cache)
            sets[seed], micro[seed] = cs, ms
        except Exception as exc:  # noqa: BLE001 - isolate the realization
            log.error("correctors for realization %d failed: %s", m, exc)
            rows += [ErrorRow(e, seed, status="failed", reason=f"correctors: {exc}")
                     for e in config.epsilon_list]
        timings.append(("correctors", seed, math.nan, time.perf_counter() - t0))
    if not sets:
        return SweepReport(config, _sorted(rows), None, timings=timings)
    hc = HomogenizedCoeffs.from_correctors([sets[s] for s in seeds if s in sets])
    closure = config.closure_for()
    incident = config.incident()
    ensemble = []
    for eps in config.epsilon_list:
        t0 = time.perf_counter()
        try:
            setup = ScatterSetup.build(closure, config.step(eps), incident)
            hom = homogenized_operator(setup, hc)
            u0 = solve_u0(hc, setup, hom)
        except Exception as exc:  # noqa: BLE001
            log.error("homogenized solve at eps=%g failed: %s", eps, exc)
            rows += [ErrorRow(eps, s, status="failed", reason=f"u0: {exc}") for s in sets]
            continue
        timings.append(("u0", math.nan, eps, time.perf_counter() - t0))
        mean_diff = np.zeros(setup.dofs.n_dofs, dtype=complex)
        count = 0
        for seed, cs in sets.items():
            t0 = time.perf_counter()
            try:
                res = run_realization(setup, cs, hc, params, eps, config.alpha_value, u0, hom,
                                      micro[seed], seed)
                row = res.row
                mean_diff += res.diff
                count += 1
            except Exception as exc:  # noqa: BLE001
                log.error("realization seed=%d eps=%g failed: %s", seed, eps, exc)
                row = ErrorRow(eps, seed, status="failed", reason=str(exc))
            elapsed = time.perf_counter() - t0
            timings.append(("realization", seed, eps, elapsed))
            if not config.record_runtime:
                row.runtime_s = math.nan
            rows.append(row)
            log.info("eps=%g seed=%d done in %.1fs", eps, seed, elapsed)
        if count:
            mean_diff /= count
            far = exterior_alpha_mask(setup, config.alpha_value)
            box = (fem.EXTERIOR, fem.SCATTERER_D)
            ensemble.append((eps, count,
                             fem.norm_region(setup.mesh, setup.dofs, mean_diff, box, "L2"),
                             fem.norm_region(setup.mesh, setup.dofs, mean_diff, far, "L2")))
    report = SweepReport(config, _sorted(rows), hc, ensemble_mean=ensemble, timings=timings)
    report.fit_all()
    return report


def _sorted(rows):
    return sorted(rows, key=lambda r: (r.seed, r.eps))


# -- output --------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([x if isinstance(x, str) else _fmt(x) for x in r])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_homog_csv(path, hc: HomogenizedCoeffs):
    rows = [(seed, *a.ravel(), n) for seed, a, n in zip(hc.seeds, hc.samples_a, hc.samples_n)]
    _write_csv(Path(path), ("seed", "a11", "a12", "a21", "a22", "nhom"), rows)


def read_errors_csv(path) -> list[ErrorRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ErrorRow.CSV_COLUMNS:
            raise ValueError("errors.csv header does not match the schema")
        for rec in reader:
            kw = {k: float(v) for k, v in rec.items() if k != "seed"}
            kw["seed"] = int(rec["seed"])
            ok = all(math.isfinite(kw[c]) for c in ErrorRow.CSV_COLUMNS[2:-1])
            rows.append(ErrorRow(**kw, status="ok" if ok else "failed"))
    return rows


def render_report(report: SweepReport, outdir, side_tables: bool = True) -> list[Path]:
    """Write errors.csv, homog.csv, rates.csv and decay.svg.

    With ``side_tables`` the uncorrected exterior errors, ensemble means,
    failures and wall-clock timings are written as well.
    """
    if not report.rows:
        raise ValueError("refusing to render an empty report")
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    if not report.rates:
        report.fit_all()
    written = []
    p = out / "errors.csv"
    _write_csv(p, ErrorRow.CSV_COLUMNS,
               [[getattr(r, c) for c in ErrorRow.CSV_COLUMNS] for r in report.rows])
    written.append(p)
    if report.homog is not None and report.homog.samples_a is not None:
        p = out / "homog.csv"
        write_homog_csv(p, report.homog)
        written.append(p)
    p = out / "rates.csv"
    _write_csv(p, ("column", "exponent", "residual"),
               [(c, *report.rates[c]) for c in MODELS if c in report.rates])
    written.append(p)
    p = out / "decay.svg"
    plot_decay(report, p)
    written.append(p)
    if not side_tables:
        return written
    p = out / "uncorrected.csv"
    _write_csv(p, ("eps", "seed", "err_L2_ext_U0", "err_H1_ext_U0"),
               [(r.eps, r.seed, r.err_L2_ext_U0, r.err_H1_ext_U0) for r in report.rows])
    written.append(p)
    if report.ensemble_mean:
        p = out / "ensemble_mean.csv"
        _write_csv(p, ("eps", "count", "mean_diff_L2_box", "mean_diff_L2_ext_alpha"),
                   report.ensemble_mean)
        written.append(p)
    failed = report.failed()
    if failed:
        p = out / "failures.csv"
        _write_csv(p, ("eps", "seed", "reason"), [(r.eps, r.seed, r.reason) for r in failed])
        written.append(p)
    if report.timings:
        # wall-clock data are not reproducible, so they live apart from errors.csv
        p = out / "timings.csv"
        _write_csv(p, ("stage", "seed", "eps", "seconds"), report.timings)
        written.append(p)
    return written


def plot_decay(report: SweepReport, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "helmhomog"
    cols = ["err_L2_box", "err_H1_D_2scale", "err_H1_ext_U1", "err_L2_ext_U1"]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for col in cols:
        pts = [(r.eps, getattr(r, col)) for r in report.rows
               if r.ok and math.isfinite(getattr(r, col)) and getattr(r, col) > 0]
        if not pts:
            continue
        e, v = np.array(pts).T
        line = ax.loglog(e, v, ".", alpha=0.4)[0]
        rms = ensemble_rms(report.rows, col)
        ee = np.array(list(rms))
        ax.loglog(ee, list(rms.values()), "o", color=line.get_color(), label=col)
        slope, _ = report.rates.get(col, (math.nan, math.nan))
        if math.isfinite(slope) and len(ee) >= 2:
            model = MODELS[col]
            x = np.log(model(ee))
            y = np.log(list(rms.values()))
            c = np.mean(y - slope * x)
            ax.loglog(ee, np.exp(c + slope * x), "-", color=line.get_color())
    ax.set_xlabel("epsilon")
    ax.set_ylabel("error")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
