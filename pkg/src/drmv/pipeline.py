"""CSV ingestion, end-to-end calibrate-then-solve runs, and rolling backtests.

Reports are written as canonical JSON: keys in a fixed order, floats with
17 significant digits, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import re
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .calibration import CalibrationReport, c_star_of, calibrate_alpha, calibrate_delta
from .duality import RobustParams, parse_order
from .errors import DegenerateInputError, DRMVError, InvalidInputError, ParseError
from .markowitz import MarkowitzSolution, solve_markowitz
from .moments import EmpiricalMoments, LongRunCovariance, ReturnSeries, empirical_moments
from .solver import RobustSolution, solve_robust

_NUMBER = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_DIGITS = re.compile(r"^[+-]?\d+$")


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    """Inputs of one pipeline run or backtest.

    ``workers`` only changes how the Monte Carlo blocks and backtest windows
    are scheduled; results do not depend on it.
    """

    returns_path: str
    rho: float
    p: float = 2.0
    delta0: float = 0.05
    epsilon: float = 0.05
    delta_override: Optional[float] = None
    alpha_override: Optional[float] = None
    mc_samples: int = 100_000
    seed: int = 42
    window: Optional[int] = None
    rebalance: int = 1
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "p", parse_order(self.p))
        try:
            rho = float(self.rho)
        except (TypeError, ValueError):
            raise InvalidInputError(f"rho must be a number, got {self.rho!r}", stage="config") from None
        if not math.isfinite(rho):
            raise InvalidInputError(f"rho must be finite, got {rho}", stage="config")
        object.__setattr__(self, "rho", rho)
        for name in ("delta0", "epsilon"):
            v = float(getattr(self, name))
            if not 0.0 < v < 1.0:
                raise InvalidInputError(f"{name} must lie in (0, 1), got {v}", stage="config")
            object.__setattr__(self, name, v)
        if self.delta_override is not None:
            v = float(self.delta_override)
            if not (v >= 0.0 and math.isfinite(v)):
                raise InvalidInputError(f"delta override must be finite and >= 0, got {v}",
                                        stage="config")
            object.__setattr__(self, "delta_override", v)
        if self.alpha_override is not None:
            v = float(self.alpha_override)
            if math.isnan(v):
                raise InvalidInputError("alpha override must not be NaN", stage="config")
            object.__setattr__(self, "alpha_override", v)
        for name, lo in (("mc_samples", 1), ("rebalance", 1), ("workers", 1)):
            v = getattr(self, name)
            if int(v) != v or v < lo:
                raise InvalidInputError(f"{name} must be an integer >= {lo}, got {v!r}",
                                        stage="config")
            object.__setattr__(self, name, int(v))
        if self.window is not None:
            if int(self.window) != self.window or self.window < 3:
                raise InvalidInputError(f"window must be an integer >= 3, got {self.window!r}",
                                        stage="config")
            object.__setattr__(self, "window", int(self.window))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "returns_path", str(self.returns_path))

    @classmethod
    def from_mapping(cls, values: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(unknown)}", stage="config")
        missing = [k for k in ("returns_path", "rho") if values.get(k) is None]
        if missing:
            raise InvalidInputError(f"missing required config values: {', '.join(missing)}",
                                    stage="config")
        return cls(**values)

    def replace(self, **changes) -> "PipelineConfig":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        kw.update(changes)
        return PipelineConfig(**kw)


def load_config_file(path) -> dict:
    """Read a JSON object whose keys are :class:`PipelineConfig` field names."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read config file {path}: {exc.strerror}", stage="config") from None
    try:
        values = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"config is not valid JSON: {exc.msg}", row=exc.lineno,
                         column=exc.colno, stage="config") from None
    if not isinstance(values, dict):
        raise ParseError("config must be a JSON object", stage="config")
    return values


# -- CSV ------------------------------------------------------------------------

def _cell_value(cell: str, row: int, col: int) -> float:
    text = cell.strip().replace("−", "-")
    if not text:
        raise ParseError("missing value", row=row, column=col, stage="load")
    if not _NUMBER.match(text):
        hint = "; use '.' as the decimal point" if "," in text else ""
        raise ParseError(f"non-numeric cell {cell!r}{hint}", row=row, column=col, stage="load")
    return float(text)


def load_csv(path, period: str = "simple return") -> ReturnSeries:
    """Read a header-plus-rows CSV of simple returns.

    Rows and columns in error messages are 1-based, with the header as
    row 1. Missing cells are errors, never imputed.
    """
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InvalidInputError(f"cannot read returns file {path}: {exc.strerror}", stage="load") from None
    except UnicodeDecodeError as exc:
        raise ParseError(f"returns file is not UTF-8: {exc.reason}", stage="load") from None
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise ParseError("no header: returns file is empty", row=1, stage="load")
    header = [h.strip() for h in rows[0]]
    d = len(header)
    for j, h in enumerate(header, start=1):
        if not h:
            raise ParseError("empty asset label in header", row=1, column=j, stage="load")
        if _NUMBER.match(h):
            raise ParseError(f"header cell {h!r} is numeric; first row must hold asset labels",
                             row=1, column=j, stage="load")
    if len(set(header)) != d:
        raise ParseError("duplicate asset labels in header", row=1, stage="load")
    data = np.empty((len(rows) - 1, d))
    for i, raw in enumerate(rows[1:], start=2):
        if len(raw) != d:
            col = min(len(raw), d) + 1 if len(raw) < d else d + 1
            msg = f"expected {d} fields, found {len(raw)}"
            if len(raw) > d:
                for j in range(len(raw) - 1):
                    if _DIGITS.match(raw[j].strip()) and raw[j + 1].strip().isdigit():
                        msg += "; looks like a decimal comma, use '.' as the decimal point"
                        col = j + 1
                        break
            raise ParseError(msg, row=i, column=col, stage="load")
        for j, cell in enumerate(raw):
            data[i - 2, j] = _cell_value(cell, i, j + 1)
    if data.shape[0] < 2:
        raise InvalidInputError(f"need at least 2 return rows, found {data.shape[0]}", stage="load")
    return ReturnSeries(data, tuple(header), period)


def write_csv(path, series: ReturnSeries) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(series.asset_labels)
        for row in series.data:
            w.writerow([repr(float(v)) for v in row])


# -- canonical JSON -------------------------------------------------------------

def _fmt_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if not any(ch in s for ch in ".en"):
        s += ".0"
    return s


def canonical_json(obj, indent: int = 0) -> str:
    """Deterministic JSON text; dict order is preserved, floats use 17 digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(canonical_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + canonical_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (pad + json.dumps(str(k)) + ": " + canonical_json(v, indent + 1) for k, v in obj.items())
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _floats(values) -> np.ndarray:
    return np.asarray(values, dtype=float)


# -- reports ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PipelineReport:
    """Everything one run produced.

    ``diagnostics`` holds named scalars only (sizes, condition numbers and
    residuals). Wall-clock timings are left out so reports stay
    reproducible byte for byte.
    """

    calibration: CalibrationReport
    solution: RobustSolution
    markowitz: MarkowitzSolution
    params: RobustParams
    asset_labels: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        cal, sol, mk, prm = self.calibration, self.solution, self.markowitz, self.params
        ups = None
        if cal.upsilon_g is not None:
            ups = {"matrix": cal.upsilon_g.matrix, "bandwidth": int(cal.upsilon_g.bandwidth),
                   "kernel": cal.upsilon_g.kernel}
        return {
            "asset_labels": list(self.asset_labels),
            "params": {"p": prm.p, "rho": prm.rho, "delta": prm.delta, "alpha_bar": prm.alpha_bar,
                       "delta0": prm.delta0, "epsilon": prm.epsilon},
            "solution": {"phi": sol.phi, "objective": sol.objective,
                         "kkt_residual": sol.kkt_residual, "iterations": int(sol.iterations),
                         "binding": bool(sol.binding), "multiplier": sol.multiplier,
                         "worst_case_mean": sol.worst_case_mean},
            "calibration": {"delta_star": cal.delta_star, "v0": cal.v0, "alpha_bar": cal.alpha_bar,
                            "phi_plugin": cal.phi_plugin, "lambda1_plugin": cal.lambda1_plugin,
                            "upsilon_g": ups, "upsilon_phi": cal.upsilon_phi,
                            "c_star": cal.c_star, "mc_seed": int(cal.mc_seed),
                            "mc_samples": int(cal.mc_samples),
                            "delta_overridden": bool(cal.delta_overridden),
                            "alpha_overridden": bool(cal.alpha_overridden)},
            "markowitz": {"phi": mk.phi, "lambda1": mk.lambda1, "lambda2": mk.lambda2,
                          "objective": mk.objective,
                          "stationarity_residual": mk.stationarity_residual,
                          "budget_residual": mk.budget_residual,
                          "target_residual": mk.target_residual},
            "diagnostics": dict(self.diagnostics),
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineReport":
        s, c, m, pr = obj["solution"], obj["calibration"], obj["markowitz"], obj["params"]
        ups = c["upsilon_g"]
        if ups is not None:
            ups = LongRunCovariance(_floats(ups["matrix"]), int(ups["bandwidth"]), ups["kernel"])
        return cls(
            calibration=CalibrationReport(
                float(c["delta_star"]), float(c["v0"]), float(c["alpha_bar"]),
                _floats(c["phi_plugin"]), float(c["lambda1_plugin"]), ups,
                float(c["upsilon_phi"]), float(c["c_star"]), int(c["mc_seed"]),
                int(c["mc_samples"]), bool(c["delta_overridden"]), bool(c["alpha_overridden"])),
            solution=RobustSolution(
                _floats(s["phi"]), float(s["objective"]), float(s["kkt_residual"]),
                int(s["iterations"]), bool(s["binding"]), float(s["multiplier"]),
                float(s["worst_case_mean"])),
            markowitz=MarkowitzSolution(
                _floats(m["phi"]), float(m["lambda1"]), float(m["lambda2"]),
                float(m["objective"]), float(m["stationarity_residual"]),
                float(m["budget_residual"]), float(m["target_residual"])),
            params=RobustParams(p=float(pr["p"]), delta=float(pr["delta"]),
                                alpha_bar=float(pr["alpha_bar"]), rho=float(pr["rho"]),
                                delta0=float(pr["delta0"]), epsilon=float(pr["epsilon"])),
            asset_labels=tuple(obj["asset_labels"]),
            diagnostics=dict(obj["diagnostics"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "PipelineReport":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, PipelineReport):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


# -- orchestration --------------------------------------------------------------

@contextmanager
def stage(name: str):
    """Tag package errors raised inside the block with the stage ``name``."""
    try:
        yield
    except DRMVError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except np.linalg.LinAlgError as exc:
        raise DegenerateInputError(f"linear algebra failure: {exc}", stage=name) from exc


def _cond(mat: np.ndarray) -> float:
    return float(np.linalg.cond(mat))


class CalibrationStages(NamedTuple):
    moments: EmpiricalMoments
    markowitz: MarkowitzSolution
    calibration: CalibrationReport


def run_calibration(series: ReturnSeries, config: PipelineConfig) -> CalibrationStages:
    """Stages up to and including the floor; overrides skip their stage."""
    with stage("moments"):
        moments = empirical_moments(series)
    with stage("markowitz"):
        mk = solve_markowitz(moments, config.rho)

    with stage("calibrate_delta"):
        if config.delta_override is None:
            dc = calibrate_delta(series, config.rho, config.delta0, config.mc_samples,
                                 config.seed, p=config.p, workers=config.workers)
            delta, ups_g, c_star = dc.delta_star, dc.upsilon_g, dc.c_star
        else:
            delta, ups_g, c_star = config.delta_override, None, c_star_of(moments)

    with stage("calibrate_alpha"):
        with warnings.catch_warnings():
            # a zero radius is reported through calibration.v0 == 1
            warnings.simplefilter("ignore", RuntimeWarning)
            ac = calibrate_alpha(series, mk.phi, config.rho, delta, config.epsilon, p=config.p)
        alpha_bar = ac.alpha_bar if config.alpha_override is None else config.alpha_override

    calibration = CalibrationReport(
        delta_star=delta, v0=ac.v0, alpha_bar=alpha_bar, phi_plugin=mk.phi,
        lambda1_plugin=mk.lambda1, upsilon_g=ups_g, upsilon_phi=ac.upsilon_phi,
        c_star=c_star, mc_seed=config.seed, mc_samples=config.mc_samples,
        delta_overridden=config.delta_override is not None,
        alpha_overridden=config.alpha_override is not None,
    )
    return CalibrationStages(moments, mk, calibration)


def calibration_dict(stages: CalibrationStages, series: ReturnSeries,
                     config: PipelineConfig) -> dict:
    """Report of the ``calibrate`` command; same layout as the matching report sections."""
    cal = stages.calibration
    params = RobustParams(p=config.p, delta=cal.delta_star, alpha_bar=cal.alpha_bar,
                          rho=config.rho, delta0=config.delta0, epsilon=config.epsilon)
    dummy = RobustSolution(stages.markowitz.phi, float("nan"), float("nan"), 0, False)
    full = PipelineReport(cal, dummy, stages.markowitz, params, series.asset_labels).to_dict()
    return {k: full[k] for k in ("asset_labels", "params", "calibration", "markowitz")}


def run_series(series: ReturnSeries, config: PipelineConfig) -> PipelineReport:
    """Pipeline on an in-memory series; ``config.returns_path`` is ignored."""
    moments, mk, calibration = run_calibration(series, config)
    delta, alpha_bar = calibration.delta_star, calibration.alpha_bar
    with stage("solve"):
        params = RobustParams(p=config.p, delta=delta, alpha_bar=alpha_bar, rho=config.rho,
                              delta0=config.delta0, epsilon=config.epsilon)
        sol = solve_robust(moments, params)

    diagnostics = {
        "n": series.n,
        "d": series.d,
        "second_moment_condition": _cond(moments.second_moment),
        "covariance_condition": _cond(moments.covariance),
        "markowitz_stationarity_residual": mk.stationarity_residual,
        "solver_kkt_residual": sol.kkt_residual,
        "solver_iterations": sol.iterations,
        "budget_residual": abs(float(sol.phi.sum()) - 1.0),
    }
    return PipelineReport(calibration, sol, mk, params, series.asset_labels, diagnostics)


def run_pipeline(config: PipelineConfig) -> PipelineReport:
    """Load the returns file and run moments, Markowitz, radius, floor and solve in order."""
    series = load_csv(config.returns_path)
    return run_series(series, config)


# -- backtest ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BacktestResult:
    """Rolling re-estimation output, ordered by rebalance date.

    ``rebalance_rows[k]`` is the first out-of-sample row of window ``k``;
    ``wealth[0] == 1`` and ``wealth[t + 1]`` is wealth after out-of-sample
    period ``t``.
    """

    rebalance_rows: List[int]
    weights: np.ndarray
    portfolio_returns: np.ndarray
    wealth: np.ndarray
    reports: list

    def to_dict(self) -> dict:
        return {
            "rebalance_rows": [int(r) for r in self.rebalance_rows],
            "weights": self.weights,
            "portfolio_returns": self.portfolio_returns,
            "wealth": self.wealth,
            "reports": [r.to_dict() if isinstance(r, PipelineReport) else None for r in self.reports],
        }

    def to_json(self) -> str:
        return canonical_json(self.to_dict()) + "\n"


def rebalance_schedule(n: int, window: int, rebalance: int) -> List[int]:
    return list(range(window, n, rebalance))


def backtest_series(series: ReturnSeries, config: PipelineConfig,
                    strategy: Optional[Callable[[ReturnSeries], object]] = None) -> BacktestResult:
    """Roll a trailing window through ``series`` and compound realized returns.

    ``strategy`` maps a window to weights (or to a :class:`PipelineReport`);
    it defaults to the full pipeline.
    """
    window = config.window
    if window is None:
        raise InvalidInputError("backtest needs a window length", stage="backtest")
    if window < series.d + 2:
        raise InvalidInputError(f"window {window} must be at least d + 2 = {series.d + 2}",
                                stage="backtest")
    if series.n < window + 1:
        raise InvalidInputError(
            f"insufficient data: {series.n} periods, need at least window + 1 = {window + 1}",
            stage="backtest")
    dates = rebalance_schedule(series.n, window, config.rebalance)
    run = strategy or (lambda s: run_series(s, config))

    def one(t):
        with stage(f"backtest window ending at row {t}"):
            return run(series.window(t - window, t))

    if config.workers > 1 and len(dates) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            outputs = list(pool.map(one, dates))
    else:
        outputs = [one(t) for t in dates]

    weights = np.array([o.solution.phi if isinstance(o, PipelineReport) else np.asarray(o, float)
                        for o in outputs])
    rets = []
    for k, t in enumerate(dates):
        stop = min(t + config.rebalance, series.n)
        rets.extend(series.data[t:stop] @ weights[k])
    rets = np.asarray(rets)
    wealth = np.concatenate([[1.0], np.cumprod(1.0 + rets)])
    return BacktestResult(dates, weights, rets, wealth, outputs)


def backtest(config: PipelineConfig, strategy=None) -> BacktestResult:
    """Load ``config.returns_path`` and run :func:`backtest_series`."""
    return backtest_series(load_csv(config.returns_path), config, strategy)
