"""Wasserstein-robust mean-variance portfolios with data-driven calibration."""

from importlib import resources as _resources

from .calibration import (
    AlphaCalibration,
    CalibrationReport,
    DeltaCalibration,
    GFunctional,
    calibrate,
    calibrate_alpha,
    calibrate_delta,
    g_values,
    l0_sample,
)
from .duality import (
    INFEASIBLE,
    RobustParams,
    dual_order,
    feasible_region_check,
    inner_max_second_moment,
    lp_norm,
    robust_objective,
    worst_case_mean,
)
from .errors import (
    DegenerateInputError,
    DRMVError,
    InfeasibleProblemError,
    InvalidInputError,
    NonConvergenceError,
    ParseError,
)
from .markowitz import MarkowitzSolution, gmv_portfolio, solve_markowitz, zero_multiplier_target
from .moments import (
    EmpiricalMoments,
    LongRunCovariance,
    ReturnSeries,
    empirical_moments,
    long_run_covariance,
)
from .pipeline import (
    BacktestResult,
    PipelineConfig,
    PipelineReport,
    backtest,
    load_csv,
    run_pipeline,
    run_series,
)
from .solver import RobustSolution, SolverConfig, region_nonempty, solve_robust

__version__ = "0.1.0"


def sample_data_path() -> str:
    """Filesystem path of the bundled 120 x 5 synthetic monthly panel."""
    return str(_resources.files(__name__) / "data" / "sample_returns.csv")
