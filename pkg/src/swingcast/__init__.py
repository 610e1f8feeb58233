"""Physics-informed Gaussian-process forecasting of power-grid swing dynamics.

The pipeline: simulate a stochastic single-generator swing model driven by
mean-reverting wind-power fluctuations, estimate prior means and covariances
from a Monte Carlo ensemble, and condition that prior on partial
observations to forecast or reconstruct the grid state with uncertainty
bands.  A conventional kernel-based GP regression baseline is included for
comparison.
"""

from .errors import (
    AlignmentError,
    ChecksumMismatch,
    ConfigError,
    DimensionMismatch,
    FitFailed,
    FormatVersionMismatch,
    IndexOutOfRange,
    IntegrationDiverged,
    NoEquilibrium,
    SingularPrior,
)
from .sde import (
    GridParams,
    OuParams,
    SimConfig,
    StateVec,
    Trajectory,
    drift_f,
    equilibrium_angle,
    integrate_lanes,
    noise_coupling_g,
    realization_stream,
    rk2_step,
    simulate_trajectory,
)
from .ensemble import (
    Ensemble,
    IndexSet,
    MomentView,
    Variable,
    load_ensemble,
    run_ensemble,
    save_ensemble,
)
from .gpr import (
    ForecastResult,
    JointPrior,
    KernelFamily,
    KernelSpec,
    MeanModel,
    Observations,
    baseline_forecast,
    build_prior,
    condition,
    fit_hyperparameters,
    nlml,
)
from .scenarios import (
    BaselineRun,
    CaseId,
    CaseRun,
    ComparisonRun,
    MetricsReport,
    ScenarioSpec,
    compute_metrics,
    run_baseline_comparison,
    run_case1,
    run_case2,
    run_case3,
)

__version__ = "0.1.0"
