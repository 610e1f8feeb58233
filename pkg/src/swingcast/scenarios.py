"""Case studies: forecasting and state reconstruction on held-out truths.

Each case conditions the Monte Carlo prior of an ensemble on observations
taken from a "truth" realization that is simulated from a different master
seed (so the truth can never leak into the prior moments):

  Case 1       observe theta and omega before the cutoff, forecast both after.
  Case 2       observe theta only; forecast theta after the cutoff and
               reconstruct omega and pm_prime over the whole window.
  Case 3       Case 2 with the roles of theta and omega swapped.
  Case 3 extra Case 3 plus a batch of post-cutoff omega observations spread
               uniformly over (cutoff, horizon].

Observations and targets live on an integer-stride subgrid of the ensemble
time grid.  Metric windows are (cutoff, cutoff+2 s] and (cutoff+2, cutoff+4 s];
the mean-horizon statistic is the time past the cutoff until the absolute
mean error first exceeds twice the posterior std for 0.1 s running.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .ensemble import Ensemble, IndexSet, MomentView, Variable
from .errors import AlignmentError
from .gpr import (
    ForecastResult,
    JointPrior,
    KernelFamily,
    KernelSpec,
    Observations,
    baseline_forecast,
    build_prior,
    condition,
    fit_hyperparameters,
)
from .sde import Trajectory, realization_stream, simulate_trajectory

__all__ = [
    "CaseId",
    "ScenarioSpec",
    "MetricsReport",
    "CaseRun",
    "BaselineRun",
    "ComparisonRun",
    "run_case1",
    "run_case2",
    "run_case3",
    "run_baseline_comparison",
    "compute_metrics",
]

WINDOW_FC_NEAR = "cutoff+0-2s"
WINDOW_FC_FAR = "cutoff+2-4s"
WINDOW_OBSERVED = "observed"

_SUSTAIN_SECONDS = 0.1


class CaseId(Enum):
    CASE1 = "case1"
    CASE2 = "case2"
    CASE3 = "case3"
    CASE3_EXTRA = "case3_extra"


@dataclass(frozen=True)
class ScenarioSpec:
    """Configuration of one case study.

    `seed` is the master seed of the held-out truth; it must differ from the
    prior ensemble's master seed.  `extra_obs_count` only applies to
    CASE3_EXTRA.
    """

    case_id: CaseId = CaseId.CASE1
    cutoff_time: float = 8.3375
    horizon_end: float = 12.5
    obs_stride: int = 5
    seed: int = 777
    truth_realization: int = 0
    extra_obs_count: int = 333

    def __post_init__(self):
        if self.cutoff_time > self.horizon_end:
            raise ValueError("cutoff_time must not exceed horizon_end")
        if self.obs_stride < 1:
            raise ValueError(f"obs_stride must be >= 1, got {self.obs_stride}")
        if self.truth_realization < 0:
            raise ValueError("truth_realization must be >= 0")
        if self.extra_obs_count < 0:
            raise ValueError("extra_obs_count must be >= 0")


@dataclass
class MetricsReport:
    """Forecast-quality summary, keyed by variable label.

    `rmse_by_window` maps (variable, window-label) to RMSE of the posterior
    mean; `coverage_2sigma` is the fraction of post-cutoff truth points
    inside mean +/- 2 std; `mean_horizon` is in seconds past the cutoff.
    The `*_observed` fields describe reconstruction targets before the
    cutoff (empty when a case has none).
    """

    rmse_by_window: dict = field(default_factory=dict)
    coverage_2sigma: dict = field(default_factory=dict)
    mean_horizon: dict = field(default_factory=dict)
    coverage_2sigma_observed: dict = field(default_factory=dict)
    std_shrink_frac_observed: dict = field(default_factory=dict)

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        return MetricsReport(
            rmse_by_window={**self.rmse_by_window, **other.rmse_by_window},
            coverage_2sigma={**self.coverage_2sigma, **other.coverage_2sigma},
            mean_horizon={**self.mean_horizon, **other.mean_horizon},
            coverage_2sigma_observed={
                **self.coverage_2sigma_observed,
                **other.coverage_2sigma_observed,
            },
            std_shrink_frac_observed={
                **self.std_shrink_frac_observed,
                **other.std_shrink_frac_observed,
            },
        )

    def to_jsonable(self) -> dict:
        return {
            "rmse_by_window": {f"{v}/{w}": x for (v, w), x in self.rmse_by_window.items()},
            "coverage_2sigma": dict(self.coverage_2sigma),
            "mean_horizon_s": dict(self.mean_horizon),
            "coverage_2sigma_observed": dict(self.coverage_2sigma_observed),
            "std_shrink_frac_observed": dict(self.std_shrink_frac_observed),
        }


@dataclass
class CaseRun:
    """Everything a case produced, per variable."""

    spec: ScenarioSpec
    truth: Trajectory
    observations: Observations
    forecasts: dict
    target_times: dict
    prior_std: dict
    report: MetricsReport
    nugget_used: float


@dataclass
class BaselineRun:
    """Data-driven forecasts per variable, with the kernels used."""

    forecasts: dict
    target_times: dict
    kernels: dict
    report: MetricsReport


@dataclass
class ComparisonRun:
    physics: CaseRun
    baseline: BaselineRun


def _grid_layout(ensemble: Ensemble, spec: ScenarioSpec):
    """Index-space layout: observed, forecast and full-window stride grids."""
    dt = ensemble.dt
    k_grid_max = ensemble.n_steps
    k_end = int(math.floor(spec.horizon_end / dt + 1e-9))
    if k_end > k_grid_max:
        raise ValueError(
            f"horizon_end={spec.horizon_end} extends past the ensemble grid "
            f"(t_end={ensemble.times[-1]:g})"
        )
    k_last_obs = int(math.ceil(spec.cutoff_time / dt - 1e-9)) - 1
    k_first_fc = int(math.floor(spec.cutoff_time / dt + 1e-9)) + 1
    stride = spec.obs_stride
    obs_ks = np.arange(0, max(k_last_obs + 1, 0), stride, dtype=np.int64)
    first = ((k_first_fc + stride - 1) // stride) * stride
    fc_ks = np.arange(first, k_end + 1, stride, dtype=np.int64)
    full_ks = np.arange(0, k_end + 1, stride, dtype=np.int64)
    return obs_ks, fc_ks, full_ks, k_end


def _truth_trajectory(ensemble: Ensemble, spec: ScenarioSpec) -> Trajectory:
    if spec.seed == ensemble.master_seed:
        raise ValueError(
            "truth seed equals the prior ensemble's master seed; the truth "
            "realization must come from a disjoint ensemble"
        )
    cfg = replace(ensemble.sim, seed=spec.seed)
    rng = realization_stream(spec.seed, spec.truth_realization)
    return simulate_trajectory(ensemble.grid, ensemble.ou, cfg, rng, seed_used=spec.seed)


def _observe(truth: Trajectory, idx: IndexSet) -> Observations:
    return Observations(idx=idx, values=truth.data[idx.time_indices, idx.var_codes])


def _split_by_variable(
    joint: ForecastResult, prior: JointPrior, times: np.ndarray, variables
):
    """Per-variable forecasts, target times and prior stds from a joint result."""
    forecasts, target_times, prior_stds = {}, {}, {}
    prior_diag = np.diag(prior.c_ff)
    idx = joint.target_idx
    for var in variables:
        mask = idx.mask_for(var)
        sub_idx = idx.subset(mask)
        sel = np.flatnonzero(mask)
        forecasts[var] = ForecastResult(
            target_idx=sub_idx,
            posterior_mean=joint.posterior_mean[sel],
            posterior_cov=joint.posterior_cov[np.ix_(sel, sel)],
            posterior_std=joint.posterior_std[sel],
            nugget_used=joint.nugget_used,
        )
        target_times[var] = times[sub_idx.time_indices]
        prior_stds[var] = np.sqrt(np.clip(prior_diag[sel], 0.0, None))
    return forecasts, target_times, prior_stds


def compute_metrics(
    forecast: ForecastResult,
    truth: Trajectory,
    cutoff_time: float,
    prior_std: np.ndarray | None = None,
    sustain_time: float = _SUSTAIN_SECONDS,
) -> MetricsReport:
    """Metrics of one single-variable forecast against the truth.

    Raises AlignmentError when the forecast's indices do not address the
    truth grid.
    """
    idx = forecast.target_idx
    if idx is None:
        raise AlignmentError("forecast carries no grid index set")
    codes = np.unique(idx.var_codes)
    if codes.size > 1:
        raise ValueError("compute_metrics expects a single-variable forecast")
    report = MetricsReport()
    if len(idx) == 0:
        return report
    if idx.time_indices.max() >= len(truth):
        raise AlignmentError(
            f"forecast addresses time index {int(idx.time_indices.max())} beyond "
            f"the truth grid ({len(truth)} points)"
        )
    var = Variable(int(codes[0])).label
    t = truth.times[idx.time_indices]
    truth_vals = truth.data[idx.time_indices, idx.var_codes]
    err = forecast.posterior_mean - truth_vals
    inside = np.abs(err) <= 2.0 * forecast.posterior_std

    eps = 1e-12
    post = t > cutoff_time + eps
    for label, w_lo, w_hi in (
        (WINDOW_FC_NEAR, 0.0, 2.0),
        (WINDOW_FC_FAR, 2.0, 4.0),
    ):
        mask = post & (t > cutoff_time + w_lo + eps) & (t <= cutoff_time + w_hi + eps)
        if mask.any():
            report.rmse_by_window[(var, label)] = float(
                np.sqrt(np.mean(err[mask] ** 2))
            )
    if post.any():
        report.coverage_2sigma[var] = float(inside[post].mean())
        report.mean_horizon[var] = _mean_horizon(
            t[post], err[post], forecast.posterior_std[post], cutoff_time, sustain_time
        )

    observed = ~post
    if observed.any():
        report.rmse_by_window[(var, WINDOW_OBSERVED)] = float(
            np.sqrt(np.mean(err[observed] ** 2))
        )
        report.coverage_2sigma_observed[var] = float(inside[observed].mean())
        if prior_std is not None:
            shrunk = forecast.posterior_std[observed] < prior_std[observed]
            report.std_shrink_frac_observed[var] = float(shrunk.mean())
    return report


def _mean_horizon(t, err, std, cutoff_time, sustain_time) -> float:
    """Seconds past the cutoff until the error leaves the 2-sigma band for
    `sustain_time` running; the full window length when it never does."""
    exceed = np.abs(err) > 2.0 * std
    if t.size >= 2:
        spacing = float(t[1] - t[0])
        run = max(1, int(math.ceil(sustain_time / spacing - 1e-9)))
    else:
        run = 1
    if exceed.size >= run:
        windowed = np.convolve(exceed.astype(float), np.ones(run), mode="valid")
        hits = np.flatnonzero(windowed >= run - 0.5)
        if hits.size:
            return float(t[hits[0]] - cutoff_time)
    return float(t[-1] - cutoff_time)


def _run_joint_case(
    spec: ScenarioSpec,
    ensemble: Ensemble,
    obs_idx: IndexSet,
    target_idx: IndexSet,
    variables,
    observed_vars_have_prior: bool = True,
) -> CaseRun:
    truth = _truth_trajectory(ensemble, spec)
    view = MomentView(ensemble)
    prior = build_prior(view, obs_idx, target_idx)
    obs = _observe(truth, obs_idx)
    joint = condition(prior, obs)
    forecasts, target_times, prior_stds = _split_by_variable(
        joint, prior, ensemble.times, variables
    )
    report = MetricsReport()
    for var in variables:
        report = report.merge(
            compute_metrics(
                forecasts[var], truth, spec.cutoff_time, prior_std=prior_stds[var]
            )
        )
    return CaseRun(
        spec=spec,
        truth=truth,
        observations=obs,
        forecasts=forecasts,
        target_times=target_times,
        prior_std=prior_stds,
        report=report,
        nugget_used=joint.nugget_used,
    )


def run_case1(spec: ScenarioSpec, ensemble: Ensemble) -> CaseRun:
    """Forecast theta and omega past the cutoff from their joint history."""
    if spec.case_id is not CaseId.CASE1:
        raise ValueError(f"expected a CASE1 spec, got {spec.case_id}")
    obs_ks, fc_ks, _, _ = _grid_layout(ensemble, spec)
    obs_idx = IndexSet.concat(
        IndexSet.grid(Variable.THETA, obs_ks), IndexSet.grid(Variable.OMEGA, obs_ks)
    )
    target_idx = IndexSet.concat(
        IndexSet.grid(Variable.THETA, fc_ks), IndexSet.grid(Variable.OMEGA, fc_ks)
    )
    return _run_joint_case(
        spec, ensemble, obs_idx, target_idx, (Variable.THETA, Variable.OMEGA)
    )


def _reconstruction_case(
    spec: ScenarioSpec,
    ensemble: Ensemble,
    observed_var: Variable,
    extra_obs_ks: np.ndarray | None = None,
) -> CaseRun:
    """Shared body of cases 2 and 3: one observed variable, two
    reconstructed over the full window."""
    obs_ks, fc_ks, full_ks, _ = _grid_layout(ensemble, spec)
    if extra_obs_ks is not None and extra_obs_ks.size:
        all_obs_ks = np.union1d(obs_ks, extra_obs_ks)
    else:
        all_obs_ks = obs_ks
    obs_idx = IndexSet.grid(observed_var, all_obs_ks)
    recon_vars = tuple(v for v in Variable if v is not observed_var)
    target_idx = IndexSet.concat(
        IndexSet.grid(observed_var, fc_ks),
        *(IndexSet.grid(v, full_ks) for v in recon_vars),
    )
    return _run_joint_case(
        spec, ensemble, obs_idx, target_idx, (observed_var, *recon_vars)
    )


def run_case2(spec: ScenarioSpec, ensemble: Ensemble) -> CaseRun:
    """Observe theta only; forecast theta and reconstruct omega, pm_prime."""
    if spec.case_id is not CaseId.CASE2:
        raise ValueError(f"expected a CASE2 spec, got {spec.case_id}")
    return _reconstruction_case(spec, ensemble, Variable.THETA)


def _uniform_extra_indices(spec: ScenarioSpec, ensemble: Ensemble) -> np.ndarray:
    """`extra_obs_count` grid indices spread uniformly over (cutoff, horizon]."""
    dt = ensemble.dt
    k_cut = spec.cutoff_time / dt
    k_end = math.floor(spec.horizon_end / dt + 1e-9)
    count = spec.extra_obs_count
    if count == 0:
        return np.empty(0, dtype=np.int64)
    j = np.arange(1, count + 1, dtype=float)
    ks = np.rint(k_cut + j * (k_end - k_cut) / count).astype(np.int64)
    lo = int(math.floor(k_cut + 1e-9)) + 1
    return np.unique(ks[(ks >= lo) & (ks <= k_end)])


def run_case3(spec: ScenarioSpec, ensemble: Ensemble) -> CaseRun:
    """Observe omega; forecast omega and reconstruct theta, pm_prime.

    CASE3_EXTRA additionally observes `extra_obs_count` omega samples on a
    uniform grid past the cutoff.
    """
    if spec.case_id not in (CaseId.CASE3, CaseId.CASE3_EXTRA):
        raise ValueError(f"expected a CASE3 or CASE3_EXTRA spec, got {spec.case_id}")
    extra = (
        _uniform_extra_indices(spec, ensemble)
        if spec.case_id is CaseId.CASE3_EXTRA
        else None
    )
    return _reconstruction_case(spec, ensemble, Variable.OMEGA, extra_obs_ks=extra)


def run_baseline_comparison(
    spec: ScenarioSpec,
    ensemble: Ensemble,
    family: KernelFamily = KernelFamily.EXPONENTIAL,
    kernel: KernelSpec | None = None,
) -> ComparisonRun:
    """Physics-informed Case 1 versus the data-driven kernel baseline.

    The baseline fits one kernel per variable on the pre-cutoff history
    (unless `kernel` pins it) and forecasts the same post-cutoff targets.
    """
    physics = run_case1(spec, ensemble)
    obs_ks, fc_ks, _, _ = _grid_layout(ensemble, spec)
    truth = physics.truth
    forecasts, target_times, kernels = {}, {}, {}
    report = MetricsReport()
    for var in (Variable.THETA, Variable.OMEGA):
        t_obs = truth.times[obs_ks]
        y_obs = truth.data[obs_ks, int(var)]
        kern = kernel if kernel is not None else fit_hyperparameters(t_obs, y_obs, family)
        t_fc = truth.times[fc_ks]
        fc = baseline_forecast(
            t_obs, y_obs, kern, t_fc, target_idx=IndexSet.grid(var, fc_ks)
        )
        forecasts[var] = fc
        target_times[var] = t_fc
        kernels[var] = kern
        report = report.merge(compute_metrics(fc, truth, spec.cutoff_time))
    baseline = BaselineRun(
        forecasts=forecasts,
        target_times=target_times,
        kernels=kernels,
        report=report,
    )
    return ComparisonRun(physics=physics, baseline=baseline)
