"""Gaussian-process conditioning and the parametric-kernel baseline.

The physics-informed route takes prior means and covariance blocks from a
Monte Carlo MomentView and conditions them on observed entries:

    posterior mean = mean_f + C_fo C_oo^-1 (x_o - mean_o)
    posterior cov  = C_ff  - C_fo C_oo^-1 C_of

The observation block is factorized as symmetric positive definite with an
escalating nugget: 0, then (1e-10, 1e-8, 1e-6) times max(diag C_oo); the
first successful factorization wins and the nugget actually used is
reported in the result.

The data-driven baseline assumes a stationary kernel over time, fits
(amplitude, length_scale, noise_floor) by minimizing the negative log
marginal likelihood, and predicts through the same conditioning algebra.
It operates on a single variable's time series and cannot reconstruct
unobserved variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .ensemble import IndexSet, MomentView
from .errors import DimensionMismatch, FitFailed, SingularPrior

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "MeanModel",
    "JointPrior",
    "Observations",
    "ForecastResult",
    "build_prior",
    "condition",
    "nlml",
    "fit_hyperparameters",
    "baseline_forecast",
    "NUGGET_FACTORS",
]

# escalating diagonal regularization, as fractions of max(diag C_oo)
NUGGET_FACTORS = (0.0, 1e-10, 1e-8, 1e-6)

# tolerated posterior-variance undershoot, as a fraction of the prior scale
_DIAG_FLOOR_FACTOR = 1e-8


class KernelFamily(Enum):
    EXPONENTIAL = "exponential"
    SQUARED_EXPONENTIAL = "squared_exponential"


class MeanModel(Enum):
    ZERO = "zero"
    CONSTANT_FITTED = "constant_fitted"


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel: `amplitude` is the variance at zero lag,
    `length_scale` the correlation time in seconds, `noise_floor` the
    observation-noise variance added to the fitted diagonal."""

    family: KernelFamily
    amplitude: float
    length_scale: float
    noise_floor: float = 0.0

    def __post_init__(self):
        if not self.amplitude > 0:
            raise ValueError(f"amplitude must be > 0, got {self.amplitude}")
        if not self.length_scale > 0:
            raise ValueError(f"length_scale must be > 0, got {self.length_scale}")
        if self.noise_floor < 0:
            raise ValueError(f"noise_floor must be >= 0, got {self.noise_floor}")

    def matrix(self, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
        """Kernel matrix k(t1[i], t2[j]) without the noise term."""
        lag = np.abs(np.subtract.outer(np.asarray(t1, float), np.asarray(t2, float)))
        r = lag / self.length_scale
        if self.family is KernelFamily.EXPONENTIAL:
            return self.amplitude * np.exp(-r)
        return self.amplitude * np.exp(-0.5 * r * r)


@dataclass
class JointPrior:
    """Joint Gaussian prior over observed and target entries."""

    obs_idx: IndexSet
    target_idx: IndexSet
    mean_o: np.ndarray
    mean_f: np.ndarray
    c_oo: np.ndarray
    c_of: np.ndarray
    c_ff: np.ndarray

    def __post_init__(self):
        m, p = len(self.obs_idx), len(self.target_idx)
        shapes = {
            "mean_o": (self.mean_o.shape, (m,)),
            "mean_f": (self.mean_f.shape, (p,)),
            "c_oo": (self.c_oo.shape, (m, m)),
            "c_of": (self.c_of.shape, (m, p)),
            "c_ff": (self.c_ff.shape, (p, p)),
        }
        for name, (got, want) in shapes.items():
            if got != want:
                raise DimensionMismatch(f"{name} has shape {got}, expected {want}")

    @property
    def c_fo(self) -> np.ndarray:
        return self.c_of.T


@dataclass(frozen=True)
class Observations:
    """Observed values attached to an index set."""

    idx: IndexSet
    values: np.ndarray

    def __post_init__(self):
        vals = np.ascontiguousarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size != len(self.idx):
            raise DimensionMismatch(
                f"{vals.size} values for {len(self.idx)} index entries"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("observation values must be finite")
        object.__setattr__(self, "values", vals)


@dataclass
class ForecastResult:
    """Posterior over the target entries.

    `posterior_std` is sqrt of the clamped posterior-covariance diagonal;
    `nugget_used` is the absolute diagonal regularization applied to the
    observation block (0 when none was needed).
    """

    target_idx: IndexSet | None
    posterior_mean: np.ndarray
    posterior_cov: np.ndarray
    posterior_std: np.ndarray
    nugget_used: float


def build_prior(view: MomentView, obs_idx: IndexSet, target_idx: IndexSet) -> JointPrior:
    """Assemble the joint prior blocks from ensemble moments."""
    return JointPrior(
        obs_idx=obs_idx,
        target_idx=target_idx,
        mean_o=view.mean_vector(obs_idx),
        mean_f=view.mean_vector(target_idx),
        c_oo=view.cov_block(obs_idx, obs_idx),
        c_of=view.cov_block(obs_idx, target_idx),
        c_ff=view.cov_block(target_idx, target_idx),
    )


def _factor_with_nugget(c_oo: np.ndarray):
    """Cholesky of c_oo + nugget*I along the escalating ladder.

    Returns (factorization, nugget_used).  Raises SingularPrior when even
    the largest nugget fails.
    """
    m = c_oo.shape[0]
    tau = float(np.max(np.diag(c_oo))) if m else 0.0
    if not np.all(np.isfinite(c_oo)):
        raise SingularPrior("observation covariance contains non-finite entries")
    for factor in NUGGET_FACTORS:
        nugget = factor * tau
        try:
            mat = c_oo if nugget == 0.0 else c_oo + nugget * np.eye(m)
            return cho_factor(mat, lower=True), nugget
        except LinAlgError:
            continue
    raise SingularPrior(
        f"observation covariance not positive definite even with nugget "
        f"{NUGGET_FACTORS[-1]:g} * max(diag) = {NUGGET_FACTORS[-1] * tau:g}"
    )


def _posterior_std(cov: np.ndarray, prior_scale: float) -> np.ndarray:
    """Clamped sqrt of the covariance diagonal.

    Small negatives (down to -1e-8 * prior_scale) are rounding and clamp to
    zero; anything lower means the solve went wrong.
    """
    diag = np.diag(cov).copy()
    floor = -_DIAG_FLOOR_FACTOR * max(prior_scale, 0.0)
    if diag.size and diag.min() < floor:
        raise SingularPrior(
            f"posterior variance {diag.min():.3e} below tolerance {floor:.3e}"
        )
    return np.sqrt(np.clip(diag, 0.0, None))


def _condition_blocks(
    mean_o: np.ndarray,
    mean_f: np.ndarray,
    c_oo: np.ndarray,
    c_of: np.ndarray,
    c_ff: np.ndarray,
    values: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Shared conditioning algebra; returns (mean, cov, nugget_used)."""
    m = c_oo.shape[0]
    tau_oo = float(np.max(np.diag(c_oo))) if m else 0.0
    if m == 0 or tau_oo == 0.0:
        # no observations, or observations with zero prior variance (then
        # C_of = 0 by positive semidefiniteness): conditioning changes nothing
        cov = 0.5 * (c_ff + c_ff.T)
        return mean_f.copy(), cov, 0.0

    factor, nugget = _factor_with_nugget(c_oo)
    alpha = cho_solve(factor, values - mean_o)
    post_mean = mean_f + c_of.T @ alpha
    v = cho_solve(factor, c_of)
    cov = c_ff - c_of.T @ v
    cov = 0.5 * (cov + cov.T)
    return post_mean, cov, nugget


def condition(prior: JointPrior, obs: Observations) -> ForecastResult:
    """Condition the joint prior on observed values."""
    if obs.idx != prior.obs_idx:
        raise DimensionMismatch("observation index set differs from the prior's")
    mean, cov, nugget = _condition_blocks(
        prior.mean_o, prior.mean_f, prior.c_oo, prior.c_of, prior.c_ff, obs.values
    )
    prior_scale = max(
        float(np.max(np.diag(prior.c_ff))) if prior.c_ff.size else 0.0,
        float(np.max(np.diag(prior.c_oo))) if prior.c_oo.size else 0.0,
    )
    return ForecastResult(
        target_idx=prior.target_idx,
        posterior_mean=mean,
        posterior_cov=cov,
        posterior_std=_posterior_std(cov, prior_scale),
        nugget_used=nugget,
    )


def _centered(values: np.ndarray, mean_model: MeanModel) -> tuple[np.ndarray, float]:
    if mean_model is MeanModel.CONSTANT_FITTED:
        mu = float(values.mean()) if values.size else 0.0
    else:
        mu = 0.0
    return values - mu, mu


def nlml(
    times: np.ndarray,
    values: np.ndarray,
    kernel: KernelSpec,
    mean_model: MeanModel = MeanModel.CONSTANT_FITTED,
) -> float:
    """Negative log marginal likelihood of the values under the kernel.

    0.5*y K^-1 y + 0.5*log det K + (n/2) log 2*pi, with K the kernel matrix
    over `times` plus noise_floor on the diagonal and y centered per
    `mean_model`.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    n = times.size
    if n == 0 or values.size != n:
        raise DimensionMismatch(f"{values.size} values for {n} times")
    y, _ = _centered(values, mean_model)
    k = kernel.matrix(times, times)
    if kernel.noise_floor:
        k = k + kernel.noise_floor * np.eye(n)
    try:
        factor = cho_factor(k, lower=True)
    except LinAlgError as exc:
        raise SingularPrior(f"kernel matrix not positive definite: {exc}") from None
    quad = float(y @ cho_solve(factor, y))
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return 0.5 * quad + 0.5 * logdet + 0.5 * n * math.log(2.0 * math.pi)


# hyperparameter search box, in units of the centered-data variance
# (amplitude, noise) and of the observation time spacing/span (length)
AMP_GRID_FACTORS = (1e-2, 1e-1, 1.0, 1e1, 1e2)
AMP_BOUND_FACTORS = (1e-3, 1e3)
NOISE_GRID_FACTORS = (1e-8, 1e-5, 1e-2)
NOISE_BOUND_FACTORS = (1e-12, 1.0)
LENGTH_GRID_POINTS = 5
_REFINE_TOP = 3
_VAR_FLOOR = 1e-12


def _coordinate_refine(
    fun,
    x0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    step: float = 0.25,
    shrink: float = 0.5,
    min_step: float = 1e-3,
    max_evals: int = 200,
    history: list | None = None,
):
    """Greedy pattern search over box-bounded coordinates.

    Steps one coordinate at a time by +/-`step`, accepts only improvements,
    and halves the step when a full sweep fails.  Deterministic; `history`
    (when given) collects the accepted objective values in order.
    """
    x = np.clip(np.asarray(x0, float), lo, hi)
    fval = fun(x)
    evals = 0
    if history is not None:
        history.append(fval)
    while step >= min_step and evals < max_evals:
        improved = False
        for i in range(x.size):
            for sgn in (1.0, -1.0):
                trial = x.copy()
                trial[i] = min(max(trial[i] + sgn * step, lo[i]), hi[i])
                if trial[i] == x[i]:
                    continue
                fv = fun(trial)
                evals += 1
                if fv < fval:
                    x, fval = trial, fv
                    improved = True
                    if history is not None:
                        history.append(fval)
                    break
        if not improved:
            step *= shrink
    return x, fval


def _search_box(times: np.ndarray, values: np.ndarray, mean_model: MeanModel):
    """Data-driven grid and bounds in log10(amplitude, length, noise)."""
    y, _ = _centered(values, mean_model)
    var_scale = max(float(np.var(y, ddof=1)) if y.size > 1 else 0.0, _VAR_FLOOR)
    t_sorted = np.unique(times)
    gaps = np.diff(t_sorted)
    min_gap = float(gaps.min()) if gaps.size else 1.0
    span = max(float(t_sorted[-1] - t_sorted[0]), 4.0 * min_gap)
    amp_grid = np.log10(np.array(AMP_GRID_FACTORS) * var_scale)
    len_grid = np.log10(np.geomspace(2.0 * min_gap, span, LENGTH_GRID_POINTS))
    noise_grid = np.log10(np.array(NOISE_GRID_FACTORS) * var_scale)
    lo = np.log10(
        [AMP_BOUND_FACTORS[0] * var_scale, 0.25 * min_gap, NOISE_BOUND_FACTORS[0] * var_scale]
    )
    hi = np.log10(
        [AMP_BOUND_FACTORS[1] * var_scale, 4.0 * span, NOISE_BOUND_FACTORS[1] * var_scale]
    )
    return amp_grid, len_grid, noise_grid, lo, hi


def fit_hyperparameters(
    times: np.ndarray,
    values: np.ndarray,
    family: KernelFamily,
    mean_model: MeanModel = MeanModel.CONSTANT_FITTED,
) -> KernelSpec:
    """Fit kernel hyperparameters by multi-start NLML minimization.

    All points of a 5x5x3 log-space grid over (amplitude, length_scale,
    noise_floor) are scored; the best few become starts for coordinate
    refinement.  Fully deterministic; ties break toward the smallest
    length_scale, then the smallest amplitude.  Raises FitFailed when no
    start factorizes.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if times.size < 8:
        raise ValueError(f"need at least 8 observations to fit, got {times.size}")
    if times.size != values.size:
        raise DimensionMismatch(f"{values.size} values for {times.size} times")

    def objective(logx: np.ndarray) -> float:
        spec = KernelSpec(
            family=family,
            amplitude=10.0 ** logx[0],
            length_scale=10.0 ** logx[1],
            noise_floor=10.0 ** logx[2],
        )
        try:
            val = nlml(times, values, spec, mean_model)
        except SingularPrior:
            return math.inf
        return val if math.isfinite(val) else math.inf

    amp_grid, len_grid, noise_grid, lo, hi = _search_box(times, values, mean_model)
    scored = []
    for la in amp_grid:
        for ll in len_grid:
            for ln in noise_grid:
                x = np.array([la, ll, ln])
                fv = objective(x)
                if math.isfinite(fv):
                    scored.append((fv, ll, la, x))
    if not scored:
        raise FitFailed("no grid start produced a positive-definite kernel matrix")

    scored.sort(key=lambda item: (item[0], item[1], item[2]))
    candidates = []
    for fv, _, _, x in scored[:_REFINE_TOP]:
        xr, fr = _coordinate_refine(objective, x, lo, hi)
        candidates.append((fr, 10.0 ** xr[1], 10.0 ** xr[0], xr))
    candidates.sort(key=lambda item: (item[0], item[1], item[2]))
    best = candidates[0][3]
    return KernelSpec(
        family=family,
        amplitude=10.0 ** best[0],
        length_scale=10.0 ** best[1],
        noise_floor=10.0 ** best[2],
    )


def baseline_forecast(
    times: np.ndarray,
    values: np.ndarray,
    kernel: KernelSpec,
    target_times: np.ndarray,
    mean_model: MeanModel = MeanModel.CONSTANT_FITTED,
    target_idx: IndexSet | None = None,
) -> ForecastResult:
    """Kriging forecast of one variable from its own history.

    Prior blocks come from the kernel (noise_floor only on the observed
    diagonal); the mean is the fitted constant (or zero).  The conditioning
    algebra is shared with `condition`.
    """
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    target_times = np.asarray(target_times, float)
    if times.size != values.size:
        raise DimensionMismatch(f"{values.size} values for {times.size} times")
    _, mu = _centered(values, mean_model)
    k_oo = kernel.matrix(times, times)
    if kernel.noise_floor:
        k_oo = k_oo + kernel.noise_floor * np.eye(times.size)
    k_of = kernel.matrix(times, target_times)
    k_ff = kernel.matrix(target_times, target_times)
    mean, cov, nugget = _condition_blocks(
        np.full(times.size, mu),
        np.full(target_times.size, mu),
        k_oo,
        k_of,
        k_ff,
        values,
    )
    prior_scale = float(np.max(np.diag(k_ff))) if k_ff.size else kernel.amplitude
    return ForecastResult(
        target_idx=target_idx,
        posterior_mean=mean,
        posterior_cov=cov,
        posterior_std=_posterior_std(cov, prior_scale),
        nugget_used=nugget,
    )
