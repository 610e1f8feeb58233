"""Stochastic swing-equation model of a single generator on an infinite bus.

State variables are the rotor phase angle theta (rad), the per-unit angular
speed omega, and the zero-mean wind mechanical-power fluctuation z = P'_m:

    d(theta)/dt = omega_b * (omega - omega_s)
    d(omega)/dt = (omega_s / 2H) * [<P_m> + z - P_max*sin(theta) - D*(omega - omega_s)]
    dz          = -(1/corr_time) * z dt + sigma*sqrt(2/corr_time) dW

The fluctuation z is a stationary mean-reverting (Ornstein-Uhlenbeck) process
with stationary variance sigma**2 and autocovariance
sigma**2 * exp(-|dt|/corr_time).

Integration uses a two-stage second-order stochastic Runge-Kutta step: a
Heun (strong-stability-preserving) predictor-corrector on the drift plus
h**(3/2) correction terms, coefficient 1/sqrt(12), driven by two independent
standard-normal draws (xi, eta) per step.  With sigma = 0 and z = 0 the step
reduces exactly to the classical Heun method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IntegrationDiverged, NoEquilibrium

__all__ = [
    "GridParams",
    "OuParams",
    "SimConfig",
    "StateVec",
    "Trajectory",
    "drift_f",
    "noise_coupling_g",
    "rk2_step",
    "equilibrium_angle",
    "simulate_trajectory",
    "realization_stream",
    "integrate_lanes",
]

_SQRT12 = math.sqrt(12.0)


@dataclass(frozen=True)
class GridParams:
    """Physical constants of the generator / infinite-bus system.

    Defaults are the reference operating point used throughout:
    P_max = 2.1 p.u., H = 5 s, D = 5 p.u., <P_m> = 0.9 p.u.,
    omega_b = 120*pi rad/s, omega_s = 1 p.u.
    """

    p_max: float = 2.1
    h_inertia: float = 5.0
    damping: float = 5.0
    p_m_mean: float = 0.9
    omega_b: float = 120.0 * math.pi
    omega_s: float = 1.0

    def __post_init__(self):
        if not self.p_max > 0:
            raise ValueError(f"p_max must be > 0, got {self.p_max}")
        if not self.h_inertia > 0:
            raise ValueError(f"h_inertia must be > 0, got {self.h_inertia}")
        if self.damping < 0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")
        if not self.omega_b > 0:
            raise ValueError(f"omega_b must be > 0, got {self.omega_b}")
        if not self.omega_s > 0:
            raise ValueError(f"omega_s must be > 0, got {self.omega_s}")
        if not 0 <= self.p_m_mean < self.p_max:
            raise ValueError(
                f"p_m_mean must lie in [0, p_max), got {self.p_m_mean} "
                f"with p_max={self.p_max}"
            )


@dataclass(frozen=True)
class OuParams:
    """Wind-fluctuation process: stationary std `sigma`, correlation time
    `corr_time` (seconds, the e-folding time of the autocovariance)."""

    sigma: float = 0.1
    corr_time: float = 0.026

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.corr_time > 0:
            raise ValueError(f"corr_time must be > 0, got {self.corr_time}")

    @property
    def reversion_rate(self) -> float:
        """Drift coefficient a = 1/corr_time."""
        return 1.0 / self.corr_time

    @property
    def noise_scale(self) -> float:
        """Diffusion coefficient b = sigma*sqrt(2/corr_time)."""
        return self.sigma * math.sqrt(2.0 / self.corr_time)


@dataclass(frozen=True)
class SimConfig:
    """Time grid, seed and initial conditions for one simulation.

    `init_pm` is the initial wind fluctuation: None draws it from the
    stationary law N(0, sigma**2); a number fixes it.
    """

    dt: float = 0.0025
    t_end: float = 25.0
    seed: int = 1
    init_theta: float = 0.45
    init_omega: float = 1.0
    init_pm: float | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.t_end < self.dt:
            raise ValueError(f"t_end must be >= dt, got {self.t_end}")
        if self.n_steps < 1:
            raise ValueError("number of steps must be >= 1")

    @property
    def n_steps(self) -> int:
        """Number of integration steps K; the grid has K+1 points."""
        return int(round(self.t_end / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class StateVec:
    """One state: phase angle (rad), per-unit speed, wind fluctuation."""

    theta: float
    omega: float
    pm_prime: float


@dataclass(frozen=True)
class Trajectory:
    """A single realization on a uniform time grid.

    `data` has shape (K+1, 3) with columns (theta, omega, pm_prime).
    """

    times: np.ndarray
    data: np.ndarray
    seed_used: int = field(default=0)

    def __post_init__(self):
        if self.data.shape != (len(self.times), 3):
            raise ValueError(
                f"data shape {self.data.shape} inconsistent with "
                f"{len(self.times)} time points"
            )

    def __len__(self) -> int:
        return len(self.times)

    @property
    def theta(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def omega(self) -> np.ndarray:
        return self.data[:, 1]

    @property
    def pm_prime(self) -> np.ndarray:
        return self.data[:, 2]

    def state(self, k: int) -> StateVec:
        return StateVec(*self.data[k])


def equilibrium_angle(params: GridParams) -> float:
    """Steady-state phase angle: arcsin(p_m_mean / p_max).

    Raises NoEquilibrium when p_m_mean >= p_max (no angle balances the
    electric power against the mean mechanical power).
    """
    if params.p_m_mean >= params.p_max:
        raise NoEquilibrium(
            f"p_m_mean={params.p_m_mean} >= p_max={params.p_max}: "
            "no steady-state angle exists"
        )
    return math.asin(params.p_m_mean / params.p_max)


def drift_f(state: StateVec, params: GridParams) -> np.ndarray:
    """Deterministic drift of (theta, omega) at the mean mechanical power.

    Returns [omega_b*(omega - omega_s),
             (omega_s/2H)*(p_m_mean - p_max*sin(theta) - D*(omega - omega_s))].
    """
    dtheta = params.omega_b * (state.omega - params.omega_s)
    domega = (params.omega_s / (2.0 * params.h_inertia)) * (
        params.p_m_mean
        - params.p_max * np.sin(state.theta)
        - params.damping * (state.omega - params.omega_s)
    )
    return np.array([dtheta, domega])


def noise_coupling_g(params: GridParams) -> np.ndarray:
    """Coupling of the wind fluctuation into (theta, omega): [0, omega_s/2H].

    The fluctuation z enters only the speed equation, with the same
    coefficient as the mean mechanical power.
    """
    return np.array([0.0, params.omega_s / (2.0 * params.h_inertia)])


def rk2_step(
    state: StateVec,
    params: GridParams,
    ou: OuParams,
    dt: float,
    xi: float,
    eta: float,
) -> StateVec:
    """Advance one step of the two-stage stochastic Runge-Kutta scheme.

    `xi` and `eta` are independent standard-normal draws supplied by the
    caller.  Raises IntegrationDiverged if any output component is
    non-finite.
    """
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    th, om, z = _step_arrays(
        params,
        ou,
        dt,
        np.float64(state.theta),
        np.float64(state.omega),
        np.float64(state.pm_prime),
        np.float64(xi),
        np.float64(eta),
    )
    if not (np.isfinite(th) and np.isfinite(om) and np.isfinite(z)):
        raise IntegrationDiverged(step=0)
    return StateVec(float(th), float(om), float(z))


def _step_arrays(params, ou, dt, theta, omega, z, xi, eta):
    """One scheme step on (scalar or lane-vector) state arrays.

    Shared by the scalar step and the vectorized integrator so both follow
    the identical sequence of floating-point operations.
    """
    ws = params.omega_s
    wb = params.omega_b
    g = ws / (2.0 * params.h_inertia)
    a = ou.reversion_rate
    b = ou.noise_scale
    sqrt_h = math.sqrt(dt)
    corr = dt * sqrt_h / _SQRT12  # h^(3/2) / sqrt(12)

    f_th = wb * (omega - ws)
    f_om = g * (params.p_m_mean - params.p_max * np.sin(theta) - params.damping * (omega - ws))

    # predictor (Heun stage on drift + noise coupling; mean-reverting z drift)
    th_p = theta + f_th * dt
    om_p = omega + (f_om + g * z) * dt
    z_p = z + b * xi * sqrt_h - a * z * dt

    f_th_p = wb * (om_p - ws)
    f_om_p = g * (params.p_m_mean - params.p_max * np.sin(th_p) - params.damping * (om_p - ws))

    theta_n = theta + 0.5 * dt * (f_th + f_th_p)
    omega_n = omega + 0.5 * dt * ((f_om + g * z) + (f_om_p + g * z_p)) + g * b * corr * eta
    z_n = z + b * xi * sqrt_h - 0.5 * dt * a * (z + z_p) - a * b * corr * eta
    return theta_n, omega_n, z_n


def integrate_lanes(
    params: GridParams,
    ou: OuParams,
    dt: float,
    theta0: np.ndarray,
    omega0: np.ndarray,
    z0: np.ndarray,
    noise: np.ndarray,
) -> np.ndarray:
    """Integrate `n` independent realizations ("lanes") in lockstep.

    Parameters
    ----------
    theta0, omega0, z0 : (n,) arrays
        Initial state per lane.
    noise : (K, 2, n) array
        Standard-normal driving noise; noise[k, 0] is xi_k, noise[k, 1]
        is eta_k across lanes.

    Returns
    -------
    (n, K+1, 3) array with variable order (theta, omega, pm_prime).

    Every lane evolves independently through elementwise arithmetic, so the
    result for lane i does not depend on which other lanes share the call.
    Raises IntegrationDiverged (with step and lane index) on the first
    non-finite state.
    """
    n_steps = noise.shape[0]
    n = theta0.shape[0]
    if noise.shape != (n_steps, 2, n):
        raise ValueError(f"noise shape {noise.shape} != ({n_steps}, 2, {n})")

    work = np.empty((n_steps + 1, 3, n))
    theta = np.asarray(theta0, dtype=float).copy()
    omega = np.asarray(omega0, dtype=float).copy()
    z = np.asarray(z0, dtype=float).copy()
    work[0, 0] = theta
    work[0, 1] = omega
    work[0, 2] = z

    for k in range(n_steps):
        theta, omega, z = _step_arrays(
            params, ou, dt, theta, omega, z, noise[k, 0], noise[k, 1]
        )
        probe = theta + omega + z  # non-finite in any component poisons the sum
        if not np.all(np.isfinite(probe)):
            bad = np.flatnonzero(~np.isfinite(probe))
            raise IntegrationDiverged(step=k + 1, realization=int(bad[0]))
        work[k + 1, 0] = theta
        work[k + 1, 1] = omega
        work[k + 1, 2] = z

    return np.ascontiguousarray(work.transpose(2, 0, 1))


def realization_stream(master_seed: int, index: int) -> np.random.Generator:
    """Counter-based RNG stream for one realization.

    Streams are derived from (master_seed, index) alone, so realization i
    draws the same noise no matter how many realizations run or in what
    order.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def draw_initial_pm(ou: OuParams, cfg: SimConfig, rng: np.random.Generator) -> float:
    """Initial wind fluctuation: stationary draw unless fixed by config.

    When sampling, exactly one standard-normal draw is consumed, before any
    step noise.
    """
    if cfg.init_pm is not None:
        return float(cfg.init_pm)
    return float(ou.sigma * rng.standard_normal())


def simulate_trajectory(
    params: GridParams,
    ou: OuParams,
    cfg: SimConfig,
    rng: np.random.Generator | None = None,
    seed_used: int | None = None,
) -> Trajectory:
    """Simulate one realization on the grid defined by `cfg`.

    `rng` defaults to the stream for (cfg.seed, realization 0).  The stream
    is consumed in a fixed order: the initial fluctuation draw (when
    sampled), then the (K, 2) step-noise table.
    """
    if rng is None:
        rng = realization_stream(cfg.seed, 0)
        seed_used = cfg.seed
    z0 = draw_initial_pm(ou, cfg, rng)
    n_steps = cfg.n_steps
    noise = rng.standard_normal((n_steps, 2, 1))
    try:
        data = integrate_lanes(
            params,
            ou,
            cfg.dt,
            np.array([cfg.init_theta]),
            np.array([cfg.init_omega]),
            np.array([z0]),
            noise,
        )
    except IntegrationDiverged as exc:
        raise IntegrationDiverged(step=exc.step) from None
    return Trajectory(
        times=cfg.times(),
        data=data[0],
        seed_used=cfg.seed if seed_used is None else seed_used,
    )
