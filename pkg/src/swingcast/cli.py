"""Command-line front end.

Verbs:
  simulate   one trajectory -> CSV
  ensemble   Monte Carlo ensemble -> binary container + mean/std summary CSV
  forecast   run the configured case study -> forecast CSV, metrics JSON,
             per-variable plot-data CSVs
  compare    physics-informed vs data-driven baseline on the Case 1 layout

Configuration is an INI file with sections [grid], [ou], [sim], [ensemble],
[scenario], [baseline], [output]; every key has a default matching the
reference setup, so a bare run reproduces it.  Flags --output, --seed,
--stride and --case override the file.  Every output CSV gets a
`<name>.meta.json` sidecar carrying the full configuration echo; the
ensemble container embeds its own. Exit codes: 0 ok, 2 configuration,
3 simulation divergence, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .ensemble import (
    Ensemble,
    MomentView,
    Variable,
    load_ensemble,
    run_ensemble,
    save_ensemble,
)
from .errors import ConfigError, FitFailed, IntegrationDiverged, SingularPrior
from .gpr import KernelFamily, KernelSpec
from .scenarios import (
    CaseId,
    CaseRun,
    ComparisonRun,
    ScenarioSpec,
    run_baseline_comparison,
    run_case1,
    run_case2,
    run_case3,
)
from .sde import GridParams, OuParams, SimConfig, simulate_trajectory

__all__ = ["RunConfig", "load_run_config", "main"]


@dataclass
class RunConfig:
    grid: GridParams
    ou: OuParams
    sim: SimConfig
    ensemble_n: int
    workers: int
    ensemble_path: str | None
    scenario: ScenarioSpec
    kernel_family: KernelFamily
    kernel: KernelSpec | None
    output_dir: Path

    def echo(self) -> dict:
        """Full configuration as a JSON-ready dict (reproducibility record)."""
        return {
            "grid": asdict(self.grid),
            "ou": asdict(self.ou),
            "sim": asdict(self.sim),
            "ensemble": {
                "n_realizations": self.ensemble_n,
                "workers": self.workers,
                "path": self.ensemble_path,
            },
            "scenario": {
                "case": self.scenario.case_id.value,
                "cutoff_time": self.scenario.cutoff_time,
                "horizon_end": self.scenario.horizon_end,
                "obs_stride": self.scenario.obs_stride,
                "truth_seed": self.scenario.seed,
                "truth_realization": self.scenario.truth_realization,
                "extra_obs_count": self.scenario.extra_obs_count,
            },
            "baseline": {
                "family": self.kernel_family.value,
                "kernel": None if self.kernel is None else {
                    "family": self.kernel.family.value,
                    "amplitude": self.kernel.amplitude,
                    "length_scale": self.kernel.length_scale,
                    "noise_floor": self.kernel.noise_floor,
                },
            },
        }


_DEFAULTS = {
    "grid": {
        "p_max": "2.1",
        "h_inertia": "5.0",
        "damping": "5.0",
        "p_m_mean": "0.9",
        "omega_b": str(120.0 * np.pi),
        "omega_s": "1.0",
    },
    "ou": {"sigma": "0.1", "corr_time": "0.026"},
    "sim": {
        "dt": "0.0025",
        "t_end": "25.0",
        "seed": "1",
        "init_theta": "0.45",
        "init_omega": "1.0",
        "init_pm": "stationary",
    },
    "ensemble": {"n_realizations": "1000", "workers": "1", "path": ""},
    "scenario": {
        "case": "case1",
        "cutoff_time": "8.3375",
        "horizon_end": "12.5",
        "obs_stride": "5",
        "truth_seed": "777",
        "truth_realization": "0",
        "extra_obs_count": "333",
    },
    "baseline": {
        "family": "exponential",
        "amplitude": "",
        "length_scale": "",
        "noise_floor": "",
    },
    "output": {"dir": "out"},
}


def _parse_value(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}", f"cannot parse {raw!r}") from None


def _read_config_file(path: str) -> dict:
    """Merge an INI file over the defaults; unknown entries are errors."""
    values = {s: dict(kv) for s, kv in _DEFAULTS.items()}
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError("config", f"malformed file: {exc}") from None
    for section in parser.sections():
        if section not in values:
            raise ConfigError(section, "unknown section")
        for key, raw in parser.items(section):
            if key not in values[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
            values[section][key] = raw
    return values


def load_run_config(
    config_path: str | None = None,
    output: str | None = None,
    seed: int | None = None,
    stride: int | None = None,
    case: str | None = None,
) -> RunConfig:
    """Build a RunConfig from defaults, an optional INI file and overrides."""
    values = (
        _read_config_file(config_path)
        if config_path is not None
        else {s: dict(kv) for s, kv in _DEFAULTS.items()}
    )

    def fval(section, key):
        return _parse_value(section, key, values[section][key], float)

    def ival(section, key):
        return _parse_value(section, key, values[section][key], int)

    try:
        grid = GridParams(
            p_max=fval("grid", "p_max"),
            h_inertia=fval("grid", "h_inertia"),
            damping=fval("grid", "damping"),
            p_m_mean=fval("grid", "p_m_mean"),
            omega_b=fval("grid", "omega_b"),
            omega_s=fval("grid", "omega_s"),
        )
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    try:
        ou = OuParams(sigma=fval("ou", "sigma"), corr_time=fval("ou", "corr_time"))
    except ValueError as exc:
        raise ConfigError("ou", str(exc)) from None

    raw_pm = values["sim"]["init_pm"].strip()
    if raw_pm == "stationary":
        init_pm = None
    elif raw_pm == "":
        raise ConfigError("sim.init_pm", "missing value ('stationary' or a number)")
    else:
        init_pm = _parse_value("sim", "init_pm", raw_pm, float)
    try:
        sim = SimConfig(
            dt=fval("sim", "dt"),
            t_end=fval("sim", "t_end"),
            seed=seed if seed is not None else ival("sim", "seed"),
            init_theta=fval("sim", "init_theta"),
            init_omega=fval("sim", "init_omega"),
            init_pm=init_pm,
        )
    except ValueError as exc:
        raise ConfigError("sim", str(exc)) from None

    case_raw = case if case is not None else values["scenario"]["case"]
    try:
        case_id = CaseId(case_raw)
    except ValueError:
        valid = ", ".join(c.value for c in CaseId)
        raise ConfigError("scenario.case", f"{case_raw!r} is not one of: {valid}") from None
    try:
        scenario = ScenarioSpec(
            case_id=case_id,
            cutoff_time=fval("scenario", "cutoff_time"),
            horizon_end=fval("scenario", "horizon_end"),
            obs_stride=stride if stride is not None else ival("scenario", "obs_stride"),
            seed=ival("scenario", "truth_seed"),
            truth_realization=ival("scenario", "truth_realization"),
            extra_obs_count=ival("scenario", "extra_obs_count"),
        )
    except ValueError as exc:
        raise ConfigError("scenario", str(exc)) from None

    family_raw = values["baseline"]["family"]
    try:
        family = KernelFamily(family_raw)
    except ValueError:
        valid = ", ".join(f.value for f in KernelFamily)
        raise ConfigError(
            "baseline.family", f"{family_raw!r} is not one of: {valid}"
        ) from None
    kernel_raws = {
        k: values["baseline"][k].strip()
        for k in ("amplitude", "length_scale", "noise_floor")
    }
    given = [k for k, v in kernel_raws.items() if v]
    if not given:
        kernel = None
    elif len(given) < 3:
        missing = sorted(set(kernel_raws) - set(given))[0]
        raise ConfigError(
            f"baseline.{missing}",
            "a pinned kernel needs amplitude, length_scale and noise_floor",
        )
    else:
        try:
            kernel = KernelSpec(
                family=family,
                amplitude=_parse_value("baseline", "amplitude", kernel_raws["amplitude"], float),
                length_scale=_parse_value(
                    "baseline", "length_scale", kernel_raws["length_scale"], float
                ),
                noise_floor=_parse_value(
                    "baseline", "noise_floor", kernel_raws["noise_floor"], float
                ),
            )
        except ValueError as exc:
            raise ConfigError("baseline", str(exc)) from None

    n = ival("ensemble", "n_realizations")
    workers = ival("ensemble", "workers")
    if n < 2:
        raise ConfigError("ensemble.n_realizations", f"must be >= 2, got {n}")
    if workers < 1:
        raise ConfigError("ensemble.workers", f"must be >= 1, got {workers}")
    path_raw = values["ensemble"]["path"].strip()

    out_dir = Path(output if output is not None else values["output"]["dir"])
    return RunConfig(
        grid=grid,
        ou=ou,
        sim=sim,
        ensemble_n=n,
        workers=workers,
        ensemble_path=path_raw or None,
        scenario=scenario,
        kernel_family=family,
        kernel=kernel,
        output_dir=out_dir,
    )


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _write_json(path: Path, obj: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_sidecar(csv_path: Path, config: RunConfig, extra: dict | None = None) -> None:
    meta = {"config": config.echo()}
    if extra:
        meta.update(extra)
    _write_json(csv_path.with_suffix(csv_path.suffix + ".meta.json"), meta)


def _ensure_outdir(config: RunConfig) -> Path:
    try:
        config.output_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError("output.dir", f"cannot create {config.output_dir}: {exc}") from None
    return config.output_dir


def cmd_simulate(config: RunConfig) -> int:
    """Write one trajectory as time,theta,omega,pm_prime CSV."""
    out = _ensure_outdir(config)
    traj = simulate_trajectory(config.grid, config.ou, config.sim)
    path = out / "trajectory.csv"
    rows = (
        (_fmt(t), _fmt(row[0]), _fmt(row[1]), _fmt(row[2]))
        for t, row in zip(traj.times, traj.data)
    )
    _write_csv(path, ["time_s", "theta", "omega", "pm_prime"], rows)
    _write_sidecar(path, config, {"seed_used": traj.seed_used})
    return 0


def _obtain_ensemble(config: RunConfig, out: Path, persist: bool = True) -> Ensemble:
    """Load the configured container when present, else simulate (and save)."""
    if config.ensemble_path:
        path = Path(config.ensemble_path)
        if path.exists():
            return load_ensemble(path)
    ens = run_ensemble(
        config.grid, config.ou, config.sim, config.ensemble_n, workers=config.workers
    )
    if persist:
        target = Path(config.ensemble_path) if config.ensemble_path else out / "ensemble.ens"
        save_ensemble(ens, target)
    return ens


def cmd_ensemble(config: RunConfig) -> int:
    """Run the ensemble; write the container and a mean/std summary CSV."""
    out = _ensure_outdir(config)
    ens = run_ensemble(
        config.grid, config.ou, config.sim, config.ensemble_n, workers=config.workers
    )
    save_ensemble(ens, Path(config.ensemble_path) if config.ensemble_path else out / "ensemble.ens")
    means = ens.data.mean(axis=0)
    stds = ens.data.std(axis=0, ddof=1)
    header = ["time_s"]
    for var in Variable:
        header += [f"mean_{var.label}", f"std_{var.label}"]
    rows = []
    for k, t in enumerate(ens.times):
        row = [_fmt(t)]
        for var in Variable:
            row += [_fmt(means[k, int(var)]), _fmt(stds[k, int(var)])]
        rows.append(tuple(row))
    path = out / "ensemble_summary.csv"
    _write_csv(path, header, rows)
    _write_sidecar(path, config, {"master_seed": ens.master_seed})
    return 0


def _forecast_rows(case_run: CaseRun):
    for var, fc in case_run.forecasts.items():
        times = case_run.target_times[var]
        for t, m, s in zip(times, fc.posterior_mean, fc.posterior_std):
            observed = t <= case_run.spec.cutoff_time + 1e-12
            yield (
                var.label,
                _fmt(t),
                _fmt(m),
                _fmt(s),
                "true" if observed else "false",
            )


def _write_plotdata(
    out: Path, stem: str, var: Variable, times, truth_vals, mean, std, config: RunConfig
) -> None:
    rows = (
        (_fmt(t), _fmt(tv), _fmt(m), _fmt(m - 2.0 * s), _fmt(m + 2.0 * s))
        for t, tv, m, s in zip(times, truth_vals, mean, std)
    )
    path = out / f"{stem}_{var.label}.csv"
    _write_csv(path, ["time_s", "truth", "mean", "lower_2sigma", "upper_2sigma"], rows)
    _write_sidecar(path, config)


_CASE_RUNNERS = {
    CaseId.CASE1: run_case1,
    CaseId.CASE2: run_case2,
    CaseId.CASE3: run_case3,
    CaseId.CASE3_EXTRA: run_case3,
}


def cmd_forecast(config: RunConfig) -> int:
    """Run the configured case; write forecast CSV, metrics and plot data."""
    out = _ensure_outdir(config)
    ens = _obtain_ensemble(config, out)
    case_run = _CASE_RUNNERS[config.scenario.case_id](config.scenario, ens)
    case = config.scenario.case_id.value

    fc_path = out / f"forecast_{case}.csv"
    _write_csv(
        fc_path,
        ["variable", "time_s", "posterior_mean", "posterior_std", "is_observed_period"],
        _forecast_rows(case_run),
    )
    _write_sidecar(
        fc_path,
        config,
        {
            "nugget_used": case_run.nugget_used,
            "stride": config.scenario.obs_stride,
            "master_seed": ens.master_seed,
            "truth_seed": config.scenario.seed,
        },
    )
    _write_json(
        out / f"metrics_{case}.json",
        {
            "case": case,
            "metrics": case_run.report.to_jsonable(),
            "nugget_used": case_run.nugget_used,
            "config": config.echo(),
        },
    )
    for var, fc in case_run.forecasts.items():
        times = case_run.target_times[var]
        ks = fc.target_idx.time_indices
        _write_plotdata(
            out,
            f"plotdata_{case}",
            var,
            times,
            case_run.truth.data[ks, int(var)],
            fc.posterior_mean,
            fc.posterior_std,
            config,
        )
    return 0


def cmd_compare(config: RunConfig) -> int:
    """Physics-informed vs data-driven comparison on the Case 1 layout."""
    out = _ensure_outdir(config)
    scenario = config.scenario
    if scenario.case_id is not CaseId.CASE1:
        scenario = replace(scenario, case_id=CaseId.CASE1)
    ens = _obtain_ensemble(config, out)
    comparison = run_baseline_comparison(
        scenario, ens, family=config.kernel_family, kernel=config.kernel
    )
    physics, baseline = comparison.physics, comparison.baseline

    fc_path = out / "forecast_case1_physics.csv"
    _write_csv(
        fc_path,
        ["variable", "time_s", "posterior_mean", "posterior_std", "is_observed_period"],
        _forecast_rows(physics),
    )
    _write_sidecar(fc_path, config, {"nugget_used": physics.nugget_used})

    base_path = out / "forecast_case1_baseline.csv"
    rows = []
    for var, fc in baseline.forecasts.items():
        for t, m, s in zip(baseline.target_times[var], fc.posterior_mean, fc.posterior_std):
            rows.append((var.label, _fmt(t), _fmt(m), _fmt(s), "false"))
    _write_csv(
        base_path,
        ["variable", "time_s", "posterior_mean", "posterior_std", "is_observed_period"],
        rows,
    )
    kernels_echo = {
        var.label: {
            "family": k.family.value,
            "amplitude": k.amplitude,
            "length_scale": k.length_scale,
            "noise_floor": k.noise_floor,
        }
        for var, k in baseline.kernels.items()
    }
    _write_sidecar(base_path, config, {"kernels": kernels_echo})

    _write_json(
        out / "metrics_compare.json",
        {
            "case": "case1",
            "physics": physics.report.to_jsonable(),
            "baseline": baseline.report.to_jsonable(),
            "baseline_kernels": kernels_echo,
            "nugget_used": physics.nugget_used,
            "config": config.echo(),
        },
    )
    for var in (Variable.THETA, Variable.OMEGA):
        fc = physics.forecasts[var]
        ks = fc.target_idx.time_indices
        truth_vals = physics.truth.data[ks, int(var)]
        _write_plotdata(
            out, "plotdata_compare_physics", var,
            physics.target_times[var], truth_vals,
            fc.posterior_mean, fc.posterior_std, config,
        )
        bfc = baseline.forecasts[var]
        _write_plotdata(
            out, "plotdata_compare_baseline", var,
            baseline.target_times[var], truth_vals,
            bfc.posterior_mean, bfc.posterior_std, config,
        )
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "forecast": cmd_forecast,
    "compare": cmd_compare,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swingcast",
        description="Physics-informed GP forecasting of swing-equation dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--output", help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, help="override [sim] seed")
        p.add_argument("--stride", type=int, help="override [scenario] obs_stride")
        p.add_argument(
            "--case",
            choices=[c.value for c in CaseId],
            help="override [scenario] case",
        )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_run_config(
            config_path=args.config,
            output=args.output,
            seed=args.seed,
            stride=args.stride,
            case=args.case,
        )
        return _COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2
    except IntegrationDiverged as exc:
        print(f"error: simulation: {exc}", file=sys.stderr)
        return 3
    except (SingularPrior, FitFailed, np.linalg.LinAlgError) as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
