import json
import logging
import functools
from pathlib import Path
from typing import Any, Dict, Optional

import click
from pydantic import ValidationError

from oscfb.data.constants import PARAM_NAMES, SLICE_NAMES
from oscfb.data.schemas import (
    Baseline,
    CovMatrix,
    MeanPair,
    ModelParams,
    PhysicalScenario,
    Scheme,
    Side,
    SimConfig,
    SweepSpec,
    VarianceMode,
)
from oscfb.physics.analytic import (
    classify,
    classify_delay,
    convergence_time,
    rate_vars,
    steady_variances,
    zero_mean_conditions,
)
from oscfb.physics.core import bec_measurement_strength, build_params, feedback_phase_lag_deg, scenario_params
from oscfb.simulation.sde import plateau_energy, simulate_means
from oscfb.simulation.sweep import SweepRunner
from oscfb.utils import format_human, get_current_time
from oscfb.utils.config import settings
from oscfb.utils.exceptions import BoundarySearchError, NoTransitionError, OscfbError, PositivityLostError
from oscfb.utils.logger import logger as package_logger
from oscfb.utils.output import write_json, write_manifest, write_series_csv, write_sweep_csv


logger = logging.getLogger(__name__)

EXIT_STABLE = 0
EXIT_UNSTABLE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

# Initial conditions of the scenario runs: identical for system and filter
SCENARIO_X0 = MeanPair(x_pi=2.0, p_pi=1.0, x_rho=2.0, p_rho=1.0)
SCENARIO_V0 = CovMatrix(v_xx=2.0, v_xp=0.25, v_pp=1.0)


class ConfigError(click.ClickException):
    exit_code = EXIT_CONFIG


def config_errors(func):
    """
    Map invalid parameters and malformed files to exit code 2.
    """
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ValidationError as e:
            logger.debug("Configuration rejected", exc_info=True)
            raise ConfigError(_validation_message(e)) from e
        except (ValueError, OSError, PositivityLostError) as e:
            logger.debug("Configuration rejected", exc_info=True)
            raise ConfigError(str(e)) from e
    return wrapper


def _validation_message(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err["loc"])
    message = err["msg"].removeprefix("Value error, ")
    return f"{where}: {message}" if where else message


def load_config(path: Optional[Path]) -> Dict[str, Any]:
    """
    Read a JSON config file. A run manifest is accepted too, its echoed
    configuration is used.
    """
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: malformed JSON ({e.msg})") from e
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a JSON object")
    if "command" in data and isinstance(data.get("config"), dict):
        data = data["config"]
    return data


def resolve_params(config: Dict[str, Any], flags: Dict[str, Optional[float]]) -> ModelParams:
    """
    Defaults < config file < command-line flags.
    """
    values = dict(config.get("params", {}))
    given = {name: v for name, v in flags.items() if v is not None}
    for short, names in SLICE_NAMES.items():
        if short in given:
            for name in names:
                values.pop(name, None)
    values.update(given)
    unknown = sorted(set(values) - set(PARAM_NAMES) - set(SLICE_NAMES))
    if unknown:
        raise ValueError(f"unknown parameter(s): {', '.join(unknown)}")
    return build_params(values)


def param_options(func):
    """
    Model parameter flags shared by report and simulate.
    """
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
                     help="JSON config file (or a run manifest)"),
        click.option("--alpha", type=float, help="Measurement strength of system and filter"),
        click.option("--eta", type=float, help="Detector efficiency of system and filter"),
        click.option("--alpha-s", type=float, help="System measurement strength"),
        click.option("--eta-s", type=float, help="System detector efficiency"),
        click.option("--alpha-f", type=float, help="Filter measurement strength"),
        click.option("--eta-f", type=float, help="Filter detector efficiency"),
        click.option("--d-omega-f", type=float, help="Fractional trap-frequency mismatch of the filter"),
        click.option("--nu", type=float, help="Classical noise strength"),
        click.option("--tau", type=float, help="Control delay"),
        click.option("--k", type=float, help="Feedback strength (default: k_opt of the filter)"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _pop_param_flags(kwargs: Dict[str, Any]) -> Dict[str, Optional[float]]:
    return {name: kwargs.pop(name) for name in (*SLICE_NAMES, *PARAM_NAMES)}


def _parse_floats(text: Optional[str], n: int, name: str):
    if text is None:
        return None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise ValueError(f"{name}: expected {n} comma-separated numbers") from e
    if len(values) != n:
        raise ValueError(f"{name}: expected {n} comma-separated numbers")
    return values


@click.group()
@click.version_option(settings.VERSION, prog_name=settings.PROJECT_NAME)
@click.option("--log-level", type=click.Choice(["debug", "info", "warning", "error"]), default=None,
              help="Override LOG_LEVEL for this run")
def cli(log_level: Optional[str]):
    """Feedback cooling of a measured oscillator with a separated filter."""
    if log_level:
        level = getattr(logging, log_level.upper())
        for handler in package_logger.handlers:
            handler.setLevel(level)
        package_logger.setLevel(level)


@cli.command()
@param_options
@click.option("--baseline", type=click.Choice([b.value for b in Baseline]), default=None,
              help="Whose parameters define E_inf^0 and r0")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output")
@click.option("--output", type=click.Path(dir_okay=False, path_type=Path), help="Also write the report JSON here")
@config_errors
def report(config_path, baseline, as_json, output, **kwargs):
    """Stability, steady-state energy and convergence rate at one point."""
    started = get_current_time()
    config = load_config(config_path)
    params = resolve_params(config, _pop_param_flags(kwargs))
    baseline = Baseline(baseline or config.get("baseline") or settings.BASELINE)
    logger.info(f"Report for {params}")

    result = classify(params, baseline=baseline)
    sv = steady_variances(params)
    zero_mean = zero_mean_conditions(params, sv)
    payload = {
        "params": params.model_dump(),
        "report": result.model_dump(mode="json"),
        "zero_mean": zero_mean.model_dump(),
        "steady_variances": sv.model_dump(),
        "rate_vars": {side.value: rate_vars(params, side) for side in Side},
        "convergence_time": convergence_time(result.rate_r) if result.stable else None,
        "phase_lag_deg": feedback_phase_lag_deg(params.tau),
        "full_delay": classify_delay(params, baseline=baseline).model_dump(mode="json") if params.tau > 0 else None,
    }

    if as_json:
        click.echo(json.dumps(payload, indent=2))
    else:
        click.echo(_report_table(payload))

    if output:
        output = Path(output)
        output.parent.mkdir(parents=True, exist_ok=True)
        output.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        logger.info(f"Wrote {output}")
        resolved = {"params": params.model_dump(), "baseline": baseline.value}
        write_manifest(output, "report", resolved, started, method="analytic")

    ctx = click.get_current_context()
    ctx.exit(EXIT_STABLE if result.stable else EXIT_UNSTABLE)


def _report_table(payload: Dict[str, Any]) -> str:
    r = payload["report"]
    z = payload["zero_mean"]
    rows = [
        ("status", r["status"]),
        ("max Re lambda", format_human(r["max_re_lambda"])),
        ("E_inf_rho", format_human(r["e_inf_rho"])),
        ("E_inf_0", format_human(r["e_inf_0"])),
        ("E_inf_rho / E_inf_0", format_human(r["energy_ratio"])),
        ("r", format_human(r["rate_r"])),
        ("r0", format_human(r["r0"])),
        ("r0 / r", format_human(r["rate_ratio"])),
        ("rate_vars (filter)", format_human(payload["rate_vars"]["filter"])),
        ("rate_vars (system)", format_human(payload["rate_vars"]["system"])),
        ("det(M1)", format_human(z["det_m1"])),
        ("det(M4)", format_human(z["det_m4"])),
        ("k excluded", format_human(z["k_excluded"])),
        ("degenerate k", format_human(z["degenerate_k"])),
        ("baseline", r["baseline"]),
        ("delay model", r["delay_model"]),
    ]
    if payload["full_delay"]:
        rows.append(("status (exact delay)", payload["full_delay"]["status"]))
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


@cli.command()
@click.argument("spec_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory (default: OUTPUT_DIR)")
@click.option("--boundary", "resolution", type=float, default=None,
              help="Also bisect the stability transition of a 1-D sweep to this resolution")
@click.option("--workers", type=int, default=None, help="Worker threads (default: OSC_THREADS)")
@config_errors
def sweep(spec_file, out_dir, resolution, workers):
    """Evaluate a parameter grid described by a JSON spec file."""
    started = get_current_time()
    try:
        spec = SweepSpec.model_validate(load_config(spec_file))
    except ValidationError as e:
        raise ConfigError(f"{spec_file}: {_validation_message(e)}") from e
    if resolution is not None and len(spec.axes) != 1:
        raise ConfigError("--boundary needs a spec with exactly one axis")

    out_dir = Path(out_dir or settings.OUTPUT_DIR)
    runner = SweepRunner(spec, n_workers=workers)
    result = runner.run()

    csv_path = write_sweep_csv(result, out_dir / f"{spec_file.stem}.csv")
    json_path = write_json(result, out_dir / f"{spec_file.stem}.json")
    outputs = [csv_path, json_path]
    metadata: Dict[str, Any] = {"failed_points": sum(1 for p in result.points if p.error)}

    exit_code = EXIT_STABLE
    if resolution is not None:
        try:
            edge = runner.boundary(resolution, points=result.points)
            outputs.append(write_json(edge, out_dir / f"{spec_file.stem}.boundary.json"))
            metadata["boundary"] = edge.model_dump()
            click.echo(f"{edge.axis} boundary in [{format_human(edge.lower)}, {format_human(edge.upper)}]")
        except NoTransitionError as e:
            logger.warning(f"Boundary search on {spec.axes[0].name}: {e}")
            click.echo(str(e), err=True)
            exit_code = EXIT_UNSTABLE
        except BoundarySearchError as e:
            logger.error(f"Boundary search on {spec.axes[0].name} failed: {e}")
            click.echo(f"boundary search failed at {e}", err=True)
            metadata["boundary_error"] = str(e)
            exit_code = EXIT_CONFIG

    write_manifest(
        csv_path, "sweep", spec.model_dump(mode="json"), started,
        seed=spec.seed, method=spec.method.value, outputs=outputs, metadata=metadata,
    )
    click.echo(f"{len(result.points)} point(s) written to {csv_path}")
    click.get_current_context().exit(exit_code)


def sim_options(func):
    options = [
        click.option("--dt", type=float, default=None, help="Time step"),
        click.option("--t-final", type=float, default=None, help="Integration horizon"),
        click.option("--paths", type=int, default=None, help="Ensemble size"),
        click.option("--seed", type=int, default=None, help="Master seed"),
        click.option("--record-stride", type=int, default=None, help="Steps between recorded samples"),
        click.option("--variance-mode", type=click.Choice([m.value for m in VarianceMode]), default=None),
        click.option("--scheme", type=click.Choice([s.value for s in Scheme]), default=None),
        click.option("--workers", type=int, default=None, help="Worker threads (default: OSC_THREADS)"),
        click.option("--assert-stable", is_flag=True, help="Exit 3 if any path diverges"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def resolve_sim(config: Dict[str, Any], **flags) -> SimConfig:
    values = dict(config.get("sim", {}))
    renamed = {"paths": "n_paths", "workers": "n_workers"}
    values.update({renamed.get(k, k): v for k, v in flags.items() if v is not None})
    return SimConfig(**values)


@cli.command()
@param_options
@sim_options
@click.option("--x0", default=None, help="Initial means x_pi,p_pi,x_rho,p_rho (default zero)")
@click.option("--v0", default=None, help="Initial covariance v_xx,v_xp,v_pp for integrate mode")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Energy time-series CSV (default: OUTPUT_DIR/simulate.csv)")
@config_errors
def simulate(config_path, dt, t_final, paths, seed, record_stride, variance_mode, scheme, workers,
             assert_stable, x0, v0, out, **kwargs):
    """Ensemble simulation of the mean system energy."""
    started = get_current_time()
    config = load_config(config_path)
    params = resolve_params(config, _pop_param_flags(kwargs))
    sim = resolve_sim(
        config, dt=dt, t_final=t_final, paths=paths, seed=seed, record_stride=record_stride,
        variance_mode=variance_mode, scheme=scheme, workers=workers,
    )
    start = _initial_means(config, x0)
    cov0 = _initial_covariance(config, v0)

    stats = simulate_means(params, sim, start, v0=cov0)
    out = Path(out or settings.OUTPUT_DIR / "simulate.csv")
    write_series_csv(stats.times, stats.mean_energy, stats.std_error, out)

    analytic = classify(params)
    plateau, plateau_se = plateau_energy(stats)
    resolved = {
        "params": params.model_dump(),
        "sim": sim.model_dump(mode="json"),
        "x0": start.model_dump(),
        "v0": cov0.model_dump() if cov0 else None,
    }
    write_manifest(
        out, "simulate", resolved, started, seed=sim.seed, method="numeric",
        metadata={
            "e_inf_analytic": analytic.e_inf_rho,
            "e_inf_0": analytic.e_inf_0,
            "analytic_status": analytic.status.value,
            "plateau_energy": plateau,
            "plateau_std_error": plateau_se,
            **stats.summary(),
        },
    )
    click.echo(f"final mean energy {format_human(stats.final_energy)} (+/- {format_human(float(stats.std_error[-1]))})")

    if assert_stable and stats.diverged:
        click.echo(f"{stats.n_diverged} of {stats.n_paths} paths diverged", err=True)
        click.get_current_context().exit(EXIT_DIVERGED)


def _initial_means(config: Dict[str, Any], text: Optional[str]) -> MeanPair:
    values = _parse_floats(text, 4, "--x0")
    if values is not None:
        return MeanPair.from_array(values)
    return MeanPair(**(config.get("x0") or {}))


def _initial_covariance(config: Dict[str, Any], text: Optional[str]) -> Optional[CovMatrix]:
    values = _parse_floats(text, 3, "--v0")
    if values is not None:
        return CovMatrix(v_xx=values[0], v_xp=values[1], v_pp=values[2])
    if config.get("v0"):
        return CovMatrix(**config["v0"])
    return None


@cli.command()
@click.option("--n-atoms", type=float, default=None, help="Atom number")
@click.option("--wavelength", type=float, default=None, help="Probe wavelength (m)")
@click.option("--omega-s", type=float, default=None, help="Trap angular frequency (rad/s)")
@click.option("--g0", type=float, default=None, help="Cavity QED coupling (rad/s)")
@click.option("--kappa", type=float, default=None, help="Cavity linewidth (rad/s)")
@click.option("--detuning", type=float, default=None, help="Probe detuning (rad/s)")
@click.option("--nbar", type=float, default=None, help="Intracavity photon number")
@click.option("--alpha-s-source", type=click.Choice(["nominal", "physical"]), default="nominal",
              help="Use the nominal alpha_S = 0.1 or the value computed from the cavity parameters")
@click.option("--matched-filter", is_flag=True, help="Replace the separated filter by a copy of the system")
@click.option("--paths", type=int, default=100_000, show_default=True, help="Ensemble size (0 skips simulation)")
@click.option("--dt", type=float, default=0.01, show_default=True)
@click.option("--t-final", type=float, default=400.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--workers", type=int, default=None, help="Worker threads (default: OSC_THREADS)")
@click.option("--out-dir", type=click.Path(file_okay=False, path_type=Path), default=None,
              help="Output directory (default: OUTPUT_DIR)")
@click.option("--assert-stable", is_flag=True, help="Exit 3 if any path diverges")
@config_errors
def scenario(alpha_s_source, matched_filter, paths, dt, t_final, seed, workers, out_dir, assert_stable, **physical):
    """Cavity-probed BEC cooled through an imperfect filter, against the identical case."""
    started = get_current_time()
    bec = PhysicalScenario(**{k: v for k, v in physical.items() if v is not None})
    alpha_phys, x_ho = bec_measurement_strength(bec)
    if not alpha_phys > 0:
        raise ConfigError("alpha_s: measurement strength nonpositive")
    logger.info(f"Physical measurement strength alpha_S = {alpha_phys:.6g} (x_HO = {x_ho:.6g} m)")
    alpha_s = alpha_phys if alpha_s_source == "physical" else None

    cases = {
        "identical": scenario_params(identical=True, alpha_s=alpha_s),
        "separated": scenario_params(identical=matched_filter, alpha_s=alpha_s),
    }
    out_dir = Path(out_dir or settings.OUTPUT_DIR)
    summary: Dict[str, Any] = {
        "alpha_s_physical": alpha_phys,
        "x_ho_m": x_ho,
        "alpha_s_source": alpha_s_source,
        "physical": bec.model_dump(),
        "cases": {},
    }
    outputs = []
    diverged = False

    for name, params in cases.items():
        result = classify(params)
        entry: Dict[str, Any] = {"params": params.model_dump(), "report": result.model_dump(mode="json")}
        if paths > 0:
            sim = SimConfig(
                dt=dt, t_final=t_final, n_paths=paths, seed=seed,
                variance_mode=VarianceMode.INTEGRATE, n_workers=workers,
            )
            stats = simulate_means(params, sim, SCENARIO_X0, v0=SCENARIO_V0)
            outputs.append(write_series_csv(stats.times, stats.mean_energy, stats.std_error, out_dir / f"scenario_{name}.csv"))
            plateau, plateau_se = plateau_energy(stats)
            entry.update(plateau_energy=plateau, plateau_std_error=plateau_se, n_diverged=stats.n_diverged)
            diverged = diverged or stats.diverged
        summary["cases"][name] = entry

    separated = summary["cases"]["separated"]["report"]
    identical = summary["cases"]["identical"]["report"]
    click.echo(_scenario_table(summary, identical, separated))

    summary_path = out_dir / "scenario.json"
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    logger.info(f"Wrote {summary_path}")
    resolved = {
        "physical": bec.model_dump(),
        "alpha_s_source": alpha_s_source,
        "matched_filter": matched_filter,
        "sim": {"n_paths": paths, "dt": dt, "t_final": t_final, "seed": seed},
    }
    write_manifest(summary_path, "scenario", resolved, started, seed=seed, method="analytic+numeric",
                   outputs=[summary_path, *outputs])

    ctx = click.get_current_context()
    if assert_stable and diverged:
        click.echo("a scenario simulation diverged", err=True)
        ctx.exit(EXIT_DIVERGED)
    ctx.exit(EXIT_STABLE if separated["stable"] else EXIT_UNSTABLE)


def _scenario_table(summary: Dict[str, Any], identical: Dict[str, Any], separated: Dict[str, Any]) -> str:
    rows = [("", "identical", "separated")]
    for label, key in (("status", "status"), ("E_inf_rho", "e_inf_rho"), ("E_inf_rho / E_inf_0", "energy_ratio"),
                       ("r", "rate_r"), ("r0 / r", "rate_ratio")):
        rows.append((label, _cell(identical[key]), _cell(separated[key])))
    if "plateau_energy" in summary["cases"]["separated"]:
        rows.append((
            "simulated plateau",
            format_human(summary["cases"]["identical"]["plateau_energy"]),
            format_human(summary["cases"]["separated"]["plateau_energy"]),
        ))
    width = max(len(r[0]) for r in rows)
    lines = [f"alpha_S (physical) = {format_human(summary['alpha_s_physical'])}, source: {summary['alpha_s_source']}"]
    lines += [f"{a:<{width}}  {b:>12}  {c:>12}" for a, b, c in rows]
    return "\n".join(lines)


def _cell(value) -> str:
    return value if isinstance(value, str) else format_human(value)


def main():
    try:
        cli(prog_name=settings.PROJECT_NAME)
    except OscfbError as e:
        logger.error(f"oscfb failed: {e}", exc_info=True)
        raise SystemExit(EXIT_CONFIG)


if __name__ == "__main__":
    main()
