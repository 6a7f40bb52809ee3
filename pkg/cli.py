#!/usr/bin/env python3
"""
Command-line front end for the chi-extremes laboratory.

Every subcommand resolves an ExperimentConfig (defaults < --config file < flags),
writes a CSV (stdout unless --out is given) and, with --out, a JSON sidecar
holding the resolved config, the version string and the wall-clock runtime.
Summaries and logs go to stderr.
"""

import csv
import functools
import io
import json
import logging
import math
import subprocess
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional

import click
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError
from rich import box
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.progress import Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

import analytics
import montecarlo
from config import ExperimentConfig, resolve_config
from covariance import berman_check, fit_local_expansion
from errors import ChiExtremesError, ConfigError
from gaussian_sim import Grid, build_embedding
from limit_process import LimitConfig

# Load environment variables
load_dotenv()

console = Console(stderr=True)
logger = logging.getLogger("chi_extremes")

FLOAT_FORMAT = ".17g"
DEFAULT_VALIDATE_BERMAN_HORIZON = 1e4


def setup_logging(debug: bool):
    logging.basicConfig(
        level=logging.DEBUG if debug else logging.WARNING,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=debug, show_path=debug)],
        force=True,
    )


def version_string() -> str:
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            check=True,
            cwd=Path(__file__).resolve().parent,
        )
        return result.stdout.strip() or "unknown"
    except (OSError, subprocess.CalledProcessError):
        return "unknown"


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "nan" if math.isnan(value) else format(value, FLOAT_FORMAT)
    return str(value)


def render_csv(rows: List[Dict[str, Any]]) -> str:
    if not rows:
        return ""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(rows[0].keys()), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: format_value(value) for key, value in row.items()})
    return buffer.getvalue()


def as_rows(records: Iterable[BaseModel], **leading: Any) -> List[Dict[str, Any]]:
    return [{**leading, **record.model_dump()} for record in records]


def show_table(title: str, rows: List[Dict[str, Any]], columns: Optional[List[str]] = None):
    if not rows:
        console.print(f"[yellow]{title}: no rows[/yellow]")
        return
    columns = columns or list(rows[0].keys())
    table = Table(title=title, show_header=True, header_style="bold magenta", box=box.ROUNDED)
    for column in columns:
        table.add_column(column, style="cyan" if column == columns[0] else "white", no_wrap=True)
    for row in rows:
        table.add_row(*[format(row[c], ".6g") if isinstance(row[c], float) else format_value(row[c]) for c in columns])
    console.print(table)


def emit(command: str, config: ExperimentConfig, rows: List[Dict[str, Any]], started: float, summary: Optional[Dict[str, Any]] = None):
    text = render_csv(rows)
    if config.out is None:
        click.echo(text, nl=False)
        return
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    sidecar = {
        "command": command,
        "config": config.model_dump(mode="json"),
        "version": version_string(),
        "runtime_seconds": time.time() - started,
        "summary": summary or {},
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    console.print(f"[green]✓ wrote {out} and {out.with_suffix('.json')}[/green]")


def fail(error: ChiExtremesError):
    error = montecarlo.unwrap(error)
    click.echo(error.to_record(), err=True)
    console.print(Panel(f"[bold red]{error.message}[/bold red]", title=f"❌ {type(error).__name__}", border_style="red"))
    sys.exit(error.code)


def spinner(description: str):
    progress = Progress(SpinnerColumn(), TextColumn("[progress.description]{task.description}"), TimeElapsedColumn(), console=console, transient=True)
    progress.add_task(description, total=None)
    return progress


def float_list(values) -> Optional[List[float]]:
    return list(values) if values else None


EXPERIMENT_OPTIONS = [
    click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config or previous sidecar"),
    click.option("--out", type=click.Path(dir_okay=False), help="CSV output path; sidecar written next to it"),
    click.option("--m", type=int, help="Components in the positive block"),
    click.option("--k", type=int, help="Components in the subtracted block"),
    click.option("--kappa", type=float, help="Power applied to both norms"),
    click.option("--alpha", type=float, help="Local exponent in (0, 2]"),
    click.option("--family", type=click.Choice(["power_exponential", "generalized_cauchy", "tabulated"]), help="Correlation family"),
    click.option("--C", "C", type=float, multiple=True, help="Scale constant (repeat per component)"),
    click.option("--gamma", type=float, help="Generalized Cauchy tail exponent"),
    click.option("--t-max", type=float, help="Grid window for validate-model"),
    click.option("--n", type=int, help="Grid points for validate-model"),
    click.option("--lags", type=float, multiple=True, help="Strictly decreasing lags in (0, 1) for the local fit"),
    click.option("--u", type=float, multiple=True, help="Threshold (repeatable)"),
    click.option("--T", "T", type=float, multiple=True, help="Window length (repeatable)"),
    click.option("--x-grid", type=float, multiple=True, help="Sojourn levels (repeatable)"),
    click.option("--t-values", type=float, multiple=True, help="Excursion times (repeatable)"),
    click.option("--t-window", type=float, help="Sojourn window length"),
    click.option("--a", type=float, multiple=True, help="Limit-process grid step (repeatable; upsilon and sojourn use the last)"),
    click.option("--horizon", type=float, help="Limit-process time horizon a*J"),
    click.option("--J", "J", type=int, help="Limit-process grid horizon, overrides --horizon"),
    click.option("--reps", type=int, help="Replications"),
    click.option("--limit-reps", type=int, help="Limit-process replications"),
    click.option("--parallelism", type=int, help="Worker threads"),
    click.option("--master-seed", type=int, help="64-bit master seed"),
    click.option("--quadrature-tol", type=float, help="Relative quadrature tolerance"),
    click.option("--embedding-tol", type=float, help="Allowed negative spectral mass"),
    click.option("--berman-tolerance", type=float, help="Berman decay tolerance"),
    click.option("--berman-horizon", type=float, help="Berman check horizon"),
    click.option("--mesh-delta", type=float, help="Mesh factor: h <= delta * q(u)"),
    click.option("--piterbarg-K", "piterbarg_K", type=float, help="Piterbarg constant K"),
    click.option("--piterbarg-beta", type=float, help="Piterbarg exponent beta"),
    click.option("--h-override", type=float, help="Use this Pickands constant instead of estimating it"),
    click.option("--min-tail", type=float, help="Skip thresholds with P(zeta(0) > u) below this"),
    click.option("--permutations", type=int, help="Permutations for two-sample KS p-values"),
]

LIST_FIELDS = {"C", "lags", "u", "T", "x_grid", "t_values", "a"}


def experiment_command(name: str, help_text: str):
    """Register a subcommand taking every leaf flag and a resolved ExperimentConfig"""

    def decorator(body: Callable[[ExperimentConfig], tuple]):
        @functools.wraps(body)
        def command(config_path, **flags):
            started = time.time()
            overrides = {key: (float_list(value) if key in LIST_FIELDS else value) for key, value in flags.items()}
            try:
                config = resolve_config(config_path, overrides)
                rows, summary = body(config)
            except ChiExtremesError as error:
                fail(error)
            except ValidationError as error:
                fail(ConfigError(f"invalid parameters: {error.errors()[0]['msg']}"))
            emit(name, config, rows, started, summary)

        for option in reversed(EXPERIMENT_OPTIONS):
            command = option(command)
        return main.command(name=name, help=help_text)(command)

    return decorator


class LaboratoryGroup(click.Group):
    """Click group whose usage errors also leave a JSON error record and exit 2"""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        if not standalone_mode:
            return super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        try:
            return super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
        except click.ClickException as error:
            error.show()
            fail(ConfigError(error.format_message()))
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(1)


@click.group(cls=LaboratoryGroup)
@click.option("--debug", is_flag=True, help="Verbose logging")
def main(debug):
    """Extremes of differences of chi-type processes: analytics and Monte Carlo checks"""
    setup_logging(debug)


def resolve_H(config: ExperimentConfig, spec, policy) -> float:
    if config.h_override is not None:
        return config.h_override
    with spinner("Estimating the Pickands constant..."):
        return montecarlo.resolve_H(
            spec,
            policy,
            a_list=config.a,
            horizon=config.horizon,
            reps=config.limit_reps or config.reps,
            parallelism=config.parallelism,
        )


@experiment_command("validate-model", "Local expansion fit, embeddability and Berman check per component")
def validate_model(config: ExperimentConfig):
    spec = config.model_spec()
    grid = Grid(t_max=config.t_max, n=config.n)
    horizon = config.berman_horizon or DEFAULT_VALIDATE_BERMAN_HORIZON
    berman = berman_check(spec.models, spec.kappa, spec.k, horizon, config.berman_tolerance)
    rows = []
    for index, model in enumerate(spec.models):
        fit = fit_local_expansion(model, config.lags)
        embedding = build_embedding(model, grid, config.embedding_tol)
        rows.append(
            {
                "component": index + 1,
                "family": model.family,
                "C": model.local_constant,
                "alpha": spec.alpha,
                "C_local": fit.C_local,
                "alpha_local": fit.alpha_local,
                "fit_residual": fit.fit_residual,
                "clip_mass": embedding.clip_mass,
                "min_eigenvalue": embedding.min_eigenvalue,
                "berman_c": berman.c,
                "berman_satisfied": berman.satisfied,
            }
        )
    show_table("🔍 Model validation", rows, ["component", "family", "C_local", "alpha_local", "fit_residual", "clip_mass", "berman_satisfied"])
    return rows, {"berman": berman.model_dump(exclude={"evidence"})}


@experiment_command("tail", "Asymptotic and quadrature tails of zeta(0)")
def tail(config: ExperimentConfig):
    rows = []
    for u in config.u:
        evaluation = analytics.evaluate_tail(config.m, config.k, config.kappa, u, config.quadrature_tol)
        rows.append(
            {
                "m": evaluation.m,
                "k": evaluation.k,
                "kappa": evaluation.kappa,
                "u": evaluation.u,
                "asymptotic": evaluation.asymptotic,
                "oracle": evaluation.oracle,
                "ratio": evaluation.ratio,
                "literal_asymptotic": evaluation.literal_asymptotic,
            }
        )
    show_table("📈 Tail of zeta(0)", rows, ["u", "asymptotic", "oracle", "ratio"])
    return rows, {}


@experiment_command("sup-prob", "Empirical sup-probabilities against the sup asymptotic")
def sup_prob(config: ExperimentConfig):
    spec = config.model_spec()
    policy = montecarlo.RngPolicy(master_seed=config.master_seed)
    H = resolve_H(config, spec, policy)
    rows, grids = [], {}
    for T in config.T:
        with spinner(f"Simulating suprema on [0, {T:g}]..."):
            report = montecarlo.experiment_sup_prob(
                spec,
                T,
                config.u,
                config.reps,
                policy,
                H=H,
                parallelism=config.parallelism,
                mesh_delta=config.mesh_delta,
                min_tail=config.min_tail,
                piterbarg_K=config.piterbarg_K,
                piterbarg_beta=config.piterbarg_beta,
                quadrature_tol=config.quadrature_tol,
                embedding_tol=config.embedding_tol,
            )
        rows.extend(as_rows(report.rows))
        grids.update(report.grids)
    show_table("🎯 Sup-probabilities", rows, ["T", "u", "empirical", "asymptotic", "ratio", "piterbarg", "skipped"])
    return rows, {"H_used": H, "grids": grids}


@experiment_command("pickands", "Pickands-type constant on an a-ladder with extrapolation")
def pickands(config: ExperimentConfig):
    spec = config.model_spec()
    policy = montecarlo.RngPolicy(master_seed=config.master_seed)
    horizon = config.J * min(config.a) if config.J is not None else config.horizon
    with spinner("Estimating the Pickands constant..."):
        report = montecarlo.experiment_pickands(spec, config.a, horizon, config.limit_reps or config.reps, policy, config.parallelism)
    rows = as_rows(report.estimates)
    extrapolation = report.extrapolation
    rows.append(
        {
            **{key: None for key in rows[0]},
            "h_hat": extrapolation.h_extrapolated,
            "stderr": extrapolation.stderr,
            "a": 0.0,
        }
    )
    show_table("🧮 Pickands constant", rows, ["a", "J", "h_hat", "stderr", "tail_fraction"])
    return rows, {"h_extrapolated": extrapolation.h_extrapolated, "stderr": extrapolation.stderr}


@experiment_command("upsilon", "Sojourn tail of the limit process")
def upsilon(config: ExperimentConfig):
    spec = config.model_spec()
    policy = montecarlo.RngPolicy(master_seed=config.master_seed)
    a = config.a[-1]
    limit = LimitConfig(spec=spec, a=a, J=config.J_for(a))
    with spinner("Sampling limit-process sojourns..."):
        curve = montecarlo.experiment_upsilon(limit, config.x_grid, config.limit_reps or config.reps, policy, config.parallelism)
    rows = [
        {"x": x, "upsilon": value, "upsilon_raw": raw, "stderr": se}
        for x, value, raw, se in zip(curve.x, curve.upsilon, curve.upsilon_raw, curve.stderr)
    ]
    show_table("⏱  Upsilon", rows)
    return rows, {"a": a, "J": limit.J}


@experiment_command("sojourn", "Sojourn-time identity against the limit-process Upsilon")
def sojourn(config: ExperimentConfig):
    spec = config.model_spec()
    policy = montecarlo.RngPolicy(master_seed=config.master_seed)
    a = config.a[-1]
    rows, summary = [], {}
    for u in config.u:
        with spinner(f"Simulating sojourns above u={u:g}..."):
            report = montecarlo.experiment_sojourn(
                spec,
                u,
                config.t_window,
                config.x_grid,
                config.reps,
                policy,
                a=a,
                horizon=config.J * a if config.J is not None else config.horizon,
                limit_reps=config.limit_reps,
                parallelism=config.parallelism,
                mesh_delta=config.mesh_delta,
                embedding_tol=config.embedding_tol,
            )
        rows.extend(as_rows(report.rows, u=u, v=report.v))
        summary[format_value(u)] = {"mean_sojourn": report.mean_sojourn, "stderr": report.mean_sojourn_stderr}
    show_table("⏳ Sojourn identity", rows, ["u", "x", "lhs", "upsilon", "ratio", "overlap"])
    return rows, summary


@experiment_command("gumbel", "Gumbel limit of normalised maxima")
def gumbel(config: ExperimentConfig):
    spec = config.model_spec()
    policy = montecarlo.RngPolicy(master_seed=config.master_seed)
    H = resolve_H(config, spec, policy)
    with spinner("Simulating maxima..."):
        report = montecarlo.experiment_gumbel(
            spec,
            config.T,
            config.reps,
            policy,
            H=H,
            parallelism=config.parallelism,
            mesh_delta=config.mesh_delta,
            berman_horizon=config.berman_horizon,
            berman_tolerance=config.berman_tolerance,
            embedding_tol=config.embedding_tol,
        )
    rows = as_rows(report.rows)
    show_table("📊 Gumbel convergence", rows, ["T", "ks", "ks_null_scale", "mean", "variance"])
    return rows, {"H_used": report.H_used, "berman_c": report.berman_c}


@experiment_command("excursion", "Conditional excursions against limit-process marginals")
def excursion(config: ExperimentConfig):
    spec = config.model_spec()
    policy = montecarlo.RngPolicy(master_seed=config.master_seed)
    with spinner("Sampling conditional excursions..."):
        report = montecarlo.experiment_excursion(
            spec,
            config.u,
            config.t_values,
            config.reps,
            policy,
            permutations=config.permutations,
            parallelism=config.parallelism,
            quadrature_tol=config.quadrature_tol,
        )
    rows = as_rows(report.rows)
    show_table("🔬 Conditional excursions", rows, ["u", "t", "ks", "p_value", "excursion_mean", "eta_mean"])
    return rows, {}


if __name__ == "__main__":
    main()
