"""CLI entrypoint for bearing-align.

Commands:
  validate    — Check a scenario's network structure and geometry
  run         — Simulate a scenario; write trajectory CSV, convergence JSON and report
  sweep       — Monte Carlo over random initial orientations plus the ISS gain table
  equilibria  — Enumerate, classify and perturb one agent's critical points

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure
(divergence, non-finite state, degenerate spectrum), 3 parse error.
"""

from __future__ import annotations

from pathlib import Path

import typer
from pydantic import ValidationError
from rich.console import Console

from bearing_align.config import RunConfig, ScenarioOverrides, configure_logging
from bearing_align.errors import (
    BearingAlignError,
    DegenerateSpectrumError,
    DivergedError,
    NonFiniteError,
    ScenarioParseError,
)
from bearing_align.schema import Scenario

app = typer.Typer(
    name="bearing-align",
    help="Bearing-only orientation alignment for leader-follower networks on SO(3).",
    add_completion=False,
)
console = Console()

EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARSE = 3


@app.callback()
def main() -> None:
    """Configure logging from BEARING_ALIGN_LOG before any command runs."""
    configure_logging()


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, ScenarioParseError):
        return EXIT_PARSE
    if isinstance(exc, NonFiniteError | DivergedError | DegenerateSpectrumError):
        return EXIT_RUNTIME
    if isinstance(exc, FileNotFoundError | ValidationError):
        return EXIT_VALIDATION
    if isinstance(exc, BearingAlignError):
        return EXIT_RUNTIME
    return EXIT_VALIDATION


def _fail(exc: Exception) -> typer.Exit:
    console.print(f"[red]✗ {type(exc).__name__}: {exc}[/]")
    return typer.Exit(code=_exit_code(exc))


def _get_config(
    scenario: Path | None,
    out: Path | None,
    seed: int | None,
    dt: float | None = None,
    t_end: float | None = None,
    trials: int | None = None,
    landmark_mode: str | None = None,
    config_file: Path | None = None,
) -> RunConfig:
    """Build the run config from an optional JSON file, then apply CLI flags on top."""
    from bearing_align.ingest import load_run_config

    config = load_run_config(config_file) if config_file else RunConfig()
    updates: dict[str, object] = {}
    if scenario is not None:
        updates["scenario_path"] = scenario
    if out is not None:
        updates["output_dir"] = out
    if seed is not None:
        updates["seed"] = seed
    overrides = config.overrides.model_dump()
    for key, value in (("dt", dt), ("t_end", t_end), ("landmark_mode", landmark_mode)):
        if value is not None:
            overrides[key] = value
    updates["overrides"] = ScenarioOverrides.model_validate(overrides)
    mc_updates: dict[str, int] = {}
    if seed is not None:
        mc_updates["seed"] = seed
    if trials is not None:
        mc_updates["trials"] = trials
    updates["monte_carlo"] = config.monte_carlo.model_copy(update=mc_updates)
    return RunConfig.model_validate({**config.model_dump(), **updates})


def _load_validated(config: RunConfig) -> Scenario:
    """Load (or build) the scenario, merge overrides and run validation.

    Raises:
        typer.Exit: With code 1 when validation finds critical issues.
    """
    from bearing_align.ingest import load_scenario
    from bearing_align.schema import default_scenario
    from bearing_align.validate import validate_scenario

    base = load_scenario(config.scenario_path) if config.scenario_path else default_scenario()
    scenario = base.with_overrides(config.overrides)
    result = validate_scenario(scenario)
    for issue in result.advisory_issues:
        console.print(f"  [yellow]• {issue.rule}: {issue.message}[/]")
    if not result.passed:
        console.print(f"[red]✗ Validation FAILED — {len(result.critical_issues)} critical issues:[/]")
        for issue in result.critical_issues:
            console.print(f"  [red]• {issue.rule}: {issue.message}[/]")
        raise typer.Exit(code=EXIT_VALIDATION)
    return scenario


def _apply_spread(scenario: Scenario, target_spread: float | None) -> Scenario:
    if target_spread is None:
        return scenario
    from bearing_align.analysis import spread_gains

    overrides, achieved = spread_gains(scenario, target_spread)
    console.print(
        f"  Follower gains shaped for spread {target_spread:g} (largest achieved {achieved:.3f})"
    )
    return scenario.with_gains(scenario.gains.with_overrides(overrides))


@app.command()
def validate(
    scenario: Path | None = typer.Option(None, "--scenario", help="Scenario JSON (default: bundled)"),
    out: Path = typer.Option(Path("output"), "--out", help="Output directory"),
    landmark_mode: str | None = typer.Option(None, "--landmark-mode", help="multi, single or none"),
) -> None:
    """Validate a scenario against network-structure and geometry rules."""
    from bearing_align.ingest import load_scenario, save_report
    from bearing_align.schema import default_scenario
    from bearing_align.validate import validate_scenario

    console.print(f"[bold blue]Validating {scenario or 'bundled eight-agent scenario'}...[/]")
    try:
        overrides = ScenarioOverrides(landmark_mode=landmark_mode)  # type: ignore[arg-type]
        s = (load_scenario(scenario) if scenario else default_scenario()).with_overrides(overrides)
    except (ScenarioParseError, FileNotFoundError, ValidationError) as e:
        raise _fail(e) from e

    result = validate_scenario(s)
    save_report(result, out / "validation_report.json")

    if result.passed:
        console.print(
            f"[green]✓ Validation passed ({result.n_agents} agents, "
            f"{len(result.advisory_issues)} advisory warnings)[/]"
        )
        for issue in result.advisory_issues:
            console.print(f"  [yellow]• {issue.rule}: {issue.message}[/]")
    else:
        console.print(f"[red]✗ Validation FAILED — {len(result.critical_issues)} critical issues:[/]")
        for issue in result.critical_issues:
            console.print(f"  [red]• {issue.rule}: {issue.message}[/]")
        raise typer.Exit(code=EXIT_VALIDATION)


@app.command()
def run(
    scenario: Path | None = typer.Option(None, "--scenario", help="Scenario JSON (default: bundled)"),
    out: Path | None = typer.Option(None, "--out", help="Output directory"),
    seed: int | None = typer.Option(None, "--seed", help="Seed for k_V fitting"),
    dt: float | None = typer.Option(None, "--dt", help="Integration step (s)"),
    t_end: float | None = typer.Option(None, "--t-end", help="Simulation horizon (s)"),
    landmark_mode: str | None = typer.Option(None, "--landmark-mode", help="multi, single or none"),
    target_spread: float | None = typer.Option(
        None, "--target-spread", help="Shape follower gains towards this spectral spread"
    ),
    config_file: Path | None = typer.Option(None, "--config", help="RunConfig JSON file"),
) -> None:
    """Simulate a scenario and write the trajectory, convergence report and figures."""
    from bearing_align.analysis import convergence_analysis, lyapunov_audit
    from bearing_align.ingest import save_report, save_trajectory
    from bearing_align.reporting import generate_run_report
    from bearing_align.simulator import run as simulate

    try:
        config = _get_config(scenario, out, seed, dt, t_end, None, landmark_mode, config_file)
        s = _apply_spread(_load_validated(config), target_spread)
        console.print(
            f"[bold blue]Simulating {s.n} agents to t={s.integration.t_end:g} s "
            f"(dt={s.integration.dt:g}, mode={s.landmark_mode})...[/]"
        )
        log = simulate(s, config.analysis, seed=config.seed)
        report = convergence_analysis(log, config.analysis.convergence_threshold, scenario=s)
        audit = lyapunov_audit(log, s, tolerance=config.analysis.lyapunov_tolerance)
    except typer.Exit:
        raise
    except (BearingAlignError, FileNotFoundError, ValidationError) as e:
        raise _fail(e) from e

    out_dir = config.output_dir
    csv_path = save_trajectory(log.frame, out_dir / "trajectory.csv")
    save_report(report, out_dir / "convergence.json")
    save_report(audit, out_dir / "lyapunov_audit.json")
    report_path = generate_run_report(log, report, out_dir, audit, positions=s.positions())

    for agent in report.agents:
        mark = "[green]✓" if agent.converged else "[red]✗"
        err = "—" if agent.terminal_error is None else f"{agent.terminal_error:.3e}"
        console.print(f"  {mark} Agent {agent.agent}: terminal error {err}[/]")
    console.print(f"[green]✓ Trajectory → {csv_path}; report → {report_path}[/]")


@app.command()
def sweep(
    scenario: Path | None = typer.Option(None, "--scenario", help="Scenario JSON (default: bundled)"),
    out: Path | None = typer.Option(None, "--out", help="Output directory"),
    seed: int | None = typer.Option(None, "--seed", help="Root seed of all trials"),
    trials: int | None = typer.Option(None, "--trials", help="Monte Carlo trials"),
    t_end: float | None = typer.Option(None, "--t-end", help="Horizon per trial (s)"),
    landmark_mode: str | None = typer.Option(None, "--landmark-mode", help="multi, single or none"),
    target_spread: float | None = typer.Option(
        None, "--target-spread", help="Shape follower gains towards this spectral spread"
    ),
    config_file: Path | None = typer.Option(None, "--config", help="RunConfig JSON file"),
) -> None:
    """Run the Monte Carlo sweep and the ISS gain experiment."""
    from bearing_align.analysis import iss_gain_experiment
    from bearing_align.ingest import save_report, save_table
    from bearing_align.simulator import monte_carlo

    try:
        config = _get_config(scenario, out, seed, None, None, trials, landmark_mode, config_file)
        if t_end is not None:
            config = config.model_copy(
                update={"monte_carlo": config.monte_carlo.model_copy(update={"t_end": t_end})}
            )
        if config.monte_carlo.trials < 1:
            console.print("[red]✗ --trials must be at least 1[/]")
            raise typer.Exit(code=EXIT_VALIDATION)
        s = _apply_spread(_load_validated(config), target_spread)
        mc = config.monte_carlo
        threshold = config.analysis.convergence_threshold
        console.print(
            f"[bold blue]Monte Carlo: {mc.trials} trials to t={mc.t_end:g} s (seed={mc.seed})...[/]"
        )
        summary = monte_carlo(s, mc.trials, mc.seed, mc, threshold)
        console.print("[bold blue]ISS gain experiment...[/]")
        table = iss_gain_experiment(s, config.spread_values, config.gain_scales, mc, threshold)
    except typer.Exit:
        raise
    except (BearingAlignError, FileNotFoundError, ValidationError) as e:
        raise _fail(e) from e

    out_dir = config.output_dir
    save_report(summary, out_dir / "monte_carlo.json")
    save_table(summary.to_frame(), out_dir / "monte_carlo_trials.csv")
    save_table(table, out_dir / "iss_table.csv")

    mark = "[green]✓" if summary.converged == summary.trials else "[yellow]!"
    console.print(f"{mark} {summary.converged}/{summary.trials} trials converged[/]")
    for row in table.iter_rows(named=True):
        console.print(
            f"  spread {row['target_spread']:g} × scale {row['gain_scale']:g}: "
            f"{row['converged']}/{row['trials']} converged"
        )
    console.print(f"[green]✓ Sweep outputs → {out_dir}[/]")


@app.command()
def equilibria(
    agent: int = typer.Option(2, "--agent", help="Agent whose critical points are probed (>= 2)"),
    scenario: Path | None = typer.Option(None, "--scenario", help="Scenario JSON (default: bundled)"),
    out: Path | None = typer.Option(None, "--out", help="Output directory"),
    seed: int | None = typer.Option(None, "--seed", help="Seed of the perturbation directions"),
    landmark_mode: str | None = typer.Option(None, "--landmark-mode", help="multi, single or none"),
    config_file: Path | None = typer.Option(None, "--config", help="RunConfig JSON file"),
) -> None:
    """Enumerate, classify and perturb the four critical points of one agent."""
    from bearing_align.analysis import equilibrium_probe
    from bearing_align.ingest import save_report
    from bearing_align.reporting import equilibrium_markdown

    try:
        config = _get_config(scenario, out, seed, None, None, None, landmark_mode, config_file)
        s = _load_validated(config)
        if agent < 2 or agent > s.n:
            console.print(f"[red]✗ Agent {agent} has no alignment law; choose 2..{s.n}[/]")
            raise typer.Exit(code=EXIT_VALIDATION)
        console.print(f"[bold blue]Probing critical points of agent {agent}...[/]")
        report = equilibrium_probe(agent, s, config=config.analysis, seed=config.seed)
    except typer.Exit:
        raise
    except (BearingAlignError, FileNotFoundError, ValidationError) as e:
        raise _fail(e) from e

    path = save_report(report, config.output_dir / f"equilibria_agent{agent}.json")
    table_path = path.with_suffix(".md")
    table_path.write_text(equilibrium_markdown(report), encoding="utf-8")
    for p in report.points:
        ok = p.stable if p.index == 0 else p.unstable
        mark = "[green]✓" if ok else "[red]✗"
        console.print(
            f"  {mark} Point {p.index} ({p.label}): residual {p.residual:.2e}, "
            f"escaped {p.escaped}/{p.trials}, converged {p.converged}/{p.trials}[/]"
        )
    console.print(
        f"[green]✓ {report.stable_count} stable, {report.unstable_count} unstable → {path}, {table_path}[/]"
    )


if __name__ == "__main__":
    app()
