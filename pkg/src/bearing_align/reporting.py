"""Report generation module.

Produces a Markdown run report with convergence, spectra and Lyapunov tables,
a log-scale figure of the alignment errors and a 3D figure of the agents'
body frames at the start and the end of the run.
"""

from __future__ import annotations

from pathlib import Path
from typing import cast

import matplotlib

matplotlib.use("Agg")  # Non-interactive backend
import matplotlib.pyplot as plt
import numpy as np
from mpl_toolkits.mplot3d import Axes3D
from numpy.typing import ArrayLike

from bearing_align.analysis import ConvergenceReport, EquilibriumReport, LyapunovAudit
from bearing_align.simulator import TrajectoryLog

_FLOOR = 1e-16


def save_error_figure(log: TrajectoryLog, output_dir: Path) -> str:
    """Plot ``||I - R_iᵀ R_1||_F`` against time for every follower."""
    if log.frame.height == 0:
        return ""
    fig, ax = plt.subplots(figsize=(10, 6))
    t = log.times
    cmap = plt.get_cmap("viridis", max(log.n_agents - 1, 1))
    for agent in range(2, log.n_agents + 1):
        err = np.maximum(log.series(agent, "err_frob"), _FLOOR)
        ax.semilogy(t, err, color=cmap(agent - 2), linewidth=1.2, label=f"Agent {agent}")

    ax.set_xlabel("Time (s)")
    ax.set_ylabel("Alignment error (Frobenius)")
    ax.set_title("Orientation Alignment Errors")
    ax.legend(fontsize=8, ncol=2)
    ax.grid(alpha=0.3, which="both")

    path = output_dir / "figures" / "alignment_errors.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return "figures/alignment_errors.png"


_AXIS_COLORS = ("tab:red", "tab:green", "tab:blue")


def save_orientation_figure(log: TrajectoryLog, positions: ArrayLike, output_dir: Path) -> str:
    """Draw every agent's body axes at its position, for the first and the last logged sample."""
    if log.frame.height == 0:
        return ""
    pos = np.asarray(positions, dtype=float).reshape(log.n_agents, 3)
    span = float(np.ptp(pos, axis=0).max())
    length = 0.15 * span if span > 0.0 else 1.0
    fig = plt.figure(figsize=(12, 6))
    for col, (row, label) in enumerate(((0, "Initial"), (log.frame.height - 1, "Final")), start=1):
        ax = cast(Axes3D, fig.add_subplot(1, 2, col, projection="3d"))
        rotations = np.stack(log.rotations_at(row))
        for axis, color in enumerate(_AXIS_COLORS):
            u = rotations[:, :, axis]
            ax.quiver(
                pos[:, 0],
                pos[:, 1],
                pos[:, 2],
                u[:, 0],
                u[:, 1],
                u[:, 2],
                length=length,
                color=color,
                linewidth=1.2,
                label=f"body {'xyz'[axis]}",
            )
        for agent, p in enumerate(pos, start=1):
            ax.text(p[0], p[1], p[2], f" {agent}", fontsize=8)
        ax.set_title(f"{label} frames (t = {log.times[row]:g} s)")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_zlabel("z")
    fig.axes[0].legend(fontsize=8, loc="upper left")

    path = output_dir / "figures" / "orientation_frames.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return "figures/orientation_frames.png"


def _fmt(value: float | None, spec: str = ".3e") -> str:
    return "—" if value is None else format(value, spec)


def _convergence_section(report: ConvergenceReport) -> list[str]:
    lines = ["## Convergence\n"]
    if not report.agents:
        lines.append("No followers in the scenario.\n")
        return lines
    converged = sum(a.converged for a in report.agents)
    lines.append(
        f"{converged} of {len(report.agents)} followers below **{report.threshold:g}** "
        f"at t = {report.t_end:g} s.\n"
    )
    lines.append("| Agent | Status | Time to threshold (s) | Rate (1/s) | R² | Terminal error | Terminal input |")
    lines.append("|---|---|---|---|---|---|---|")
    for a in report.agents:
        lines.append(
            f"| {a.agent} | {a.status} | {_fmt(a.time_to_threshold, '.2f')} | {_fmt(a.rate, '.3f')} "
            f"| {_fmt(a.r_squared, '.4f')} | {_fmt(a.terminal_error)} | {_fmt(a.terminal_input)} |"
        )
    lines.append("")
    return lines


def _spectra_section(report: ConvergenceReport) -> list[str]:
    if not report.spectra:
        return []
    lines = ["## K-Matrix Spectra\n"]
    lines.append("| Agent | λ₁ | λ₂ | λ₃ | Spread | k_V |")
    lines.append("|---|---|---|---|---|---|")
    for s in report.spectra:
        lam = s.eigenvalues
        lines.append(
            f"| {s.agent} | {lam[0]:.4f} | {lam[1]:.4f} | {lam[2]:.4f} | {s.spread:.3f} | {_fmt(s.k_v, '.4f')} |"
        )
    lines.append("")
    return lines


def _audit_section(audit: LyapunovAudit | None) -> list[str]:
    if audit is None:
        return []
    lines = ["## Lyapunov Audit\n", f"Tolerance per sample: {audit.tolerance:g}\n"]
    lines.append("| Agent | k_V | Samples | Max increase | Violations | Increase fraction |")
    lines.append("|---|---|---|---|---|---|")
    for a in audit.agents:
        lines.append(
            f"| {a.agent} | {a.k_v:.4f} | {a.samples} | {a.max_increase:.3e} "
            f"| {a.violations} | {a.increase_fraction:.3f} |"
        )
    lines.append("")
    return lines


def generate_run_report(
    log: TrajectoryLog,
    report: ConvergenceReport,
    output_dir: Path,
    audit: LyapunovAudit | None = None,
    positions: ArrayLike | None = None,
) -> Path:
    """Write ``report.md`` and its figures into ``output_dir``.

    The orientation-frame figure is drawn when agent ``positions`` are given.

    Returns:
        Path to the generated report file.
    """
    output_dir.mkdir(parents=True, exist_ok=True)
    figure = save_error_figure(log, output_dir)
    frames = save_orientation_figure(log, positions, output_dir) if positions is not None else ""

    lines: list[str] = []
    lines.append("# Orientation Alignment Run Report\n")
    lines.append(f"- Agents: {log.n_agents}")
    lines.append(f"- Step size: {log.dt:g} s, logged every {log.log_every} steps")
    lines.append(f"- Samples: {log.frame.height}")
    lines.append(f"- Scenario digest: `{log.scenario_digest}`\n")
    lines.extend(_convergence_section(report))
    if figure:
        lines.append(f"![Alignment errors]({figure})\n")
    if frames:
        lines.append(f"![Initial and final body frames]({frames})\n")
    lines.extend(_spectra_section(report))
    lines.extend(_audit_section(audit))
    if report.monte_carlo is not None:
        mc = report.monte_carlo
        lines.append("## Monte Carlo\n")
        lines.append(f"{mc.converged} of {mc.trials} trials converged (seed {mc.seed}).\n")

    path = output_dir / "report.md"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def equilibrium_markdown(report: EquilibriumReport) -> str:
    """Markdown table of an equilibrium probe."""
    lines = [f"## Critical Points of Agent {report.agent}\n"]
    lam = ", ".join(f"{v:.4f}" for v in report.eigenvalues)
    lines.append(f"Eigenvalues: {lam}; perturbation {report.perturbation:g} rad.\n")
    lines.append("| Point | Label | Φ | Expected Φ | Residual | Escaped | Converged |")
    lines.append("|---|---|---|---|---|---|---|")
    for p in report.points:
        lines.append(
            f"| {p.index} | {p.label} | {p.phi:.6f} | {p.expected_phi:.6f} | {p.residual:.2e} "
            f"| {p.escaped}/{p.trials} | {p.converged}/{p.trials} |"
        )
    return "\n".join(lines) + "\n"
