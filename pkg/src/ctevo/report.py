"""Delimited outputs and matplotlib figures for the evaluation path.

Every report lands as plot-ready text (tab-separated metrics, per-sample
CSV) with the corresponding figures rendered to PNG files next to it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .estimator import WindowDiagnostics
from .trajectory import ErrorReport, TrajectorySamples, format_metrics_table


def write_metrics(path, report: ErrorReport) -> None:
    Path(path).write_text(format_metrics_table(report))


def write_errors_csv(path, eval_times, ge: np.ndarray, re: np.ndarray) -> None:
    """Per-sample error CSV: the 6-vector plus component norms, GE and RE.

    RE is undefined at the first sample and written as nan there.
    """
    header = ["t"]
    for tag in ("ge", "re"):
        header += [f"{tag}_{c}" for c in ("vx", "vy", "vz", "wx", "wy", "wz")]
        header += [f"{tag}_tran", f"{tag}_rota", f"{tag}_se3"]
    rows = [",".join(header)]
    for k, t in enumerate(eval_times):
        cells = [f"{t:.12f}"]
        for err in (ge[k], re[k - 1] if k > 0 else np.full(6, np.nan)):
            cells += [f"{x:.9e}" for x in err]
            cells += [f"{np.linalg.norm(err[:3]):.9e}",
                      f"{np.linalg.norm(err[3:]):.9e}",
                      f"{np.linalg.norm(err):.9e}"]
        rows.append(",".join(cells))
    Path(path).write_text("\n".join(rows) + "\n")


def write_diagnostics(path, diagnostics: list[WindowDiagnostics]) -> None:
    lines = ["#window\tclusters\ttracklets\tsegments\tinliers\tknots\t"
             "landmarks\titerations\tinitial_cost\tfinal_cost\tconverged\tstatus"]
    for d in diagnostics:
        lines.append("\t".join([
            str(d.index), f"{d.cluster_lo}-{d.cluster_hi}", str(d.n_tracklets),
            str(d.n_segments), str(d.n_inliers), str(d.n_knots),
            str(d.n_landmarks), str(d.iterations), f"{d.initial_cost:.9e}",
            f"{d.final_cost:.9e}", str(int(d.converged)), d.status]))
    Path(path).write_text("\n".join(lines) + "\n")


def render_figures(figures_dir, est: TrajectorySamples, gt: TrajectorySamples | None,
                   eval_times=None, ge: np.ndarray | None = None,
                   re: np.ndarray | None = None) -> list[str]:
    """Render the trajectory and error plots; returns the written paths."""
    figures_dir = Path(figures_dir)
    figures_dir.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(est.poses[:, 0, 3], est.poses[:, 1, 3], label="estimate")
    if gt is not None:
        ax.plot(gt.poses[:, 0, 3], gt.poses[:, 1, 3], "--", label="ground truth")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("trajectory (top-down)")
    ax.legend()
    ax.set_aspect("equal", adjustable="datalim")
    path = figures_dir / "trajectory_xy.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(str(path))

    if ge is not None and eval_times is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(eval_times, np.linalg.norm(ge[:, :3], axis=1), label="translation [m]")
        ax.plot(eval_times, np.linalg.norm(ge[:, 3:], axis=1), label="rotation [rad]")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("global error")
        ax.set_title("global error vs time")
        ax.legend()
        path = figures_dir / "global_error.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))

    if re is not None and eval_times is not None and len(re):
        fig, ax = plt.subplots(figsize=(6, 4))
        norms = np.linalg.norm(re, axis=1)
        ax.semilogy(np.asarray(eval_times)[1:], np.maximum(norms, 1e-16))
        ax.set_xlabel("t [s]")
        ax.set_ylabel("relative error (SE(3) norm)")
        ax.set_title("relative error vs time")
        path = figures_dir / "relative_error.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(str(path))
    return written
