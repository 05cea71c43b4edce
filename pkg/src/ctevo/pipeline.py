"""End-to-end pipeline orchestration behind the CLI subcommands.

``run`` consumes either a raw event file (clustering + feature front end) or
an injected tracklet dump, slides the estimator over the cluster windows and
writes the trajectory, per-window diagnostics and, when ground truth is
available, the error report with figures.  ``simulate`` drives the synthetic
oracle; ``evaluate`` compares two trajectory files; ``inspect`` dumps
cluster/tracklet statistics.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import report as report_mod
from . import se3, synth, tracklets as tracklets_mod, trajectory as traj_mod
from .config import PipelineConfig
from .errors import (ConfigError, EmptyReportError, IoError, OutOfWindowError,
                     PipelineError, PipelineFailure)
from .estimator import SlideResult, SlidingWindowParams, WnoaPrior, slide_window
from .events import cluster_events, read_events, write_events
from .trajectory import ContinuousTrajectory, TrajectorySamples

log = logging.getLogger(__name__)


@dataclass(eq=False)
class RunResult:
    trajectory: ContinuousTrajectory
    slide: SlideResult
    report: traj_mod.ErrorReport | None
    artifacts: dict[str, str]


def _require_readable(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise IoError(f"{what} file not found: {p}")
    return p


def _prepare_out(out_dir) -> Path:
    p = Path(out_dir)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output dir {p}: {exc}") from None
    return p


def _load_tracklets(config: PipelineConfig, events_path, tracklets_path):
    """Front end: clusters + features from events, or an injected dump."""
    if (events_path is None) == (tracklets_path is None):
        raise ConfigError("exactly one of --events / --tracklets is required")
    if events_path is not None:
        events = read_events(_require_readable(events_path, "event"),
                             config.camera.width, config.camera.height)
        clusters = list(cluster_events(events, config.camera.width,
                                       config.camera.height,
                                       config.clustering.window_s,
                                       config.clustering.max_count))
        if not clusters:
            raise PipelineFailure("clustering", "event stream produced no clusters")
        built = tracklets_mod.build_tracklets(clusters, config.camera,
                                              config.tracklets)
        return built, len(clusters)
    dump = tracklets_mod.read_tracklets(
        _require_readable(tracklets_path, "tracklet"), config.camera)
    if not dump:
        raise PipelineFailure("tracklets", "tracklet dump is empty")
    n_bins = tracklets_mod.bin_observations(dump, config.clustering.window_s)
    return dump, n_bins


def _stage(stage: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (PipelineFailure, ConfigError, IoError):
        raise
    except PipelineError as exc:
        raise PipelineFailure(stage, str(exc)) from exc


def run_pipeline(config: PipelineConfig, out_dir, events_path=None,
                 tracklets_path=None, gt_path=None, eval_times_path=None,
                 seed: int | None = None, refine: bool = True) -> RunResult:
    out = _prepare_out(out_dir)
    if seed is not None:
        config.ransac.seed = seed
    built, n_clusters = _stage("frontend", _load_tracklets, config,
                               events_path, tracklets_path)
    log.info("front end: %d tracklets over %d clusters", len(built), n_clusters)
    prior = WnoaPrior.from_information_diag(config.estimator.qc_inv_diag)
    params = SlidingWindowParams(
        width=config.estimator.window_width,
        ransac=config.ransac,
        r_inv_diag=tuple(config.estimator.r_inv_diag),
        convergence_tol=config.estimator.convergence_tol,
        max_iters=config.estimator.max_iters,
        min_tracklets=config.estimator.min_tracklets,
        refine=refine,
    )
    slide = _stage("estimator", slide_window, built, n_clusters,
                   config.camera, prior, params)
    if not slide.knots:
        raise PipelineFailure("estimator", "no window produced a solution; "
                              "see diagnostics")
    trajectory = ContinuousTrajectory(slide.knots, prior)

    artifacts: dict[str, str] = {}
    times = [k.t for k in slide.knots]
    cam_to_world = [se3.pose_inverse(k.T) for k in slide.knots]
    traj_path = out / "trajectory.txt"
    traj_mod.write_tum(traj_path, times, cam_to_world)
    artifacts["trajectory"] = str(traj_path)
    diag_path = out / "diagnostics.tsv"
    report_mod.write_diagnostics(diag_path, slide.diagnostics)
    artifacts["diagnostics"] = str(diag_path)

    error_report = None
    if gt_path is not None:
        error_report = _stage(
            "evaluate", _evaluate_against_gt, trajectory, gt_path,
            eval_times_path, out, artifacts)
    return RunResult(trajectory, slide, error_report, artifacts)


def _read_eval_times(path) -> np.ndarray:
    values = []
    with open(path, "r") as handle:
        for line in handle:
            stripped = line.strip()
            if stripped and not stripped.startswith("#"):
                values.append(float(stripped))
    if not values:
        raise IoError(f"no evaluation times in {path}")
    return np.sort(np.asarray(values, dtype=float))


def _clip_times(times: np.ndarray, lo: float, hi: float) -> np.ndarray:
    kept = times[(times >= lo) & (times <= hi)]
    if kept.size < len(times):
        log.info("clipped %d evaluation time(s) outside [%g, %g]",
                 len(times) - kept.size, lo, hi)
    if kept.size < 2:
        raise EmptyReportError("fewer than 2 evaluation times inside coverage")
    return kept


def _evaluate_against_gt(trajectory: ContinuousTrajectory, gt_path,
                         eval_times_path, out: Path,
                         artifacts: dict[str, str]) -> traj_mod.ErrorReport:
    gt = traj_mod.read_tum(_require_readable(gt_path, "ground-truth"))
    if eval_times_path is not None:
        eval_times = _read_eval_times(_require_readable(eval_times_path,
                                                        "evaluation-times"))
    else:
        eval_times = np.linspace(trajectory.t_start, trajectory.t_end, 50)
    eval_times = _clip_times(eval_times,
                             max(trajectory.t_start, gt.t_start),
                             min(trajectory.t_end, gt.t_end))
    # The continuous trajectory is queried directly (prior interpolation);
    # ground truth is interpolated from its samples.
    est_poses = np.stack([se3.pose_inverse(trajectory.query(t)[0])
                          for t in eval_times])
    est = TrajectorySamples(eval_times, est_poses)
    return _write_report(est, gt, eval_times, out, artifacts)


def _write_report(est: TrajectorySamples, gt: TrajectorySamples, eval_times,
                  out: Path, artifacts: dict[str, str]) -> traj_mod.ErrorReport:
    ge = traj_mod.global_error(est, gt, eval_times)
    re = traj_mod.relative_error(est, gt, eval_times)
    gt_poses = np.stack([gt.sample_at(t) for t in eval_times])
    error_report = traj_mod.aggregate(ge, re, gt_poses)
    metrics_path = out / "metrics.tsv"
    report_mod.write_metrics(metrics_path, error_report)
    artifacts["metrics"] = str(metrics_path)
    errors_path = out / "errors.csv"
    report_mod.write_errors_csv(errors_path, eval_times, ge, re)
    artifacts["errors"] = str(errors_path)
    est_at = TrajectorySamples(np.asarray(eval_times),
                               np.stack([est.sample_at(t) for t in eval_times]))
    gt_at = TrajectorySamples(np.asarray(eval_times), gt_poses)
    artifacts["figures"] = report_mod.render_figures(
        out / "figures", est_at, gt_at, eval_times, ge, re)
    return error_report


def simulate(config: PipelineConfig, out_dir, seed: int | None = None,
             ) -> dict[str, str]:
    """Generate a synthetic scene and write events, tracklets, ground truth
    and evaluation times under out_dir."""
    out = _prepare_out(out_dir)
    sim = config.simulate
    if seed is not None:
        sim.seed = seed
    scene = synth.generate_constant_velocity_scene(
        np.asarray(sim.velocity), sim.duration, sim.n_landmarks, config.camera,
        seed=sim.seed, depth_range=(sim.depth_min, sim.depth_max),
        noise_px=sim.noise_px, outlier_fraction=sim.outlier_fraction)
    rendered = synth.render_tracklets(scene, sim.n_clusters,
                                      cluster_span=config.clustering.window_s)
    events = synth.render_events(scene, sim.events_per_pixel, sim.pattern_size)
    artifacts: dict[str, str] = {}
    events_path = out / "events.txt"
    write_events(events_path, events)
    artifacts["events"] = str(events_path)
    tracklets_path = out / "tracklets.txt"
    tracklets_mod.write_tracklets(tracklets_path, rendered.tracklets)
    artifacts["tracklets"] = str(tracklets_path)
    gt_times = np.linspace(0.0, sim.duration, max(2, int(sim.duration * 100)))
    gt_path = out / "gt.txt"
    traj_mod.write_tum(gt_path, gt_times,
                       [scene.world_pose(t) for t in gt_times])
    artifacts["gt"] = str(gt_path)
    obs_times = [o.t for t in rendered.tracklets for o in t.observations]
    eval_times = np.linspace(min(obs_times), max(obs_times), sim.n_eval_times)
    eval_path = out / "eval_times.txt"
    eval_path.write_text("".join(f"{t:.12f}\n" for t in eval_times))
    artifacts["eval_times"] = str(eval_path)
    log.info("simulated %d tracklets, %d events", len(rendered.tracklets),
             len(events))
    return artifacts


def evaluate(est_path, gt_path, out_dir, eval_times_path=None,
             ) -> traj_mod.ErrorReport:
    """File-based comparison: both trajectories are sampled (log-linear
    interpolation) at the evaluation times."""
    out = _prepare_out(out_dir)
    est = traj_mod.read_tum(_require_readable(est_path, "estimate"))
    gt = traj_mod.read_tum(_require_readable(gt_path, "ground-truth"))
    if eval_times_path is not None:
        eval_times = _read_eval_times(_require_readable(eval_times_path,
                                                        "evaluation-times"))
    else:
        eval_times = est.times
    eval_times = _clip_times(np.asarray(eval_times, dtype=float),
                             max(est.t_start, gt.t_start),
                             min(est.t_end, gt.t_end))
    artifacts: dict[str, str] = {}
    return _write_report(est, gt, eval_times, out, artifacts)


def inspect(config: PipelineConfig, events_path) -> str:
    """Cluster and tracklet statistics for an event file, as printable text."""
    events = read_events(_require_readable(events_path, "event"),
                         config.camera.width, config.camera.height)
    clusters = list(cluster_events(events, config.camera.width,
                                   config.camera.height,
                                   config.clustering.window_s,
                                   config.clustering.max_count))
    lines = [f"clusters: {len(clusters)}"]
    for c in clusters:
        lines.append(f"  cluster {c.index}: [{c.t_start:.6f}, {c.t_end:.6f}) "
                     f"left={c.count_left} right={c.count_right}")
    built = tracklets_mod.build_tracklets(clusters, config.camera,
                                          config.tracklets)
    lines.append(f"tracklets: {len(built)}")
    if built:
        lengths = [len(t.observations) for t in built]
        durations = [t.duration for t in built]
        lines.append(f"  observations per tracklet: min={min(lengths)} "
                     f"max={max(lengths)} mean={np.mean(lengths):.2f}")
        lines.append(f"  duration [s]: min={min(durations):.4f} "
                     f"max={max(durations):.4f}")
    return "\n".join(lines) + "\n"
