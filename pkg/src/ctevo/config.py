"""Flat key-value pipeline configuration.

One ``section.key = value`` assignment per line, ``#`` comments.  Camera
calibration keys are mandatory; everything else has the documented default.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import StereoCameraModel
from .errors import ConfigError
from .ransac import RansacParams
from .tracklets import TrackletFilters, TrackletParams

_REQUIRED = object()


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(","))


def _strings(text: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in text.split(","))


_SCHEMA: dict[str, dict[str, tuple]] = {
    "camera": {
        "fu": (float, _REQUIRED),
        "fv": (float, _REQUIRED),
        "cu": (float, _REQUIRED),
        "cv": (float, _REQUIRED),
        "baseline": (float, _REQUIRED),
        "width": (int, _REQUIRED),
        "height": (int, _REQUIRED),
    },
    "clustering": {
        "window_s": (float, 0.025),
        "max_count": (int, 15000),
    },
    "tracklets": {
        "stereo_dt_max": (float, 0.020),
        "disparity_min": (float, 2.0),
        "length_min": (float, 2.0),
        "duration_min": (float, 0.040),
        "extension_depth": (int, 3),
        "min_response": (int, 3),
        "match_ratio": (float, 0.8),
        "match_max_distance": (int, 40),
        "epipolar_tol": (float, 2.0),
        "match_radius": (float, 50.0),
        "resolutions": (_strings, ("full", "half")),
    },
    "ransac": {
        "iterations": (int, 10000),
        "sample_size": (int, 3),
        "threshold": (float, 0.05),
        "seed": (int, 0),
    },
    "estimator": {
        "qc_inv_diag": (_floats, (50.0, 50.0, 50.0, 500.0, 500.0, 500.0)),
        "r_inv_diag": (_floats, (0.5, 0.5, 0.1)),
        "window_width": (int, 5),
        "convergence_tol": (float, 0.01),
        "max_iters": (int, 50),
        "min_tracklets": (int, 3),
    },
    "simulate": {
        "velocity": (_floats, (0.25, 0.08, 0.05, 0.02, -0.03, 0.04)),
        "duration": (float, 2.0),
        "n_landmarks": (int, 50),
        "n_clusters": (int, 6),
        "noise_px": (float, 0.0),
        "outlier_fraction": (float, 0.0),
        "depth_min": (float, 1.0),
        "depth_max": (float, 5.0),
        "events_per_pixel": (int, 1),
        "pattern_size": (int, 5),
        "n_eval_times": (int, 50),
        "seed": (int, 0),
    },
    "io": {
        "events": (str, ""),
        "tracklets": (str, ""),
        "gt": (str, ""),
        "eval_times": (str, ""),
        "out": (str, ""),
    },
}


@dataclass(eq=False)
class ClusteringParams:
    window_s: float = 0.025
    max_count: int = 15000


@dataclass(eq=False)
class EstimatorParams:
    qc_inv_diag: tuple[float, ...] = (50.0, 50.0, 50.0, 500.0, 500.0, 500.0)
    r_inv_diag: tuple[float, ...] = (0.5, 0.5, 0.1)
    window_width: int = 5
    convergence_tol: float = 0.01
    max_iters: int = 50
    min_tracklets: int = 3


@dataclass(eq=False)
class SimulateParams:
    velocity: tuple[float, ...] = (0.25, 0.08, 0.05, 0.02, -0.03, 0.04)
    duration: float = 2.0
    n_landmarks: int = 50
    n_clusters: int = 6
    noise_px: float = 0.0
    outlier_fraction: float = 0.0
    depth_min: float = 1.0
    depth_max: float = 5.0
    events_per_pixel: int = 1
    pattern_size: int = 5
    n_eval_times: int = 50
    seed: int = 0


@dataclass(eq=False)
class IoPaths:
    events: str = ""
    tracklets: str = ""
    gt: str = ""
    eval_times: str = ""
    out: str = ""


@dataclass(eq=False)
class PipelineConfig:
    camera: StereoCameraModel
    clustering: ClusteringParams = field(default_factory=ClusteringParams)
    tracklets: TrackletParams = field(default_factory=TrackletParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    estimator: EstimatorParams = field(default_factory=EstimatorParams)
    simulate: SimulateParams = field(default_factory=SimulateParams)
    io: IoPaths = field(default_factory=IoPaths)

    def __post_init__(self):
        if self.estimator.window_width < 2:
            raise ConfigError("estimator.window_width must be >= 2")
        positive = {
            "clustering.window_s": self.clustering.window_s,
            "clustering.max_count": self.clustering.max_count,
            "tracklets.stereo_dt_max": self.tracklets.filters.stereo_dt_max,
            "tracklets.disparity_min": self.tracklets.filters.disparity_min,
            "tracklets.length_min": self.tracklets.filters.length_min,
            "tracklets.duration_min": self.tracklets.filters.duration_min,
            "ransac.iterations": self.ransac.iterations,
            "ransac.threshold": self.ransac.threshold,
            "estimator.convergence_tol": self.estimator.convergence_tol,
            "estimator.max_iters": self.estimator.max_iters,
        }
        for key, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{key} must be positive, got {value}")
        if any(q <= 0 for q in self.estimator.qc_inv_diag) or \
                len(self.estimator.qc_inv_diag) != 6:
            raise ConfigError("estimator.qc_inv_diag must be 6 positive values")
        if any(r <= 0 for r in self.estimator.r_inv_diag) or \
                len(self.estimator.r_inv_diag) != 3:
            raise ConfigError("estimator.r_inv_diag must be 3 positive values")


def parse_config_text(text: str, path: str = "<config>") -> PipelineConfig:
    raw: dict[str, dict[str, str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'section.key = value'")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if "." not in key:
            raise ConfigError(f"{path}:{lineno}: key {key!r} lacks a section")
        section, name = key.split(".", 1)
        if section not in _SCHEMA:
            raise ConfigError(f"{path}:{lineno}: unknown section {section!r}")
        if name not in _SCHEMA[section]:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        raw.setdefault(section, {})[name] = value.strip()

    values: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for name, (cast, default) in keys.items():
            if name in raw.get(section, {}):
                try:
                    values[section][name] = cast(raw[section][name])
                except ValueError as exc:
                    raise ConfigError(
                        f"bad value for {section}.{name}: {exc}") from None
            elif default is _REQUIRED:
                raise ConfigError(f"missing required key {section}.{name}")
            else:
                values[section][name] = default

    cam = values["camera"]
    try:
        camera = StereoCameraModel(cam["fu"], cam["fv"], cam["cu"], cam["cv"],
                                   cam["baseline"], cam["width"], cam["height"])
    except ValueError as exc:
        raise ConfigError(f"bad camera calibration: {exc}") from None
    tr = values["tracklets"]
    tracklet_params = TrackletParams(
        min_response=tr["min_response"],
        match_ratio=tr["match_ratio"],
        match_max_distance=tr["match_max_distance"],
        epipolar_tol=tr["epipolar_tol"],
        match_radius=tr["match_radius"],
        extension_depth=tr["extension_depth"],
        resolutions=tuple(tr["resolutions"]),
        filters=TrackletFilters(tr["stereo_dt_max"], tr["disparity_min"],
                                tr["length_min"], tr["duration_min"]),
    )
    estimator = EstimatorParams(**values["estimator"])
    ransac = RansacParams(r_inv_diag=tuple(estimator.r_inv_diag),
                          **values["ransac"])
    return PipelineConfig(
        camera=camera,
        clustering=ClusteringParams(**values["clustering"]),
        tracklets=tracklet_params,
        ransac=ransac,
        estimator=estimator,
        simulate=SimulateParams(**values["simulate"]),
        io=IoPaths(**values["io"]),
    )


def load_config(path) -> PipelineConfig:
    try:
        with open(path, "r") as handle:
            text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, str(path))
