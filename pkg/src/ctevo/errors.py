"""Exception types raised across the pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline-specific errors."""


class AmbiguousBranchError(PipelineError):
    """Rotation angle at pi: the matrix logarithm branch is ambiguous."""


class NonPositiveDepthError(PipelineError):
    """Point at or behind the camera plane; projection undefined."""


class DegenerateDisparityError(PipelineError):
    """Stereo disparity too small to triangulate."""


class EventParseError(PipelineError):
    """Malformed line in an event file (message names the line number)."""


class NonMonotonicTimeError(PipelineError):
    """Event timestamps decreased within one camera stream."""


class NoEventNearbyError(PipelineError):
    """No active-event timestamp within the lookup radius."""


class SingularNormalMatrixError(PipelineError):
    """Velocity normal equations are rank deficient (degenerate geometry)."""


class NoValidHypothesisError(PipelineError):
    """Every RANSAC sample produced a singular system."""


class NonPositiveDtError(PipelineError):
    """Prior covariance requested for a non-positive time step."""


class EmptyTrackletSetError(PipelineError):
    """No inlier tracklets left to build an estimation window from."""


class SingularSystemError(PipelineError):
    """Gauss-Newton normal equations are not positive definite."""


class OutOfWindowError(PipelineError):
    """Query time outside the estimation window."""


class EmptyReportError(PipelineError):
    """Error aggregation requested on zero samples."""


class NoVisibleLandmarksError(PipelineError):
    """Could not sample landmarks satisfying the visibility constraint."""


class ConfigError(PipelineError):
    """Bad or missing configuration value (message names the key)."""


class IoError(PipelineError):
    """Unreadable input or unwritable output path."""


class PipelineFailure(PipelineError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
