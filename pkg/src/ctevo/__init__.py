"""Continuous-time stereo event-camera visual odometry.

Asynchronous events are clustered into synchronized binary frames and
surfaces of active events, tracked into per-landmark stereo tracklets that
keep each measurement's own event timestamp, filtered with a
motion-compensated RANSAC, and fused by a Gauss-Newton estimator under a
white-noise-on-acceleration prior.  The result is a continuous trajectory
queryable at any time inside the estimation window.
"""

__version__ = "0.1.0"
