"""Extrinsic calibration of panoramic RGB-D camera rings.

Neighbouring cameras are matched on descriptor keypoints, lifted to 3D with
their depth maps, aligned pairwise on SE(3) and then reconciled by a ring
pose graph whose closing edge spreads the accumulated drift.
"""

from .errors import *  # noqa: F401,F403
from .lie import Pose, exp_map, log_map
from .pipeline import Capture, calibrate, sweep
from .rigsim import NoiseSpec, RigSpec, generate_scene, kinect_like, noiseless

__version__ = "0.1.0"

__all__ = [
    "Capture",
    "NoiseSpec",
    "Pose",
    "RigSpec",
    "calibrate",
    "exp_map",
    "generate_scene",
    "kinect_like",
    "log_map",
    "noiseless",
    "sweep",
]
