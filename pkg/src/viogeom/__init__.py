"""viogeom: stereo-inertial geometry toolkit.

Generates 3D supervision signals (3D/2D scene flow, stereo relative poses)
from stereo depth sequences, preintegrates IMU streams with a feedback-driven
bias update, and evaluates/degrades trajectories.
"""

from viogeom.se3 import (
    RigidTransform,
    Rotation,
    Se3Tangent,
    compose,
    inverse,
    se3_exp,
    se3_log,
    so3_exp,
    so3_log,
    transform_point,
)

__all__ = [
    "Rotation",
    "RigidTransform",
    "Se3Tangent",
    "so3_exp",
    "so3_log",
    "se3_exp",
    "se3_log",
    "compose",
    "inverse",
    "transform_point",
]

__version__ = "0.1.0"
