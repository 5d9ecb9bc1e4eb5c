"""Angle arithmetic and humanoid-centric 2D frame transforms.

Conventions used throughout the project:
  * all angles are radians, normalized to (-pi, pi]
  * the humanoid frame has +x along the heading and +y to the left
  * azimuths are positive to the left (atan2 convention)
"""

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Normalize an angle (scalar or array) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite angle")
    w = a - TWO_PI * np.floor((a + math.pi) / TWO_PI)
    # floor maps the +pi edge to -pi; fold it back to keep (-pi, pi]
    w = np.where(w <= -math.pi, w + TWO_PI, w)
    if w.ndim == 0:
        return float(w)
    return w


def angle_diff(a, b):
    """Signed shortest angular difference a - b, in (-pi, pi].

    Works elementwise on arrays; raises on non-finite input.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite angle")
    return wrap_angle(a - b)


@dataclass
class Pose2D:
    """Ground-plane pose of the humanoid root (or the chair)."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        self.yaw = wrap_angle(self.yaw)


@dataclass
class Quat:
    """Unit quaternion, (w, x, y, z) ordering."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __post_init__(self):
        n = math.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if not math.isfinite(n) or n < 1e-12:
            raise ValueError("degenerate quaternion")
        self.w, self.x, self.y, self.z = self.w / n, self.x / n, self.y / n, self.z / n

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @staticmethod
    def from_yaw(yaw: float) -> "Quat":
        half = 0.5 * wrap_angle(yaw)
        return Quat(math.cos(half), 0.0, 0.0, math.sin(half))


def world_to_local(point, root: Pose2D) -> np.ndarray:
    """Express a world xy point in the root frame (+x heading, +y left)."""
    p = np.asarray(point, dtype=float)
    c, s = math.cos(root.yaw), math.sin(root.yaw)
    dx = p[..., 0] - root.x
    dy = p[..., 1] - root.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=-1)


def local_to_world(point, root: Pose2D) -> np.ndarray:
    """Inverse of world_to_local."""
    p = np.asarray(point, dtype=float)
    c, s = math.cos(root.yaw), math.sin(root.yaw)
    lx = p[..., 0]
    ly = p[..., 1]
    return np.stack([root.x + c * lx - s * ly, root.y + s * lx + c * ly], axis=-1)


def azimuth_goal_feature(target, root: Pose2D) -> np.ndarray:
    """[sin(psi), cos(psi)] of the target azimuth in the humanoid frame.

    psi > 0 means the target is to the humanoid's left. A target within
    1e-9 m of the root collapses to psi = 0, i.e. [0, 1].
    """
    local = world_to_local(target, root)
    if math.hypot(local[0], local[1]) < 1e-9:
        return np.array([0.0, 1.0])
    psi = math.atan2(local[1], local[0])
    return np.array([math.sin(psi), math.cos(psi)])


def relative_quat(chair_yaw: float, root_yaw: float) -> Quat:
    """Chair rotation in the humanoid frame as a yaw-axis quaternion."""
    return Quat.from_yaw(angle_diff(chair_yaw, root_yaw))
