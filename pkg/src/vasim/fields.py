"""Rotating magnetic field sources: uniform Helmholtz coils and a movable
rotating permanent magnet (point dipole on a robotic arm).

The spinner only needs a per-tick summary of the field it sits in: magnitude,
rotation axis, drive frequency and sense. For the rotating dipole the
magnitude is the RMS of |B| over one rotation cycle, and the local rotation
axis is approximated by the magnet's spin axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

MU0_OVER_4PI = 1e-7  # T.m/A

_DIPOLE_PHASES = 64


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("axis must be a nonzero finite vector")
    return v / n


@dataclass(frozen=True, eq=False)
class FieldSample:
    magnitude: float  # T
    rotation_axis: np.ndarray  # unit
    frequency: float  # Hz
    sense: int  # +-1


@dataclass(frozen=True, eq=False)
class HelmholtzSource:
    rotation_axis: np.ndarray
    magnitude: float  # T
    frequency: float  # Hz
    sense: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rotation_axis", _unit(self.rotation_axis))
        if self.magnitude < 0 or self.frequency < 0:
            raise ValueError("magnitude and frequency must be >= 0")
        if self.sense not in (1, -1):
            raise ValueError("sense must be +1 or -1")


@dataclass(frozen=True, eq=False)
class DipoleActuator:
    position: np.ndarray  # m
    spin_axis: np.ndarray
    moment_magnitude: float  # A.m^2
    frequency: float  # Hz
    sense: int = 1

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "spin_axis", _unit(self.spin_axis))
        if self.moment_magnitude <= 0:
            raise ValueError("moment_magnitude must be > 0")
        if self.frequency < 0:
            raise ValueError("frequency must be >= 0")
        if self.sense not in (1, -1):
            raise ValueError("sense must be +1 or -1")


def sample_helmholtz(source: HelmholtzSource, point) -> FieldSample:
    """Uniform field: identical sample at every point."""
    return FieldSample(source.magnitude, source.rotation_axis,
                       source.frequency, source.sense)


def dipole_B(moment, source_position, field_point) -> np.ndarray:
    """Point-dipole field B = (mu0/4pi) [3(m.r^)r^ - m] / r^3."""
    m = np.asarray(moment, dtype=float)
    r = np.asarray(field_point, dtype=float) - np.asarray(source_position, dtype=float)
    dist = np.linalg.norm(r)
    if dist == 0:
        raise ValueError("field point coincides with the dipole")
    rhat = r / dist
    return MU0_OVER_4PI * (3.0 * np.dot(m, rhat) * rhat - m) / dist**3


def sample_rotating_dipole(actuator: DipoleActuator, point, t: float = 0.0,
                           phases: int = _DIPOLE_PHASES) -> FieldSample:
    """Summarize the rotating-magnet field at a point.

    The moment vector sweeps the plane perpendicular to the spin axis; the
    reported magnitude is the RMS of |B| over one cycle, averaged on a fixed
    phase grid so the result is deterministic and t-independent.
    """
    axis = actuator.spin_axis
    # orthonormal pair spanning the rotation plane
    helper = np.array([1.0, 0.0, 0.0])
    if abs(np.dot(helper, axis)) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = _unit(np.cross(axis, helper))
    e2 = np.cross(axis, e1)
    acc = 0.0
    for k in range(phases):
        phi = 2.0 * np.pi * k / phases
        m = actuator.moment_magnitude * (np.cos(phi) * e1 + np.sin(phi) * e2)
        b = dipole_B(m, actuator.position, point)
        acc += float(np.dot(b, b))
    rms = float(np.sqrt(acc / phases))
    return FieldSample(rms, axis, actuator.frequency, actuator.sense)


def move_actuator(actuator: DipoleActuator, translation=(0.0, 0.0, 0.0),
                  rotation_axis=None, rotation_angle: float = 0.0) -> DipoleActuator:
    """Rigid pose update: translate and rotate the spin axis (axis-angle, rad)."""
    position = actuator.position + np.asarray(translation, dtype=float)
    spin_axis = actuator.spin_axis
    if rotation_axis is not None and rotation_angle != 0.0:
        rot = Rotation.from_rotvec(rotation_angle * _unit(rotation_axis))
        spin_axis = rot.apply(spin_axis)
    return DipoleActuator(position, spin_axis, actuator.moment_magnitude,
                          actuator.frequency, actuator.sense)
