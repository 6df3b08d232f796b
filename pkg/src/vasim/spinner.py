"""Milli-spinner motion model: propulsion law, mode map, branch selection.

Propulsion is a calibrated affine law in spin frequency (clamped at zero).
The spinner aligns its long axis with the field rotation axis, so steering is
entirely geometric: thrust points along helix_handedness * sense * axis, and
its projection onto the local vessel tangent drives arc-length motion.
Translation is quasi-steady; the spinner is at terminal velocity within a
timestep.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .fields import FieldSample

RPM_TO_HZ = 1.0 / 60.0

# suction diagnostic: 6.0 cm/s at 2k rpm, linear in frequency
SUCTION_COEFF_M_PER_CYCLE = 0.06 / (2000.0 * RPM_TO_HZ)


class Mode(enum.Enum):
    IDLE = "IDLE"
    FLIP = "FLIP"
    SPIN = "SPIN"
    STEP_OUT = "STEP_OUT"
    CAPTURED = "CAPTURED"


@dataclass(frozen=True)
class PropulsionFit:
    slope: float  # m/s per Hz
    intercept: float  # m/s

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("propulsion slope must be > 0")


@dataclass(frozen=True)
class ModeCalibration:
    # boundary frequencies are linear in field magnitude, anchored at 15 mT:
    # flip->spin at 3.6k rpm, spin->step-out at 7.2k rpm
    flip_to_spin_slope: float = 3600.0 * RPM_TO_HZ / 0.015  # Hz/T
    step_out_slope: float = 7200.0 * RPM_TO_HZ / 0.015
    minimum_field: float = 2e-3  # T

    def __post_init__(self):
        if not 0 < self.flip_to_spin_slope < self.step_out_slope:
            raise ValueError("need 0 < flip_to_spin_slope < step_out_slope")


@dataclass(frozen=True)
class SpinnerSpec:
    outer_diameter: float = 2.5e-3
    body_length: float = 4e-3
    helix_handedness: int = 1
    magnet_moment: float = 2e-3  # A.m^2, three small cube magnets
    propulsion_fit: PropulsionFit | None = None
    flow_coupling: float = 1.0  # beta, advection gain while actively spinning
    idle_coupling: float = 1.0  # beta_idle, advection gain otherwise
    mode_calibration: ModeCalibration = field(default_factory=ModeCalibration)
    alignment_cutoff: float = math.pi / 3  # rad, stall beyond this misalignment

    def __post_init__(self):
        if self.outer_diameter <= 0 or self.body_length <= 0:
            raise ValueError("spinner dimensions must be > 0")
        if not 0 <= self.flow_coupling <= 1 or not 0 <= self.idle_coupling <= 1:
            raise ValueError("flow couplings must lie in [0, 1]")
        if not 0 < self.alignment_cutoff <= math.pi / 2:
            raise ValueError("alignment_cutoff must lie in (0, pi/2]")
        if self.helix_handedness not in (1, -1):
            raise ValueError("helix_handedness must be +1 or -1")


@dataclass(frozen=True, eq=False)
class SpinnerState:
    segment_id: int
    arc_s: float
    mode: Mode = Mode.IDLE
    travel_sign: int = 1
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spin_frequency_actual: float = 0.0


def calibrate_propulsion(samples) -> PropulsionFit:
    """Ordinary least-squares affine fit of speed [m/s] vs frequency [Hz]."""
    samples = list(samples)
    freqs = np.array([f for f, _ in samples], dtype=float)
    speeds = np.array([v for _, v in samples], dtype=float)
    if len(set(freqs.tolist())) < 2:
        raise ValueError("need >= 2 samples at distinct frequencies")
    slope, intercept = np.polyfit(freqs, speeds, 1)
    return PropulsionFit(float(slope), float(intercept))


#: OLS fit over the three reference speed anchors (2k, 8.4k, 30k rpm).
REFERENCE_SPEED_SAMPLES = (
    (2000.0 * RPM_TO_HZ, 0.026),
    (8400.0 * RPM_TO_HZ, 0.145),
    (30000.0 * RPM_TO_HZ, 0.586),
)


def default_propulsion_fit() -> PropulsionFit:
    return calibrate_propulsion(REFERENCE_SPEED_SAMPLES)


def propulsion_speed(f: float, fit: PropulsionFit) -> float:
    """Clamped affine swim speed at spin frequency f [Hz]."""
    if f < 0:
        raise ValueError("frequency must be >= 0")
    return max(0.0, fit.slope * f + fit.intercept)


def classify_mode(B: float, f: float, calib: ModeCalibration) -> Mode:
    if B < calib.minimum_field or f == 0.0:
        return Mode.IDLE
    if f <= calib.flip_to_spin_slope * B:
        return Mode.FLIP
    if f <= calib.step_out_slope * B:
        return Mode.SPIN
    return Mode.STEP_OUT


def propulsion_direction(spec: SpinnerSpec, field_sample: FieldSample) -> np.ndarray:
    """Unit thrust direction; invariant under (axis, sense) -> (-axis, -sense)."""
    return (spec.helix_handedness * field_sample.sense) * field_sample.rotation_axis


def arc_velocity(spec: SpinnerSpec, mode: Mode, field_sample: FieldSample,
                 u_local: float, tangent) -> float:
    """Signed d(arc_s)/dt along the local tangent for the given mode."""
    if mode is not Mode.SPIN:
        return spec.idle_coupling * u_local
    fit = spec.propulsion_fit or default_propulsion_fit()
    d = propulsion_direction(spec, field_sample)
    dot = float(np.dot(d, np.asarray(tangent, dtype=float)))
    # the spinner body aligns with the axis *line*: fold to the acute angle
    alignment = abs(dot)
    thrust = 0.0
    if alignment >= math.cos(spec.alignment_cutoff):
        thrust = math.copysign(alignment, dot) * propulsion_speed(
            field_sample.frequency, fit)
    return thrust + spec.flow_coupling * u_local


def advance_spinner(state: SpinnerState, spec: SpinnerSpec,
                    field_sample: FieldSample, u_local: float, tangent,
                    dt: float) -> SpinnerState:
    """One explicit-Euler step of the spinner pose.

    The returned arc_s is not clamped to the segment: the caller owns junction
    routing and the position cache. CAPTURED is absorbing.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if state.mode is Mode.CAPTURED:
        return state
    mode = classify_mode(field_sample.magnitude, field_sample.frequency,
                         spec.mode_calibration)
    ds_dt = arc_velocity(spec, mode, field_sample, u_local, tangent)
    travel = state.travel_sign
    if mode is Mode.SPIN:
        dot = float(np.dot(propulsion_direction(spec, field_sample),
                           np.asarray(tangent, dtype=float)))
        if dot != 0.0:
            travel = 1 if dot > 0 else -1
    actual = field_sample.frequency if mode in (Mode.FLIP, Mode.SPIN) else 0.0
    return replace(state, arc_s=state.arc_s + ds_dt * dt, mode=mode,
                   travel_sign=travel, spin_frequency_actual=actual)


def choose_branch(candidates, propulsion_dir, cutoff: float):
    """Pick the outgoing segment best aligned with the thrust direction.

    Returns the winning segment id, or None (stall) when no candidate lies
    within the alignment cutoff. Ties break to the lowest segment id.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no outgoing candidates")
    d = np.asarray(propulsion_dir, dtype=float)
    best_id, best_dot = None, -np.inf
    for seg_id, tangent in sorted(candidates, key=lambda c: c[0]):
        dot = float(np.dot(d, np.asarray(tangent, dtype=float)))
        if dot > best_dot:
            best_id, best_dot = seg_id, dot
    if best_dot < math.cos(cutoff):
        return None
    return best_id


def suction_speed(f: float) -> float:
    """Peak suction inflow speed at the spinner mouth (diagnostic only)."""
    if f < 0:
        raise ValueError("frequency must be >= 0")
    return SUCTION_COEFF_M_PER_CYCLE * f
