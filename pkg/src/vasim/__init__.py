"""Deterministic simulator of a magnetically actuated milli-spinner robot
navigating pulsatile vascular networks: calibrated swim-speed law,
spin/flip/step-out mode map, branch-selection navigation, drug-release
kinetics and aneurysm-embolization procedures, with a batch CLI and a live
teleoperation server.
"""

from .fields import DipoleActuator, FieldSample, HelmholtzSource, dipole_B, \
    move_actuator, sample_helmholtz, sample_rotating_dipole
from .sim import Scenario, WorldState, fluoro_project, initial_world, \
    load_scenario, run_scenario, step
from .spinner import Mode, ModeCalibration, PropulsionFit, SpinnerSpec, \
    SpinnerState, calibrate_propulsion, choose_branch, classify_mode, \
    propulsion_speed, suction_speed
from .therapy import Agent, PayloadState, SacTherapyState, SealState, \
    occlusion_factor
from .vessels import AneurysmSac, FlowField, InflowSpec, Node, Segment, \
    VesselNetwork, build_resistances, inflow_waveform, load_network, \
    local_velocity, segment_frame, solve_flow

__version__ = "0.1.0"
