"""World state, deterministic fixed-timestep loop, scenario runner,
fluoroscopy projection and trajectory/event logging.

Time is stored as an integer tick count; row k of a trajectory log is at
exactly k * dt. The step function is pure: identical inputs produce
bit-identical outputs, so scenario replays are reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import networkx as nx
import numpy as np

from . import therapy, vessels
from .fields import DipoleActuator, FieldSample, HelmholtzSource, move_actuator, \
    sample_helmholtz, sample_rotating_dipole
from .spinner import Mode, PropulsionFit, SpinnerSpec, SpinnerState, advance_spinner, \
    calibrate_propulsion, choose_branch, default_propulsion_fit, propulsion_direction
from .therapy import Agent, PayloadState, SacTherapyState, SealState

FIXTURES_ENV = "VASIM_FIXTURES"

ASPIRATION_CAPTURE_RADIUS_M = 5e-3
ASPIRATION_FINAL_RADIUS_M = 1e-3
ASPIRATION_PULL_SPEED_M_S = 0.05

_OCCLUSION_EVENT_LEVELS = (0.9, 0.99)

MT_PER_T = 1e3
RPM_PER_HZ = 60.0

TRAJECTORY_BASE_COLUMNS = ["tick", "time_s", "segment", "s_m", "x", "y", "z",
                           "mode", "B_mT", "f_rpm", "released"]


class ScenarioError(ValueError):
    """Scenario document is malformed or references unknown entities."""


class ScenarioParseError(ScenarioError):
    """Scenario document is not valid JSON."""


class LogSchemaError(ValueError):
    """Trajectory log file does not match the declared schema."""


# ---------------------------------------------------------------------------
# commands

@dataclass(frozen=True)
class SetField:
    axis: tuple[float, float, float]
    magnitude_t: float
    frequency_hz: float
    sense: int


@dataclass(frozen=True)
class MoveArm:
    translation_m: tuple[float, float, float]
    rotation_axis: tuple[float, float, float] | None = None
    rotation_angle_rad: float = 0.0


@dataclass(frozen=True)
class ToggleAspiration:
    on: bool


Command = SetField | MoveArm | ToggleAspiration


@dataclass(frozen=True)
class Sheath:
    segment_id: int
    arc_s: float
    aspiration_on: bool = False


@dataclass(frozen=True)
class Event:
    kind: str
    tick: int
    time_s: float
    data: dict

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "tick": self.tick,
                           "time_s": self.time_s, "data": self.data},
                          sort_keys=True)


@dataclass(frozen=True, eq=False)
class WorldState:
    tick: int
    dt: float
    network: vessels.VesselNetwork
    resistances: vessels.Resistances
    flow_field: vessels.FlowField
    spinner: SpinnerState
    spinner_spec: SpinnerSpec
    field_source: HelmholtzSource | DipoleActuator
    payload: PayloadState
    sacs: dict[int, SacTherapyState]
    sheath: Sheath | None
    event_log: tuple[Event, ...] = ()

    @property
    def time_s(self) -> float:
        return self.tick * self.dt


# ---------------------------------------------------------------------------
# network path geometry

def node_graph(network: vessels.VesselNetwork) -> nx.Graph:
    g = nx.Graph()
    g.add_nodes_from(network.nodes)
    for seg in network.segments.values():
        # keep the shortest parallel edge if the graph is a multigraph in spirit
        if g.has_edge(seg.from_node, seg.to_node):
            if g[seg.from_node][seg.to_node]["weight"] <= seg.length:
                continue
        g.add_edge(seg.from_node, seg.to_node, weight=seg.length, segment=seg.id)
    return g


def path_distance(network: vessels.VesselNetwork, a: tuple[int, float],
                  b: tuple[int, float], graph: nx.Graph | None = None) -> float:
    """Shortest along-centerline distance between two (segment, arc_s) poses."""
    graph = graph if graph is not None else node_graph(network)
    seg_a, s_a = a
    seg_b, s_b = b
    best = abs(s_a - s_b) if seg_a == seg_b else math.inf
    ends_a = _segment_ends(network, seg_a, s_a)
    ends_b = _segment_ends(network, seg_b, s_b)
    for na, da in ends_a:
        for nb, db in ends_b:
            try:
                mid = nx.shortest_path_length(graph, na, nb, weight="weight")
            except nx.NetworkXNoPath:
                continue
            best = min(best, da + mid + db)
    return best


def _segment_ends(network, seg_id, s):
    seg = network.segments[seg_id]
    return [(seg.from_node, s), (seg.to_node, seg.length - s)]


def _node_to_pose_distance(network, graph, node, pose):
    seg, s = pose
    best = math.inf
    for n, d in _segment_ends(network, seg, s):
        try:
            best = min(best, nx.shortest_path_length(graph, node, n, weight="weight") + d)
        except nx.NetworkXNoPath:
            pass
    return best


def move_toward(network: vessels.VesselNetwork, graph: nx.Graph,
                pose: tuple[int, float], target: tuple[int, float],
                distance: float) -> tuple[int, float]:
    """Advance a pose along the shortest path toward a target pose."""
    seg_id, s = pose
    remaining = distance
    for _ in range(64):  # network-size bound on hops per step
        if remaining <= 0:
            break
        tgt_seg, tgt_s = target
        if seg_id == tgt_seg:
            step = min(remaining, abs(tgt_s - s))
            s += math.copysign(step, tgt_s - s) if tgt_s != s else 0.0
            break
        seg = network.segments[seg_id]
        opts = []
        for node, gap in ((seg.from_node, s), (seg.to_node, seg.length - s)):
            opts.append((gap + _node_to_pose_distance(network, graph, node, target),
                         node, gap))
        _, node, gap = min(opts)
        if remaining < gap:
            s += -remaining if node == seg.from_node else remaining
            break
        remaining -= gap
        # hop onto the incident segment that continues the shortest path
        best = None
        for nxt in network.incident_segments(node):
            if nxt.id == tgt_seg:
                cost = tgt_s if nxt.from_node == node else nxt.length - tgt_s
            else:
                other = nxt.to_node if nxt.from_node == node else nxt.from_node
                cost = nxt.length + _node_to_pose_distance(network, graph, other, target)
            if best is None or cost < best[0]:
                best = (cost, nxt)
        _, nxt = best
        seg_id = nxt.id
        s = 0.0 if nxt.from_node == node else nxt.length
    return seg_id, s


# ---------------------------------------------------------------------------
# stepping

def _refresh_position(network, state: SpinnerState) -> SpinnerState:
    point, _, _ = vessels.segment_frame(network, state.segment_id, state.arc_s)
    return replace(state, position=point)


def _sample_field(source, point) -> FieldSample:
    if isinstance(source, HelmholtzSource):
        return sample_helmholtz(source, point)
    return sample_rotating_dipole(source, point)


def _apply_command(world: WorldState, cmd: Command) -> WorldState:
    src = world.field_source
    if isinstance(cmd, SetField):
        if isinstance(src, HelmholtzSource):
            src = HelmholtzSource(np.asarray(cmd.axis), cmd.magnitude_t,
                                  cmd.frequency_hz, cmd.sense)
        else:
            # a dipole's magnitude comes from geometry; axis steers the spin axis
            src = DipoleActuator(src.position, np.asarray(cmd.axis),
                                 src.moment_magnitude, cmd.frequency_hz, cmd.sense)
        return replace(world, field_source=src)
    if isinstance(cmd, MoveArm):
        if not isinstance(src, DipoleActuator):
            raise ScenarioError("MOVE_ARM requires a dipole actuator field source")
        src = move_actuator(src, cmd.translation_m, cmd.rotation_axis,
                            cmd.rotation_angle_rad)
        return replace(world, field_source=src)
    if isinstance(cmd, ToggleAspiration):
        if world.sheath is None:
            raise ScenarioError("TOGGLE_ASPIRATION requires a sheath")
        return replace(world, sheath=replace(world.sheath, aspiration_on=cmd.on))
    raise ScenarioError(f"unknown command {cmd!r}")


def _outgoing_candidates(network, node_id):
    out = []
    for seg in network.incident_segments(node_id):
        if seg.from_node == node_id:
            _, tangent, _ = vessels.segment_frame(network, seg.id, 0.0)
            out.append((seg.id, tangent, 0.0, 1))
        else:
            _, tangent, _ = vessels.segment_frame(network, seg.id, seg.length)
            out.append((seg.id, -tangent, seg.length, -1))
    return out


def _steering_direction(world: WorldState, field_sample: FieldSample, mode: Mode):
    if mode is Mode.SPIN:
        return propulsion_direction(world.spinner_spec, field_sample)
    return None  # advected: follow the flow


def _route(world: WorldState, state: SpinnerState, field_sample, mode,
           events: list[Event], tick: int) -> SpinnerState:
    """Resolve arc_s overshoot across junctions; clamp and report stalls."""
    network = world.network
    spec = world.spinner_spec
    prev_s = world.spinner.arc_s
    for _ in range(16):
        seg = network.segments[state.segment_id]
        if 0.0 <= state.arc_s <= seg.length:
            return state
        if state.arc_s > seg.length:
            node, overshoot, bound = seg.to_node, state.arc_s - seg.length, seg.length
        else:
            node, overshoot, bound = seg.from_node, -state.arc_s, 0.0
        candidates = _outgoing_candidates(network, node)
        others = [c for c in candidates if c[0] != seg.id]
        if not others:  # terminal node: park at the end
            state = replace(state, arc_s=bound)
            return state
        steer = _steering_direction(world, field_sample, mode)
        chosen = None
        if steer is not None:
            chosen = choose_branch([(c[0], c[1]) for c in others], steer,
                                   spec.alignment_cutoff)
        else:
            # passively advected: follow the strongest outgoing flow
            best_q = 0.0
            for seg_id, _, entry_s, direction in others:
                q = world.flow_field.segment_flow[seg_id] * direction
                if q > best_q:
                    best_q, chosen = q, seg_id
        if chosen is None:
            newly = abs(prev_s - bound) > 1e-12
            state = replace(state, arc_s=bound)
            if newly:
                events.append(Event("JUNCTION_STALL", tick, tick * world.dt,
                                    {"node": node}))
            return state
        entry = next(c for c in candidates if c[0] == chosen)
        _, _, entry_s, direction = entry
        state = replace(state, segment_id=chosen,
                        arc_s=entry_s + direction * overshoot,
                        travel_sign=direction)
        events.append(Event("JUNCTION_TAKEN", tick, tick * world.dt,
                            {"node": node, "segment": chosen}))
    return state


def _aspiration(world: WorldState, state: SpinnerState, graph,
                events: list[Event], tick: int) -> SpinnerState:
    sheath = world.sheath
    if sheath is None or not sheath.aspiration_on or state.mode is Mode.CAPTURED:
        return state
    target = (sheath.segment_id, sheath.arc_s)
    pose = (state.segment_id, state.arc_s)
    dist = path_distance(world.network, pose, target, graph)
    if dist > ASPIRATION_CAPTURE_RADIUS_M:
        return state
    if dist <= ASPIRATION_FINAL_RADIUS_M:
        events.append(Event("CAPTURED", tick, tick * world.dt,
                            {"distance_m": dist}))
        return replace(state, mode=Mode.CAPTURED)
    seg_id, s = move_toward(world.network, graph, pose, target,
                            ASPIRATION_PULL_SPEED_M_S * world.dt)
    return replace(state, segment_id=seg_id, arc_s=s)


def _spinner_in_sac(world: WorldState, state: SpinnerState,
                    sac: vessels.AneurysmSac) -> bool:
    if state.segment_id != sac.host_segment:
        return False
    window = max(sac.neck_radius, world.spinner_spec.body_length / 2.0)
    return abs(state.arc_s - sac.arc_position) <= window


def step(world: WorldState, commands: list[Command] | None = None,
         dt: float | None = None,
         graph: nx.Graph | None = None) -> tuple[WorldState, list[Event]]:
    """Advance the world one tick. Pure: the input world is not mutated."""
    dt = world.dt if dt is None else dt
    if dt != world.dt:
        raise ScenarioError("step dt must equal the world dt")
    graph = graph if graph is not None else node_graph(world.network)
    events: list[Event] = []
    tick = world.tick + 1
    t_next = tick * dt

    for cmd in commands or []:
        world = _apply_command(world, cmd)

    occlusion = {sid: therapy.occlusion_factor(sac) for sid, sac in world.sacs.items()}
    inflow = world.network.inflow
    q_in = vessels.inflow_waveform(world.time_s, inflow) if inflow else 0.0
    flow = vessels.solve_flow(world.network, world.resistances, q_in, occlusion)

    state = _refresh_position(world.network, world.spinner)
    sample = _sample_field(world.field_source, state.position)
    if state.mode is not Mode.CAPTURED:
        _, tangent, _ = vessels.segment_frame(world.network, state.segment_id,
                                              state.arc_s)
        u = vessels.local_velocity(world.network, flow, state.segment_id, state.arc_s)
        new_state = advance_spinner(state, world.spinner_spec, sample, u, tangent, dt)
        new_state = _route(replace(world, flow_field=flow), new_state, sample,
                           new_state.mode, events, tick)
        new_state = _aspiration(world, new_state, graph, events, tick)
        new_state = _refresh_position(world.network, new_state)
        if new_state.mode is not state.mode and new_state.mode is not Mode.CAPTURED:
            events.insert(0, Event("MODE_CHANGE", tick, t_next,
                                   {"from": state.mode.value,
                                    "to": new_state.mode.value}))
    else:
        new_state = state

    payload = world.payload
    prev_released = payload.released_fraction
    if payload.agent is not Agent.NONE:
        seal_was_intact = payload.seal.integrity > 0.0
        payload = replace(payload, seal=therapy.seal_step(payload.seal, True, dt))
        if seal_was_intact and payload.seal.integrity == 0.0:
            events.append(Event("SEAL_DISSOLVED", tick, t_next, {}))
        payload = therapy.release_step(payload, new_state.mode, dt)
        if prev_released < 0.999 <= payload.released_fraction:
            events.append(Event("RELEASE_COMPLETE", tick, t_next,
                                {"released": payload.released_fraction}))
    delta_mass = payload.loaded_mass * (payload.released_fraction - prev_released)

    sacs = {}
    for sid, sac_state in world.sacs.items():
        sac = world.network.sacs[sid]
        in_sac = _spinner_in_sac(world, new_state, sac)
        deposited = delta_mass if in_sac and payload.agent is Agent.COAGULANT else 0.0
        prev_occ = therapy.occlusion_factor(sac_state)
        sac_state = therapy.coagulation_step(sac_state, deposited,
                                             flow.sac_flow[sid], dt)
        sac_state = therapy.swell_step(sac_state,
                                       in_sac or not sac_state.coat_intact, dt)
        occ = therapy.occlusion_factor(sac_state)
        for level in _OCCLUSION_EVENT_LEVELS:
            if prev_occ < level <= occ:
                events.append(Event("SAC_OCCLUDED", tick, t_next,
                                    {"sac": sid, "level": level,
                                     "occlusion": occ}))
        sacs[sid] = sac_state

    new_world = replace(world, tick=tick, flow_field=flow, spinner=new_state,
                        payload=payload, sacs=sacs,
                        event_log=world.event_log + tuple(events))
    return new_world, events


# ---------------------------------------------------------------------------
# fluoroscopy projection

@dataclass(frozen=True, eq=False)
class FluoroScene:
    polylines: list[np.ndarray]  # (N, 2) per vessel segment
    marker_pair: np.ndarray  # (2, 2), projected spinner ends
    payload_opacity: float
    sac_overlays: list[dict]  # {"sac": id, "center": (2,), "fill": float}
    view: np.ndarray  # (2, 3) orthonormal basis rows


def fluoro_project(world: WorldState, view_basis) -> FluoroScene:
    basis = np.asarray(view_basis, dtype=float)
    if basis.shape != (2, 3) or not np.allclose(basis @ basis.T, np.eye(2),
                                                atol=1e-9):
        raise ValueError("view basis must be two orthonormal 3-vectors")
    polylines = [world.network.segments[sid].centerline @ basis.T
                 for sid in sorted(world.network.segments)]
    state = _refresh_position(world.network, world.spinner)
    _, tangent, _ = vessels.segment_frame(world.network, state.segment_id,
                                          state.arc_s)
    half = world.spinner_spec.body_length / 2.0
    ends = np.stack([state.position - half * tangent,
                     state.position + half * tangent])
    overlays = []
    for sid in sorted(world.sacs):
        sac = world.network.sacs[sid]
        center, _, _ = vessels.segment_frame(world.network, sac.host_segment,
                                             sac.arc_position)
        overlays.append({"sac": sid, "center": basis @ center,
                         "fill": therapy.occlusion_factor(world.sacs[sid])})
    opacity = ((1.0 - world.payload.released_fraction)
               if world.payload.agent is not Agent.NONE else 0.0)
    return FluoroScene(polylines, ends @ basis.T, opacity, overlays, basis)


# ---------------------------------------------------------------------------
# scenario loading

@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    network: vessels.VesselNetwork
    dt: float
    duration: float
    spinner_spec: SpinnerSpec
    initial_pose: tuple[int, float]
    initial_travel_sign: int
    field_source: HelmholtzSource | DipoleActuator
    payload: PayloadState
    sac_states: dict[int, SacTherapyState]
    sheath: Sheath | None
    target: tuple[int, float, float] | None  # segment, s, tolerance
    commands: tuple[tuple[int, Command], ...]  # (tick, command), tick-sorted
    viscosity: float
    view_basis: np.ndarray


def fixtures_dir() -> Path:
    env = os.environ.get(FIXTURES_ENV)
    if env:
        return Path(env)
    return Path(__file__).parent / "fixtures"


def _resolve_network(ref: str, base: Path | None) -> str:
    for candidate in ([base / ref] if base else []) + [Path(ref), fixtures_dir() / ref]:
        if candidate.is_file():
            return candidate.read_text()
    raise ScenarioError(f"network file not found: {ref}")


def _parse_command(raw: dict) -> Command:
    kind = raw.get("type")
    if kind == "SET_FIELD":
        sense = int(raw.get("sense", 1))
        if sense not in (1, -1):
            raise ScenarioError("sense must be +1 or -1")
        return SetField(tuple(float(x) for x in raw["axis"]),
                        float(raw["magnitude_mT"]) / MT_PER_T,
                        float(raw["frequency_rpm"]) / RPM_PER_HZ, sense)
    if kind == "MOVE_ARM":
        rot = raw.get("axis_rotation")
        return MoveArm(tuple(float(x) * 1e-3 for x in raw.get("translation_mm",
                                                              (0, 0, 0))),
                       tuple(float(x) for x in rot["axis"]) if rot else None,
                       math.radians(float(rot["angle_deg"])) if rot else 0.0)
    if kind == "TOGGLE_ASPIRATION":
        return ToggleAspiration(bool(raw["on"]))
    raise ScenarioError(f"unknown command type {kind!r}")


def _parse_field_source(raw: dict):
    kind = raw.get("type", "helmholtz")
    sense = int(raw.get("sense", 1))
    freq = float(raw.get("frequency_rpm", 0.0)) / RPM_PER_HZ
    if kind == "helmholtz":
        return HelmholtzSource(np.asarray(raw["axis"], dtype=float),
                               float(raw["magnitude_mT"]) / MT_PER_T, freq, sense)
    if kind == "dipole":
        return DipoleActuator(np.asarray(raw["position_mm"], dtype=float) * 1e-3,
                              np.asarray(raw["spin_axis"], dtype=float),
                              float(raw["moment_a_m2"]), freq, sense)
    raise ScenarioError(f"unknown field source type {kind!r}")


def load_scenario(document: str, base_dir: Path | None = None) -> Scenario:
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise ScenarioParseError(f"invalid JSON: {e}") from e

    try:
        network_text = _resolve_network(doc["network"], base_dir)
        network = vessels.load_network(network_text)
        if "inflow" in doc:
            # scenario-level override; null disables flow entirely
            override = doc["inflow"]
            inflow = None
            if override is not None:
                inflow = vessels.InflowSpec(
                    int(override["inlet_node"]),
                    float(override["mean_flow_ml_s"]) * 1e-6,
                    float(override["peak_ratio"]),
                    float(override["heart_rate_hz"]),
                    tuple(int(n) for n in override["outlet_nodes"]))
            network = vessels.VesselNetwork(network.nodes, network.segments,
                                            network.sacs, inflow)

        dt = float(doc.get("dt_s", 1e-3))
        duration = float(doc.get("duration_s", 1.0))
        if dt <= 0 or duration < dt:
            raise ScenarioError("need dt > 0 and duration >= dt")

        sp = doc.get("spinner", {})
        fit = None
        if "propulsion_fit" in sp:
            fit = PropulsionFit(float(sp["propulsion_fit"]["slope_m_s_per_hz"]),
                                float(sp["propulsion_fit"]["intercept_m_s"]))
        elif "calibration_samples" in sp:
            fit = calibrate_propulsion(
                [(float(rpm) / RPM_PER_HZ, float(cm) / 100.0)
                 for rpm, cm in sp["calibration_samples"]])
        else:
            fit = default_propulsion_fit()
        spec = SpinnerSpec(
            outer_diameter=float(sp.get("outer_diameter_mm", 2.5)) * 1e-3,
            body_length=float(sp.get("body_length_mm", 4.0)) * 1e-3,
            helix_handedness=int(sp.get("helix_handedness", 1)),
            propulsion_fit=fit,
            flow_coupling=float(sp.get("flow_coupling", 1.0)),
            idle_coupling=float(sp.get("idle_coupling", 1.0)),
            alignment_cutoff=math.radians(float(sp.get("alignment_cutoff_deg", 60.0))))

        pose_raw = doc["initial_pose"]
        pose = (int(pose_raw["segment"]), float(pose_raw["s_mm"]) * 1e-3)
        if pose[0] not in network.segments:
            raise ScenarioError(f"initial pose on unknown segment {pose[0]}")
        if not 0 <= pose[1] <= network.segments[pose[0]].length:
            raise ScenarioError("initial pose outside segment")
        travel = int(pose_raw.get("travel_sign", 1))

        source = _parse_field_source(doc.get("field_source",
                                             {"type": "helmholtz", "axis": [1, 0, 0],
                                              "magnitude_mT": 0.0}))

        pl = doc.get("payload")
        if pl:
            payload = PayloadState(
                agent=Agent[pl.get("agent", "MODEL_DYE")],
                loaded_mass=float(pl.get("loaded_mass_mg", 0.0)) * 1e-6,
                seal=SealState(1.0, float(pl.get("seal_time_s",
                                                 therapy.DEFAULT_SEAL_TIME_S))),
                flip_tau=float(pl.get("flip_tau_s", therapy.FLIP_RELEASE_TAU_S)),
                spin_tau=float(pl.get("spin_tau_s", therapy.SPIN_RELEASE_TAU_S)))
        else:
            payload = PayloadState()

        sac_states = {}
        therapy_cfg = doc.get("therapy", {}).get("sacs", {})
        for sid, sac in network.sacs.items():
            cfg = therapy_cfg.get(str(sid), {})
            swell_on = bool(cfg.get("swell", False))
            v0 = float(cfg.get("swell_initial_fraction", 0.05)) * sac.sac_volume
            sac_states[sid] = SacTherapyState(
                sac_id=sid, sac_volume=sac.sac_volume,
                coat_timer=float(cfg.get("coat_time_s", therapy.DEFAULT_COAT_TIME_S)),
                swell_volume=v0 if swell_on else 0.0,
                swell_capacity=sac.sac_volume if swell_on else 0.0,
                swell_tau=float(cfg.get("swell_tau_s", therapy.DEFAULT_SWELL_TAU_S)),
                clot_rate=float(cfg.get("clot_rate_m3_per_kg_s",
                                        therapy.DEFAULT_CLOT_RATE_M3_PER_KG_S)),
                clot_threshold=float(cfg.get("clot_threshold_kg_m3",
                                             therapy.DEFAULT_CLOT_THRESHOLD_KG_M3)))

        sheath = None
        if "sheath" in doc:
            sh = doc["sheath"]
            sheath = Sheath(int(sh["segment"]), float(sh["s_mm"]) * 1e-3,
                            bool(sh.get("aspiration_on", False)))

        target = None
        if "target" in doc:
            tg = doc["target"]
            target = (int(tg["segment"]), float(tg["s_mm"]) * 1e-3,
                      float(tg.get("tolerance_mm", 5.0)) * 1e-3)

        commands = []
        last_t = -math.inf
        for raw in doc.get("commands", []):
            t = float(raw["time_s"])
            if t < last_t:
                raise ScenarioError("commands must be time-sorted")
            last_t = t
            commands.append((int(round(t / dt)), _parse_command(raw)))

        view = np.asarray(doc.get("view_basis",
                                  [[1, 0, 0], [0, 1, 0]]), dtype=float)
        viscosity = float(doc.get("viscosity_pa_s", vessels.BLOOD_VISCOSITY_PA_S))
    except (KeyError, TypeError) as e:
        raise ScenarioError(f"scenario document malformed: {e}") from e

    return Scenario(str(doc.get("name", "scenario")), network, dt, duration, spec,
                    pose, travel, source, payload, sac_states, sheath, target,
                    tuple(commands), viscosity, view)


def initial_world(scenario: Scenario) -> WorldState:
    network = scenario.network
    res = vessels.build_resistances(network, scenario.viscosity)
    occ = {sid: therapy.occlusion_factor(s) for sid, s in scenario.sac_states.items()}
    q0 = vessels.inflow_waveform(0.0, network.inflow) if network.inflow else 0.0
    flow = vessels.solve_flow(network, res, q0, occ)
    state = SpinnerState(scenario.initial_pose[0], scenario.initial_pose[1],
                         travel_sign=scenario.initial_travel_sign)
    state = _refresh_position(network, state)
    return WorldState(0, scenario.dt, network, res, flow, state,
                      scenario.spinner_spec, scenario.field_source,
                      scenario.payload, dict(scenario.sac_states),
                      scenario.sheath)


# ---------------------------------------------------------------------------
# scenario runner and logs

@dataclass(frozen=True, eq=False)
class TrajectoryRow:
    tick: int
    time_s: float
    segment: int
    s_m: float
    x: float
    y: float
    z: float
    mode: str
    B_mT: float
    f_rpm: float
    released: float
    occlusion: dict[int, float]


@dataclass(frozen=True, eq=False)
class RunResult:
    scenario: Scenario
    trajectory: list[TrajectoryRow]
    events: list[Event]
    metrics: dict
    final_world: WorldState


def _row(world: WorldState) -> TrajectoryRow:
    state = world.spinner
    sample = _sample_field(world.field_source, state.position)
    return TrajectoryRow(
        tick=world.tick, time_s=world.time_s, segment=state.segment_id,
        s_m=state.arc_s, x=float(state.position[0]), y=float(state.position[1]),
        z=float(state.position[2]), mode=state.mode.value,
        B_mT=sample.magnitude * MT_PER_T, f_rpm=sample.frequency * RPM_PER_HZ,
        released=world.payload.released_fraction,
        occlusion={sid: therapy.occlusion_factor(s)
                   for sid, s in sorted(world.sacs.items())})


def run_scenario(scenario: Scenario,
                 max_flow_residual: float | None = None) -> RunResult:
    world = initial_world(scenario)
    graph = node_graph(world.network)
    n_steps = int(round(scenario.duration / scenario.dt))
    pending = list(scenario.commands)
    rows = [_row(world)]
    events: list[Event] = []
    q_ref = world.network.inflow.mean_flow if world.network.inflow else 1.0
    limit = max_flow_residual if max_flow_residual is not None else 1e-9 * q_ref
    start_pose = (world.spinner.segment_id, world.spinner.arc_s)
    time_to_target = None
    captured = False
    for _ in range(n_steps):
        due = []
        while pending and pending[0][0] <= world.tick:
            due.append(pending.pop(0)[1])
        world, emitted = step(world, due, graph=graph)
        if world.flow_field.residual > limit:
            raise vessels.TopologyError(
                f"flow conservation residual {world.flow_field.residual} "
                f"exceeds {limit}")
        events.extend(emitted)
        rows.append(_row(world))
        captured = captured or world.spinner.mode is Mode.CAPTURED
        if scenario.target and time_to_target is None:
            d = path_distance(world.network,
                              (world.spinner.segment_id, world.spinner.arc_s),
                              scenario.target[:2], graph)
            if d <= scenario.target[2]:
                time_to_target = world.time_s
    end_event = Event("SCENARIO_END", world.tick, world.time_s, {})
    events.append(end_event)
    world = replace(world, event_log=world.event_log + (end_event,))

    end_pose = (world.spinner.segment_id, world.spinner.arc_s)
    net_disp = path_distance(world.network, start_pose, end_pose, graph)
    metrics = {
        "duration_s": world.time_s,
        "net_path_displacement_m": net_disp,
        "mean_speed_m_s": net_disp / world.time_s if world.time_s else 0.0,
        "time_to_target_s": time_to_target,
        "released_fraction": world.payload.released_fraction,
        "captured": captured,
        "final_segment": world.spinner.segment_id,
        "final_s_m": world.spinner.arc_s,
        "sac_occlusion": {str(sid): therapy.occlusion_factor(s)
                          for sid, s in sorted(world.sacs.items())},
    }
    return RunResult(scenario, rows, events, metrics, world)


def trajectory_header(sac_ids) -> list[str]:
    return TRAJECTORY_BASE_COLUMNS + [f"occlusion_{sid}" for sid in sorted(sac_ids)]


def write_log(trajectory: list[TrajectoryRow], path) -> None:
    sac_ids = sorted(trajectory[0].occlusion) if trajectory else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_header(sac_ids))
        for row in trajectory:
            writer.writerow([row.tick, repr(row.time_s), row.segment,
                             repr(row.s_m), repr(row.x), repr(row.y), repr(row.z),
                             row.mode, repr(row.B_mT), repr(row.f_rpm),
                             repr(row.released)]
                            + [repr(row.occlusion[sid]) for sid in sac_ids])


def read_log(path) -> list[TrajectoryRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LogSchemaError("empty file, missing header") from None
        if header[:len(TRAJECTORY_BASE_COLUMNS)] != TRAJECTORY_BASE_COLUMNS:
            raise LogSchemaError(f"unexpected header {header!r}")
        sac_ids = []
        for col in header[len(TRAJECTORY_BASE_COLUMNS):]:
            if not col.startswith("occlusion_"):
                raise LogSchemaError(f"unexpected column {col!r}")
            sac_ids.append(int(col.removeprefix("occlusion_")))
        rows = []
        for raw in reader:
            if len(raw) != len(header):
                raise LogSchemaError(f"truncated row: {raw!r}")
            try:
                rows.append(TrajectoryRow(
                    tick=int(raw[0]), time_s=float(raw[1]), segment=int(raw[2]),
                    s_m=float(raw[3]), x=float(raw[4]), y=float(raw[5]),
                    z=float(raw[6]), mode=raw[7], B_mT=float(raw[8]),
                    f_rpm=float(raw[9]), released=float(raw[10]),
                    occlusion={sid: float(v) for sid, v
                               in zip(sac_ids, raw[11:])}))
            except ValueError as e:
                raise LogSchemaError(f"bad row {raw!r}: {e}") from e
    return rows


def write_events(events: list[Event], path) -> None:
    with open(path, "w") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")


def write_metrics(metrics: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
