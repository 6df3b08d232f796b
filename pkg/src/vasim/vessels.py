"""Vessel network geometry and lumped-parameter pulsatile flow.

The network is a graph of constant-radius centerline segments with optional
aneurysm sacs hanging off host segments. Flow is quasi-steady: at each instant
the Poiseuille resistor network is re-solved against the current inflow, so
there is no fluid inertance or wall compliance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

# Blood-mimicking fluid defaults (phantom fluid properties are assumptions,
# override per scenario).
BLOOD_VISCOSITY_PA_S = 3.5e-3
BLOOD_DENSITY_KG_M3 = 1050.0

# Fraction of host flow exchanged through a fully open sac neck.
SAC_EXCHANGE_COEFF = 0.05

_ENDPOINT_TOL_M = 1e-9


class NetworkError(ValueError):
    """Base class for vessel-network validation failures."""


class NetworkParseError(NetworkError):
    """Document is not valid JSON or violates the file schema."""


class DanglingReferenceError(NetworkError):
    """A segment or sac references an id that does not exist."""


class InvalidGeometryError(NetworkError):
    """A geometric or physical invariant is violated (radius, length, ...)."""


class DisconnectedInletError(NetworkError):
    """Some node is unreachable from the inlet."""


class TopologyError(NetworkError):
    """The flow system is singular (no outlet reachable)."""


@dataclass(frozen=True, eq=False)
class Node:
    id: int
    position: np.ndarray  # (3,) meters

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise InvalidGeometryError(f"node {self.id}: position must be a finite 3-vector")
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True, eq=False)
class Segment:
    id: int
    from_node: int
    to_node: int
    centerline: np.ndarray  # (N, 3) meters, N >= 2
    radius: float  # meters

    # derived, filled in __post_init__
    length: float = field(init=False)
    _cum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 3:
            raise InvalidGeometryError(f"segment {self.id}: centerline needs >=2 3-points")
        if not np.all(np.isfinite(pts)):
            raise InvalidGeometryError(f"segment {self.id}: non-finite centerline point")
        if self.radius <= 0:
            raise InvalidGeometryError(f"segment {self.id}: radius must be > 0")
        steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        if np.any(steps == 0):
            raise InvalidGeometryError(f"segment {self.id}: repeated centerline point")
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "length", float(cum[-1]))

    @property
    def area(self) -> float:
        return math.pi * self.radius**2


@dataclass(frozen=True)
class AneurysmSac:
    id: int
    host_segment: int
    arc_position: float  # meters along host
    neck_radius: float
    neck_length: float
    sac_volume: float  # m^3

    def __post_init__(self):
        if self.neck_radius <= 0 or self.neck_length <= 0:
            raise InvalidGeometryError(f"sac {self.id}: neck dimensions must be > 0")
        if self.sac_volume <= 0:
            raise InvalidGeometryError(f"sac {self.id}: sac_volume must be > 0")


@dataclass(frozen=True)
class InflowSpec:
    inlet_node: int
    mean_flow: float  # m^3/s
    peak_ratio: float
    heart_rate: float  # Hz
    outlet_nodes: tuple[int, ...]

    # rectified-sine shape coefficients, solved from (mean, peak)
    amplitude: float = field(init=False)
    baseline: float = field(init=False)

    def __post_init__(self):
        if self.mean_flow <= 0:
            raise InvalidGeometryError("inflow: mean_flow must be > 0")
        if self.peak_ratio < 1:
            raise InvalidGeometryError("inflow: peak_ratio must be >= 1")
        if self.heart_rate < 0:
            raise InvalidGeometryError("inflow: heart_rate must be >= 0")
        if not self.outlet_nodes:
            raise InvalidGeometryError("inflow: at least one outlet node required")
        a = (self.peak_ratio - 1.0) / (1.0 - 1.0 / math.pi)
        c = 1.0 - a / math.pi
        if c < 0:
            raise InvalidGeometryError(
                f"inflow: peak_ratio {self.peak_ratio} forces retrograde flow "
                f"(limit is pi)"
            )
        object.__setattr__(self, "amplitude", a)
        object.__setattr__(self, "baseline", c)


@dataclass(frozen=True, eq=False)
class VesselNetwork:
    nodes: dict[int, Node]
    segments: dict[int, Segment]
    sacs: dict[int, AneurysmSac]
    inflow: InflowSpec | None

    def incident_segments(self, node_id: int) -> list[Segment]:
        return [s for s in self.segments.values()
                if s.from_node == node_id or s.to_node == node_id]


@dataclass(frozen=True)
class Resistances:
    segment: dict[int, float]  # Pa.s/m^3
    sac_neck: dict[int, float]


@dataclass(frozen=True, eq=False)
class FlowField:
    segment_flow: dict[int, float]  # m^3/s, signed along centerline direction
    node_pressure: dict[int, float]  # Pa
    sac_flow: dict[int, float]  # exchange flow magnitude through each neck
    residual: float  # worst nodal conservation residual, m^3/s


def _require_keys(obj: dict, allowed: set[str], required: set[str], what: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise NetworkParseError(f"{what}: unknown keys {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise NetworkParseError(f"{what}: missing keys {sorted(missing)}")


def load_network(document: str) -> VesselNetwork:
    """Parse a network-description document (mm / mL units) into SI."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise NetworkParseError(f"invalid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise NetworkParseError("top level must be an object")
    _require_keys(doc, {"nodes", "segments", "sacs", "inflow"}, {"nodes", "segments"},
                  "network")

    nodes: dict[int, Node] = {}
    for raw in doc["nodes"]:
        _require_keys(raw, {"id", "position_mm"}, {"id", "position_mm"}, "node")
        nid = int(raw["id"])
        if nid in nodes:
            raise NetworkParseError(f"duplicate node id {nid}")
        nodes[nid] = Node(nid, np.asarray(raw["position_mm"], dtype=float) * 1e-3)

    segments: dict[int, Segment] = {}
    for raw in doc["segments"]:
        _require_keys(raw, {"id", "from_node", "to_node", "centerline_mm", "radius_mm"},
                      {"id", "from_node", "to_node", "centerline_mm", "radius_mm"},
                      "segment")
        sid = int(raw["id"])
        if sid in segments:
            raise NetworkParseError(f"duplicate segment id {sid}")
        fro, to = int(raw["from_node"]), int(raw["to_node"])
        for ref in (fro, to):
            if ref not in nodes:
                raise DanglingReferenceError(f"segment {sid} references unknown node {ref}")
        seg = Segment(sid, fro, to,
                      np.asarray(raw["centerline_mm"], dtype=float) * 1e-3,
                      float(raw["radius_mm"]) * 1e-3)
        for nid, pt in ((fro, seg.centerline[0]), (to, seg.centerline[-1])):
            if np.linalg.norm(nodes[nid].position - pt) > _ENDPOINT_TOL_M:
                raise InvalidGeometryError(
                    f"segment {sid}: centerline endpoint does not coincide with node {nid}")
        segments[sid] = seg

    sacs: dict[int, AneurysmSac] = {}
    for raw in doc.get("sacs", []):
        _require_keys(raw, {"id", "host_segment", "arc_position_mm", "neck_radius_mm",
                            "neck_length_mm", "sac_volume_ml"},
                      {"id", "host_segment", "arc_position_mm", "neck_radius_mm",
                       "neck_length_mm", "sac_volume_ml"}, "sac")
        kid = int(raw["id"])
        host = int(raw["host_segment"])
        if host not in segments:
            raise DanglingReferenceError(f"sac {kid} references unknown segment {host}")
        sac = AneurysmSac(kid, host,
                          float(raw["arc_position_mm"]) * 1e-3,
                          float(raw["neck_radius_mm"]) * 1e-3,
                          float(raw["neck_length_mm"]) * 1e-3,
                          float(raw["sac_volume_ml"]) * 1e-6)
        if not 0.0 <= sac.arc_position <= segments[host].length:
            raise InvalidGeometryError(f"sac {kid}: arc_position outside host segment")
        sacs[kid] = sac

    inflow = None
    if doc.get("inflow") is not None:
        raw = doc["inflow"]
        _require_keys(raw, {"inlet_node", "mean_flow_ml_s", "peak_ratio",
                            "heart_rate_hz", "outlet_nodes"},
                      {"inlet_node", "mean_flow_ml_s", "peak_ratio",
                       "heart_rate_hz", "outlet_nodes"}, "inflow")
        inlet = int(raw["inlet_node"])
        outlets = tuple(int(n) for n in raw["outlet_nodes"])
        for ref in (inlet, *outlets):
            if ref not in nodes:
                raise DanglingReferenceError(f"inflow references unknown node {ref}")
        inflow = InflowSpec(inlet, float(raw["mean_flow_ml_s"]) * 1e-6,
                            float(raw["peak_ratio"]), float(raw["heart_rate_hz"]),
                            outlets)

    net = VesselNetwork(nodes, segments, sacs, inflow)

    # connectivity from the inlet (or from any node when no inflow is given)
    start = inflow.inlet_node if inflow is not None else next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        n = stack.pop()
        for seg in net.incident_segments(n):
            other = seg.to_node if seg.from_node == n else seg.from_node
            if other not in seen:
                seen.add(other)
                stack.append(other)
    if seen != set(nodes):
        raise DisconnectedInletError(
            f"nodes {sorted(set(nodes) - seen)} unreachable from node {start}")
    return net


def segment_frame(network: VesselNetwork, segment_id: int, s: float):
    """Point, unit tangent and radius at arc length ``s`` along a segment."""
    seg = network.segments[segment_id]
    if not 0.0 <= s <= seg.length:
        raise ValueError(f"s={s} outside [0, {seg.length}] on segment {segment_id}")
    i = int(np.searchsorted(seg._cum, s, side="right")) - 1
    i = min(max(i, 0), len(seg._cum) - 2)
    p0, p1 = seg.centerline[i], seg.centerline[i + 1]
    span = seg._cum[i + 1] - seg._cum[i]
    frac = (s - seg._cum[i]) / span
    point = p0 + frac * (p1 - p0)
    tangent = (p1 - p0) / span
    return point, tangent, seg.radius


def poiseuille_resistance(length: float, radius: float, viscosity: float) -> float:
    return 8.0 * viscosity * length / (math.pi * radius**4)


def build_resistances(network: VesselNetwork,
                      viscosity: float = BLOOD_VISCOSITY_PA_S) -> Resistances:
    if viscosity <= 0:
        raise ValueError("viscosity must be > 0")
    seg_r = {s.id: poiseuille_resistance(s.length, s.radius, viscosity)
             for s in network.segments.values()}
    sac_r = {k.id: poiseuille_resistance(k.neck_length, k.neck_radius, viscosity)
             for k in network.sacs.values()}
    return Resistances(seg_r, sac_r)


def inflow_waveform(t: float, spec: InflowSpec) -> float:
    """Rectified-sine inflow with exact period mean and peak ratio."""
    pulse = max(0.0, math.sin(2.0 * math.pi * spec.heart_rate * t))
    return spec.mean_flow * (spec.baseline + spec.amplitude * pulse)


def solve_flow(network: VesselNetwork, resistances: Resistances, q_in: float,
               occlusion: dict[int, float] | None = None,
               kappa_sac: float = SAC_EXCHANGE_COEFF) -> FlowField:
    """Quasi-steady nodal solve of the resistor network at one instant.

    Sac necks carry an exchange flow (equal volumes in and out, no net flow),
    estimated from the host segment flow and scaled by ``1 - occlusion``.
    """
    occlusion = occlusion or {}
    inflow = network.inflow
    if inflow is None:
        seg_flow = {sid: 0.0 for sid in network.segments}
        pressures = {nid: 0.0 for nid in network.nodes}
        sac_flow = {kid: 0.0 for kid in network.sacs}
        return FlowField(seg_flow, pressures, sac_flow, 0.0)

    outlet = set(inflow.outlet_nodes)
    unknown = [nid for nid in network.nodes if nid not in outlet]
    index = {nid: i for i, nid in enumerate(unknown)}
    n = len(unknown)
    g_mat = np.zeros((n, n))
    rhs = np.zeros(n)
    for seg in network.segments.values():
        g = 1.0 / resistances.segment[seg.id]
        a, b = seg.from_node, seg.to_node
        ia, ib = index.get(a), index.get(b)
        if ia is not None:
            g_mat[ia, ia] += g
            if ib is not None:
                g_mat[ia, ib] -= g
        if ib is not None:
            g_mat[ib, ib] += g
            if ia is not None:
                g_mat[ib, ia] -= g
    if inflow.inlet_node in index:
        rhs[index[inflow.inlet_node]] += q_in
    try:
        p = np.linalg.solve(g_mat, rhs) if n else np.zeros(0)
    except np.linalg.LinAlgError as e:
        raise TopologyError("flow system singular: no outlet reachable") from e

    pressures = {nid: 0.0 for nid in outlet}
    pressures.update({nid: float(p[i]) for nid, i in index.items()})
    seg_flow = {}
    for seg in network.segments.values():
        dp = pressures[seg.from_node] - pressures[seg.to_node]
        seg_flow[seg.id] = dp / resistances.segment[seg.id]

    # nodal conservation residual (outlets and the inlet carry boundary flow)
    residual = 0.0
    for nid in network.nodes:
        if nid in outlet:
            continue
        net_q = q_in if nid == inflow.inlet_node else 0.0
        for seg in network.incident_segments(nid):
            net_q += seg_flow[seg.id] if seg.to_node == nid else -seg_flow[seg.id]
        residual = max(residual, abs(net_q))

    sac_flow = {}
    for sac in network.sacs.values():
        host = network.segments[sac.host_segment]
        open_frac = 1.0 - min(max(occlusion.get(sac.id, 0.0), 0.0), 1.0)
        sac_flow[sac.id] = (open_frac * kappa_sac * abs(seg_flow[host.id])
                            * (sac.neck_radius / host.radius) ** 2)
    return FlowField(seg_flow, pressures, sac_flow, residual)


def local_velocity(network: VesselNetwork, flow: FlowField,
                   segment_id: int, s: float) -> float:
    """Signed mean axial velocity at a location, along the local tangent."""
    seg = network.segments[segment_id]
    if not 0.0 <= s <= seg.length:
        raise ValueError(f"s={s} outside segment {segment_id}")
    return flow.segment_flow[segment_id] / seg.area
