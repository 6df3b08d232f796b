"""Teleoperation wire protocol "vasim/1".

Frames are JSON objects, one per WebSocket text message, encoded canonically
(sorted keys, no whitespace) so golden frames can be compared byte for byte.
Units on the wire are clinical (mT, rpm, mm); conversion to SI happens at this
boundary only.
"""

from __future__ import annotations

import json
import math

from . import sim, therapy, vessels
from .spinner import Mode

PROTOCOL_VERSION = "vasim/1"

MAGNITUDE_MT_RANGE = (0.0, 50.0)
FREQUENCY_RPM_RANGE = (0.0, 15000.0)

CLIENT_FRAME_TYPES = {"HELLO", "SET_FIELD", "MOVE_ARM", "TOGGLE_ASPIRATION",
                      "PAUSE", "SELECT_SCENARIO", "RESET",
                      "REQUEST_TOKEN", "RELEASE_TOKEN"}


class ProtocolError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def encode(frame: dict) -> str:
    """Canonical frame encoding: sorted keys, compact separators."""
    return json.dumps(frame, sort_keys=True, separators=(",", ":"))


def decode(text: str) -> dict:
    try:
        frame = json.loads(text)
    except json.JSONDecodeError as e:
        raise ProtocolError("malformed-json", str(e)) from e
    if not isinstance(frame, dict) or "type" not in frame:
        raise ProtocolError("malformed-frame", "frame must be an object with a 'type'")
    if frame["type"] not in CLIENT_FRAME_TYPES:
        raise ProtocolError("unknown-type", f"unknown frame type {frame['type']!r}")
    return frame


def _check_range(name: str, value, lo: float, hi: float) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError) as e:
        raise ProtocolError("bad-value", f"{name} must be a number") from e
    if not lo <= value <= hi:
        raise ProtocolError("range-violation",
                            f"{name}={value} outside [{lo}, {hi}]")
    return value


def _unit_axis(raw) -> tuple[float, float, float]:
    try:
        axis = [float(x) for x in raw]
    except (TypeError, ValueError) as e:
        raise ProtocolError("bad-value", "axis must be three numbers") from e
    if len(axis) != 3:
        raise ProtocolError("bad-value", "axis must have three components")
    norm = math.sqrt(sum(x * x for x in axis))
    if norm == 0 or not math.isfinite(norm):
        raise ProtocolError("bad-value", "axis must be a nonzero finite vector")
    return tuple(x / norm for x in axis)


def command_from_frame(frame: dict) -> sim.Command:
    """Validate a command frame and convert it to an SI simulation command."""
    kind = frame["type"]
    if kind == "SET_FIELD":
        axis = _unit_axis(frame.get("axis"))
        mag = _check_range("magnitude_mT", frame.get("magnitude_mT"),
                           *MAGNITUDE_MT_RANGE)
        freq = _check_range("frequency_rpm", frame.get("frequency_rpm"),
                            *FREQUENCY_RPM_RANGE)
        sense = frame.get("sense", 1)
        if sense not in (1, -1):
            raise ProtocolError("bad-value", "sense must be +1 or -1")
        return sim.SetField(axis, mag / sim.MT_PER_T, freq / sim.RPM_PER_HZ,
                            int(sense))
    if kind == "MOVE_ARM":
        try:
            translation = tuple(float(x) * 1e-3
                                for x in frame.get("translation_mm", (0, 0, 0)))
        except (TypeError, ValueError) as e:
            raise ProtocolError("bad-value", "translation_mm must be numbers") from e
        if len(translation) != 3:
            raise ProtocolError("bad-value", "translation_mm must have 3 components")
        rot = frame.get("axis_rotation")
        if rot is None:
            return sim.MoveArm(translation)
        axis = _unit_axis(rot.get("axis"))
        angle = _check_range("angle_deg", rot.get("angle_deg"), -360.0, 360.0)
        return sim.MoveArm(translation, axis, math.radians(angle))
    if kind == "TOGGLE_ASPIRATION":
        if not isinstance(frame.get("on"), bool):
            raise ProtocolError("bad-value", "TOGGLE_ASPIRATION needs boolean 'on'")
        return sim.ToggleAspiration(frame["on"])
    raise ProtocolError("unknown-type", f"{kind} is not a world command")


def hello_ack(scenarios: list[str], token: bool) -> dict:
    return {"type": "HELLO_ACK", "protocol": PROTOCOL_VERSION,
            "scenarios": scenarios, "token": token}


def error_frame(code: str, message: str) -> dict:
    return {"type": "ERROR", "code": code, "message": message}


def ack_frame(for_type: str, tick: int) -> dict:
    return {"type": "ACK", "for": for_type, "tick": tick}


def _round6(x: float) -> float:
    return round(float(x), 6)


def snapshot_frame(world: sim.WorldState, view_basis,
                   recent_events: list[sim.Event]) -> dict:
    """Self-contained snapshot: renderable without any history."""
    scene = sim.fluoro_project(world, view_basis)
    state = world.spinner
    sample = sim._sample_field(world.field_source, state.position)
    u = 0.0
    if state.mode is not Mode.CAPTURED:
        u = vessels.local_velocity(world.network, world.flow_field,
                                   state.segment_id, state.arc_s)
    return {
        "type": "SNAPSHOT",
        "tick": world.tick,
        "time_s": _round6(world.time_s),
        "mode": state.mode.value,
        "field": {
            "magnitude_mT": _round6(sample.magnitude * sim.MT_PER_T),
            "frequency_rpm": _round6(sample.frequency * sim.RPM_PER_HZ),
            "axis": [_round6(x) for x in sample.rotation_axis],
            "sense": sample.sense,
        },
        "spinner": {
            "segment": state.segment_id,
            "s_mm": _round6(state.arc_s * 1e3),
            "position_mm": [_round6(x * 1e3) for x in state.position],
        },
        "fluoro": {
            "polylines_mm": [[[_round6(x * 1e3), _round6(y * 1e3)]
                              for x, y in line] for line in scene.polylines],
            "marker_pair_mm": [[_round6(x * 1e3), _round6(y * 1e3)]
                               for x, y in scene.marker_pair],
            "payload_opacity": _round6(scene.payload_opacity),
            "sacs": [{"sac": o["sac"],
                      "center_mm": [_round6(x * 1e3) for x in o["center"]],
                      "fill": _round6(o["fill"])} for o in scene.sac_overlays],
        },
        "metrics": {
            "flow_speed_mm_s": _round6(u * 1e3),
            "released": _round6(world.payload.released_fraction),
            "occlusion": {str(sid): _round6(therapy.occlusion_factor(s))
                          for sid, s in sorted(world.sacs.items())},
        },
        "events": [{"kind": e.kind, "tick": e.tick,
                    "time_s": _round6(e.time_s), "data": e.data}
                   for e in recent_events],
    }
