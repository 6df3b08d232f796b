import dataclasses
import json
import math

import numpy as np
import pytest

from vasim import sim, vessels
from vasim.spinner import Mode
from vasim.therapy import Agent

from conftest import FIXTURES, load_fixture_scenario


def _world(name="quiescent_swim"):
    return sim.initial_world(load_fixture_scenario(name))


class TestPathGeometry:
    def test_same_segment(self, cerebral_network):
        d = sim.path_distance(cerebral_network, (0, 0.010), (0, 0.025))
        assert d == pytest.approx(0.015, rel=1e-12)

    def test_across_junction(self, cerebral_network):
        # segment 0 is 40 mm; 5 mm from its end to 7 mm into segment 1
        d = sim.path_distance(cerebral_network, (0, 0.035), (1, 0.007))
        assert d == pytest.approx(0.012, rel=1e-9)

    def test_symmetry(self, cerebral_network):
        a, b = (0, 0.012), (2, 0.020)
        assert sim.path_distance(cerebral_network, a, b) == pytest.approx(
            sim.path_distance(cerebral_network, b, a), rel=1e-12)

    def test_move_toward_within_segment(self, cerebral_network):
        g = sim.node_graph(cerebral_network)
        pose = sim.move_toward(cerebral_network, g, (0, 0.010), (0, 0.030), 0.005)
        assert pose == (0, pytest.approx(0.015))

    def test_move_toward_does_not_overshoot(self, cerebral_network):
        g = sim.node_graph(cerebral_network)
        pose = sim.move_toward(cerebral_network, g, (0, 0.029), (0, 0.030), 0.005)
        assert pose == (0, pytest.approx(0.030))

    def test_move_toward_crosses_junction(self, cerebral_network):
        g = sim.node_graph(cerebral_network)
        seg, s = sim.move_toward(cerebral_network, g, (0, 0.038), (1, 0.010), 0.005)
        assert seg == 1
        assert s == pytest.approx(0.003, rel=1e-9)


class TestStep:
    def test_quiescent_idle_fixed_point(self):
        # still fluid, field off, no payload: only the clock advances
        scenario = load_fixture_scenario("quiescent_swim")
        world = dataclasses.replace(
            sim.initial_world(scenario),
            field_source=dataclasses.replace(scenario.field_source,
                                             magnitude=0.0))
        nxt, events = sim.step(world)
        assert events == []
        assert nxt.tick == 1
        assert nxt.spinner.arc_s == world.spinner.arc_s
        assert nxt.spinner.mode is Mode.IDLE
        assert nxt.payload == world.payload
        assert nxt.sacs == world.sacs

    def test_step_is_pure(self):
        world = _world()
        tick0, s0 = world.tick, world.spinner.arc_s
        sim.step(world)
        assert world.tick == tick0 and world.spinner.arc_s == s0

    def test_step_deterministic(self):
        a, _ = sim.step(_world())
        b, _ = sim.step(_world())
        assert a.spinner.arc_s == b.spinner.arc_s  # bit-identical
        assert a.flow_field.segment_flow == b.flow_field.segment_flow

    def test_time_is_exact_tick_multiple(self):
        world = _world()
        for _ in range(7):
            world, _ = sim.step(world)
        assert world.time_s == 7 * world.dt

    def test_mode_change_event_on_first_step(self):
        world = _world()  # field on from t=0, spinner starts IDLE
        nxt, events = sim.step(world)
        kinds = [e.kind for e in events]
        assert "MODE_CHANGE" in kinds
        change = next(e for e in events if e.kind == "MODE_CHANGE")
        assert change.data == {"from": "IDLE", "to": "SPIN"}
        assert nxt.spinner.mode is Mode.SPIN

    def test_swim_speed_in_still_fluid(self):
        world = _world()
        s0 = world.spinner.arc_s
        for _ in range(100):
            world, _ = sim.step(world)
        # 8.4k rpm -> ~0.15046 m/s for 0.1 s
        assert world.spinner.arc_s - s0 == pytest.approx(0.015046, rel=1e-3)

    def test_dt_mismatch_rejected(self):
        with pytest.raises(sim.ScenarioError):
            sim.step(_world(), dt=0.5)

    def test_set_field_command_applies_before_dynamics(self):
        world = _world()
        cmd = sim.SetField((1.0, 0.0, 0.0), 0.0, 0.0, 1)
        nxt, events = sim.step(world, [cmd])
        assert nxt.spinner.mode is Mode.IDLE
        assert nxt.spinner.arc_s == world.spinner.arc_s

    def test_toggle_aspiration_requires_sheath(self):
        with pytest.raises(sim.ScenarioError):
            sim.step(_world(), [sim.ToggleAspiration(True)])

    def test_move_arm_requires_dipole(self):
        with pytest.raises(sim.ScenarioError):
            sim.step(_world(), [sim.MoveArm((0.001, 0.0, 0.0))])


class TestJunctions:
    def test_branch_taken_event(self):
        scenario = load_fixture_scenario("branch_navigation")
        result = sim.run_scenario(scenario)
        taken = [e for e in result.events if e.kind == "JUNCTION_TAKEN"]
        assert taken and taken[0].data["segment"] == 1

    def test_sense_reversal_returns(self):
        scenario = load_fixture_scenario("branch_navigation")
        result = sim.run_scenario(scenario)
        taken = [e for e in result.events if e.kind == "JUNCTION_TAKEN"]
        assert [e.data["segment"] for e in taken[:2]] == [1, 0]

    def test_stall_at_perpendicular_junction(self, pulmonary_network):
        # aim the thrust perpendicular to both branches at the bifurcation
        scenario = load_fixture_scenario("branch_navigation")
        world = sim.initial_world(scenario)
        world = dataclasses.replace(
            world,
            spinner=dataclasses.replace(world.spinner, arc_s=0.0599),
            field_source=dataclasses.replace(world.field_source,
                                             rotation_axis=np.array([0.0, 0.0, 1.0])))
        seg_len = world.network.segments[0].length
        stall_events = 0
        for _ in range(50):
            world, events = sim.step(world)
            stall_events += sum(e.kind == "JUNCTION_STALL" for e in events)
        # flow advection carries the spinner to the node, but thrust is
        # perpendicular to both branches: park at the junction, report once
        assert stall_events == 1
        assert world.spinner.segment_id == 0
        assert world.spinner.arc_s == seg_len
        # with the thrust along +x both branches are 40 deg away, within cutoff
        world = sim.initial_world(scenario)
        world = dataclasses.replace(
            world, spinner=dataclasses.replace(world.spinner, arc_s=0.0599))
        for _ in range(50):
            world, events = sim.step(world)
            if any(e.kind == "JUNCTION_TAKEN" for e in events):
                break
        assert world.spinner.segment_id in (1, 2)

    def test_terminal_node_clamps(self):
        scenario = load_fixture_scenario("quiescent_swim")
        world = sim.initial_world(scenario)
        seg = world.network.segments[world.spinner.segment_id]
        world = dataclasses.replace(
            world, spinner=dataclasses.replace(world.spinner,
                                               arc_s=seg.length - 1e-4))
        world, _ = sim.step(world)
        assert world.spinner.arc_s == seg.length


class TestAspiration:
    def _roundtrip_world(self):
        return sim.initial_world(load_fixture_scenario("cerebral_roundtrip"))

    def test_capture_event_and_absorbing_mode(self):
        result = sim.run_scenario(load_fixture_scenario("cerebral_roundtrip"))
        captured = [e for e in result.events if e.kind == "CAPTURED"]
        assert len(captured) == 1
        assert captured[0].data["distance_m"] <= sim.ASPIRATION_FINAL_RADIUS_M
        assert result.final_world.spinner.mode is Mode.CAPTURED
        assert result.metrics["captured"] is True
        # pose frozen after capture
        cap_tick = captured[0].tick
        frozen = [r for r in result.trajectory if r.tick >= cap_tick]
        assert all(r.s_m == frozen[0].s_m and r.segment == frozen[0].segment
                   for r in frozen)

    def test_no_pull_outside_radius(self):
        world = self._roundtrip_world()
        world = dataclasses.replace(
            world,
            sheath=dataclasses.replace(world.sheath, aspiration_on=True),
            spinner=dataclasses.replace(world.spinner,
                                        arc_s=world.sheath.arc_s + 0.010))
        d0 = sim.path_distance(world.network,
                               (world.spinner.segment_id, world.spinner.arc_s),
                               (world.sheath.segment_id, world.sheath.arc_s))
        assert d0 > sim.ASPIRATION_CAPTURE_RADIUS_M
        nxt, events = sim.step(world, [sim.SetField((1, 0, 0), 0.0, 0.0, 1)])
        assert not any(e.kind == "CAPTURED" for e in events)

    def test_pull_speed_within_radius(self):
        world = self._roundtrip_world()
        world = dataclasses.replace(
            world,
            sheath=dataclasses.replace(world.sheath, aspiration_on=True),
            spinner=dataclasses.replace(world.spinner,
                                        arc_s=world.sheath.arc_s + 0.004),
            field_source=dataclasses.replace(world.field_source, magnitude=0.0))
        # flow is live; isolate the aspiration pull by comparing against the
        # same step without aspiration
        off = dataclasses.replace(
            world, sheath=dataclasses.replace(world.sheath, aspiration_on=False))
        on_next, _ = sim.step(world)
        off_next, _ = sim.step(off)
        pulled = off_next.spinner.arc_s - on_next.spinner.arc_s
        assert pulled == pytest.approx(sim.ASPIRATION_PULL_SPEED_M_S * world.dt,
                                       rel=1e-6)


class TestTherapyIntegration:
    def test_seal_then_release_events(self):
        result = sim.run_scenario(load_fixture_scenario("targeted_release"))
        kinds = [e.kind for e in result.events]
        assert "SEAL_DISSOLVED" in kinds
        seal_ev = next(e for e in result.events if e.kind == "SEAL_DISSOLVED")
        assert seal_ev.time_s == pytest.approx(5.0, abs=0.01)
        assert result.metrics["released_fraction"] > 0.95
        # nothing released before the seal went
        before = [r for r in result.trajectory if r.time_s < seal_ev.time_s - 1e-9]
        assert all(r.released == 0.0 for r in before)

    def test_occlusion_events_in_order(self):
        result = sim.run_scenario(load_fixture_scenario("coagulation_embolization"))
        occl = [e for e in result.events if e.kind == "SAC_OCCLUDED"]
        levels = [e.data["level"] for e in occl]
        assert levels == sorted(levels)
        assert 0.9 in levels

    def test_occlusion_chokes_sac_exchange(self):
        result = sim.run_scenario(load_fixture_scenario("coagulation_embolization"))
        world = result.final_world
        occ = result.metrics["sac_occlusion"]["0"]
        assert occ > 0.9
        # sac exchange flow in the final world reflects the occlusion
        fresh = vessels.solve_flow(world.network, world.resistances,
                                   vessels.inflow_waveform(world.time_s,
                                                           world.network.inflow),
                                   {0: 0.0})
        assert world.flow_field.sac_flow[0] <= (1 - occ) * fresh.sac_flow[0] * 1.001


class TestFluoroProjection:
    def test_orthonormal_basis_required(self):
        with pytest.raises(ValueError):
            sim.fluoro_project(_world(), [[1, 0, 0], [1, 0, 0]])
        with pytest.raises(ValueError):
            sim.fluoro_project(_world(), [[2, 0, 0], [0, 1, 0]])

    def test_identity_view_drops_z(self):
        world = _world()
        scene = sim.fluoro_project(world, [[1, 0, 0], [0, 1, 0]])
        assert len(scene.polylines) == len(world.network.segments)
        pos = world.spinner.position
        mid = scene.marker_pair.mean(axis=0)
        assert mid == pytest.approx([pos[0], pos[1]])

    def test_marker_pair_spans_body_length(self):
        world = _world()
        scene = sim.fluoro_project(world, [[1, 0, 0], [0, 1, 0]])
        gap = np.linalg.norm(scene.marker_pair[1] - scene.marker_pair[0])
        # straight tube along x: full body length visible in-plane
        assert gap == pytest.approx(world.spinner_spec.body_length, rel=1e-9)

    def test_payload_opacity_tracks_release(self):
        world = sim.initial_world(load_fixture_scenario("targeted_release"))
        assert sim.fluoro_project(world, [[1, 0, 0], [0, 1, 0]]).payload_opacity == 1.0
        drained = dataclasses.replace(
            world, payload=dataclasses.replace(world.payload,
                                               released_fraction=0.75))
        scene = sim.fluoro_project(drained, [[1, 0, 0], [0, 1, 0]])
        assert scene.payload_opacity == pytest.approx(0.25)

    def test_sac_overlay(self):
        world = sim.initial_world(load_fixture_scenario("coagulation_embolization"))
        scene = sim.fluoro_project(world, [[1, 0, 0], [0, 1, 0]])
        assert len(scene.sac_overlays) == 1
        assert scene.sac_overlays[0]["sac"] == 0
        assert scene.sac_overlays[0]["fill"] == 0.0


class TestScenarioLoading:
    def test_invalid_json(self):
        with pytest.raises(sim.ScenarioParseError):
            sim.load_scenario("{not json")

    def test_missing_network(self):
        with pytest.raises(sim.ScenarioError):
            sim.load_scenario(json.dumps({"network": "no_such.json",
                                          "initial_pose": {"segment": 0, "s_mm": 1}}))

    def test_pose_outside_segment(self, fixtures_dir):
        doc = {"network": "straight_3p5.json",
               "initial_pose": {"segment": 0, "s_mm": 5000.0}}
        with pytest.raises(sim.ScenarioError):
            sim.load_scenario(json.dumps(doc), fixtures_dir)

    def test_unsorted_commands_rejected(self, fixtures_dir):
        doc = {"network": "straight_3p5.json",
               "initial_pose": {"segment": 0, "s_mm": 100.0},
               "commands": [
                   {"time_s": 1.0, "type": "TOGGLE_ASPIRATION", "on": True},
                   {"time_s": 0.5, "type": "TOGGLE_ASPIRATION", "on": False}]}
        with pytest.raises(sim.ScenarioError):
            sim.load_scenario(json.dumps(doc), fixtures_dir)

    def test_bad_dt(self, fixtures_dir):
        doc = {"network": "straight_3p5.json", "dt_s": 0.0,
               "initial_pose": {"segment": 0, "s_mm": 100.0}}
        with pytest.raises(sim.ScenarioError):
            sim.load_scenario(json.dumps(doc), fixtures_dir)

    def test_fixtures_env_override(self, fixtures_dir, monkeypatch, tmp_path):
        monkeypatch.setenv(sim.FIXTURES_ENV, str(fixtures_dir))
        doc = {"network": "straight_3p5.json",
               "initial_pose": {"segment": 0, "s_mm": 100.0}}
        scenario = sim.load_scenario(json.dumps(doc))
        assert scenario.network.segments[0].length == pytest.approx(1.0)

    def test_inflow_null_disables_flow(self):
        scenario = load_fixture_scenario("quiescent_swim")
        assert scenario.network.inflow is None
        world = sim.initial_world(scenario)
        assert all(q == 0.0 for q in world.flow_field.segment_flow.values())

    def test_calibration_samples_override(self, fixtures_dir):
        doc = {"network": "straight_3p5.json",
               "initial_pose": {"segment": 0, "s_mm": 100.0},
               "spinner": {"calibration_samples": [[1200.0, 2.0], [6000.0, 12.0]]}}
        scenario = sim.load_scenario(json.dumps(doc), fixtures_dir)
        fit = scenario.spinner_spec.propulsion_fit
        # 2 cm/s at 20 Hz, 12 cm/s at 100 Hz -> slope 0.1/80 m/s/Hz
        assert fit.slope == pytest.approx(0.00125, rel=1e-9)
        assert fit.intercept == pytest.approx(-0.005, rel=1e-9)


class TestRunAndLogs:
    def test_replay_bit_identical(self, tmp_path):
        scenario = load_fixture_scenario("branch_navigation")
        a = sim.run_scenario(scenario)
        b = sim.run_scenario(scenario)
        pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
        sim.write_log(a.trajectory, pa)
        sim.write_log(b.trajectory, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_log_round_trip_exact(self, tmp_path):
        result = sim.run_scenario(load_fixture_scenario("coagulation_embolization"))
        path = tmp_path / "t.csv"
        sim.write_log(result.trajectory, path)
        back = sim.read_log(path)
        assert len(back) == len(result.trajectory)
        for orig, rt in zip(result.trajectory, back):
            assert rt.tick == orig.tick
            assert rt.s_m == orig.s_m  # repr() round-trips floats exactly
            assert rt.released == orig.released
            assert rt.occlusion == orig.occlusion
            assert rt.mode == orig.mode

    def test_log_header(self, tmp_path):
        result = sim.run_scenario(load_fixture_scenario("coagulation_embolization"))
        path = tmp_path / "t.csv"
        sim.write_log(result.trajectory, path)
        header = path.read_text().splitlines()[0]
        assert header == ("tick,time_s,segment,s_m,x,y,z,mode,B_mT,f_rpm,"
                          "released,occlusion_0")

    def test_read_log_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("tick,time_s,wrong\n0,0.0,1\n")
        with pytest.raises(sim.LogSchemaError):
            sim.read_log(path)

    def test_read_log_rejects_truncated_row(self, tmp_path):
        result = sim.run_scenario(load_fixture_scenario("quiescent_swim"))
        path = tmp_path / "t.csv"
        sim.write_log(result.trajectory, path)
        lines = path.read_text().splitlines()
        lines[-1] = lines[-1].rsplit(",", 3)[0]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(sim.LogSchemaError):
            sim.read_log(path)

    def test_read_log_rejects_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(sim.LogSchemaError):
            sim.read_log(path)

    def test_events_jsonl(self, tmp_path):
        result = sim.run_scenario(load_fixture_scenario("branch_navigation"))
        path = tmp_path / "e.jsonl"
        sim.write_events(result.events, path)
        lines = path.read_text().splitlines()
        assert len(lines) == len(result.events)
        parsed = [json.loads(line) for line in lines]
        assert parsed[-1]["kind"] == "SCENARIO_END"
        assert all(set(p) == {"kind", "tick", "time_s", "data"} for p in parsed)

    def test_events_tick_monotone(self):
        result = sim.run_scenario(load_fixture_scenario("cerebral_roundtrip"))
        ticks = [e.tick for e in result.events]
        assert ticks == sorted(ticks)

    def test_scenario_end_terminates_log(self):
        result = sim.run_scenario(load_fixture_scenario("quiescent_swim"))
        assert result.events[-1].kind == "SCENARIO_END"
        assert result.events[-1].time_s == pytest.approx(
            result.scenario.duration, rel=1e-9)

    def test_row_count_matches_duration(self):
        scenario = load_fixture_scenario("quiescent_swim")
        result = sim.run_scenario(scenario)
        assert len(result.trajectory) == int(round(scenario.duration / scenario.dt)) + 1

    def test_dt_halving_consistency(self, fixtures_dir):
        base = json.loads((FIXTURES / "upstream_swim.json").read_text())
        fine = dict(base, dt_s=base.get("dt_s", 1e-3) / 2)
        r1 = sim.run_scenario(sim.load_scenario(json.dumps(base), fixtures_dir))
        r2 = sim.run_scenario(sim.load_scenario(json.dumps(fine), fixtures_dir))
        s1 = r1.final_world.spinner.arc_s
        s2 = r2.final_world.spinner.arc_s
        assert abs(s1 - s2) / max(abs(s1), abs(s2)) < 0.01
