import json
from pathlib import Path

import pytest

from vasim import sim, vessels

FIXTURES = Path(sim.__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture()
def straight_network() -> vessels.VesselNetwork:
    return vessels.load_network((FIXTURES / "straight_3p5.json").read_text())


@pytest.fixture()
def cerebral_network() -> vessels.VesselNetwork:
    return vessels.load_network((FIXTURES / "cerebral.json").read_text())


@pytest.fixture()
def pulmonary_network() -> vessels.VesselNetwork:
    return vessels.load_network((FIXTURES / "pulmonary.json").read_text())


def load_fixture_scenario(name: str) -> sim.Scenario:
    path = FIXTURES / f"{name}.json"
    return sim.load_scenario(path.read_text(), path.parent)


def make_network(nodes, segments, sacs=(), inflow=None) -> str:
    """Build a network document from terse (id, ...) tuples, mm units."""
    doc = {
        "nodes": [{"id": i, "position_mm": list(p)} for i, p in nodes],
        "segments": [
            {"id": i, "from_node": a, "to_node": b,
             "centerline_mm": [list(q) for q in line], "radius_mm": r}
            for i, a, b, line, r in segments
        ],
        "sacs": [
            {"id": i, "host_segment": h, "arc_position_mm": s,
             "neck_radius_mm": nr, "neck_length_mm": nl, "sac_volume_ml": v}
            for i, h, s, nr, nl, v in sacs
        ],
    }
    if inflow is not None:
        doc["inflow"] = inflow
    return json.dumps(doc)
