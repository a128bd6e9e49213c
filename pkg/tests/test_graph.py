import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nlsgraph.graph import (
    Edge,
    GraphFunction,
    GraphSpecError,
    MetricGraph,
    kirchhoff_residual,
    load_graph,
    lp_core_norm,
    mass,
    serialize,
    tadpole_graph,
)

STAR = {
    "vertices": ["o"],
    "edges": [
        {"id": "a", "from": "o", "halfline_truncation": 5.0},
        {"id": "b", "from": "o", "halfline_truncation": 5.0},
        {"id": "l", "from": "o", "to": "o", "length": 2.0, "kappa": True},
    ],
}


def test_round_trip_through_json():
    g = load_graph(json.dumps(STAR))
    assert load_graph(serialize(g)) == g
    assert g.core_length == pytest.approx(2.0)
    assert len(g.halflines) == 2 and g.degree("o") == 4


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda d: d["edges"][2].update(length=-1.0), "negative length"),
        (lambda d: d["edges"][2].update(length=0.0), "zero length"),
        (lambda d: d["edges"][2].update(to="nowhere"), "unknown vertex"),
        (lambda d: d["edges"][2].update(kappa=False), "empty compact core"),
        (lambda d: d["edges"].__setitem__(slice(0, 2), []), "no half-line"),
        (lambda d: d["edges"][0].update(kappa=True), "half-line"),
        (lambda d: d["vertices"].append("island"), "disconnected"),
        (lambda d: d["edges"][1].update(id="a"), "duplicate edge"),
    ],
)
def test_invalid_specs_are_rejected(mutate, message):
    data = json.loads(json.dumps(STAR))
    mutate(data)
    with pytest.raises(GraphSpecError, match=message):
        load_graph(data)


def test_parse_errors():
    with pytest.raises(GraphSpecError, match="parse error"):
        load_graph("{not json")
    with pytest.raises(GraphSpecError, match="parse error"):
        load_graph("[]")


def test_tadpole_structure():
    g = tadpole_graph(2.0, 7.0)
    assert g.edge("loop").is_loop and g.edge("tail").halfline
    assert g.core_length == 2.0 and g.degree("v") == 3


def test_grid_and_csv_round_trip(tadpole):
    grid = tadpole.grid(0.05, {"loop": 0.01})
    assert grid.step("loop") == pytest.approx(0.01)
    u = grid.sample(lambda e, x: np.cos(2 * np.pi * x) if e.id == "loop" else np.exp(-x))
    back = GraphFunction.from_csv(grid, u.to_csv())
    for k in u.values:
        np.testing.assert_array_equal(back.values[k], u.values[k])


def test_continuity_is_enforced(tadpole):
    grid = tadpole.grid(0.1)
    vals = {"loop": np.ones(grid.intervals["loop"] + 1), "tail": np.zeros(grid.intervals["tail"] + 1)}
    with pytest.raises(ValueError):
        GraphFunction(grid, vals)


def test_mass_and_lp_of_constant_on_loop(tadpole):
    grid = tadpole.grid(0.01)
    u = grid.sample(lambda e, x: np.full_like(x, 2.0) if e.id == "loop" else 2.0 * np.exp(-50 * x))
    assert lp_core_norm(u, 4) == pytest.approx(16.0, rel=1e-12)
    assert mass(u) == pytest.approx(4.0 + 4.0 / 100.0, rel=1e-3)


def test_kirchhoff_of_balanced_linear_data():
    # three half-lines with slopes summing to zero at the centre
    g = MetricGraph(["o"], [Edge(e, "o", None, 1.0, halfline=True) for e in "abc"], require_core=False)
    grid = g.grid(0.1)
    slopes = {"a": 1.0, "b": 1.0, "c": -2.0}
    u = grid.sample(lambda e, x: 1.0 + slopes[e.id] * x)
    assert kirchhoff_residual(u)["o"] == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(c=st.floats(min_value=-5, max_value=5).filter(lambda c: abs(c) > 1e-3))
def test_mass_scales_quadratically(tadpole, c):
    grid = tadpole.grid(0.05)
    u = grid.sample(lambda e, x: np.sin(np.pi * x) ** 2 if e.id == "loop" else 0 * x)
    assert mass(u * c) == pytest.approx(c * c * mass(u), rel=1e-12)
    assert lp_core_norm(u * c, 6) == pytest.approx(abs(c) ** 6 * lp_core_norm(u, 6), rel=1e-12)
