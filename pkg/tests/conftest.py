import pytest

from nlsgraph.discretization import assemble
from nlsgraph.graph import Edge, MetricGraph, tadpole_graph


@pytest.fixture(scope="session")
def tadpole():
    return tadpole_graph(1.0, 10.0)


@pytest.fixture(scope="session")
def tadpole_ops(tadpole):
    return assemble(tadpole, 1e-2)


@pytest.fixture(scope="session")
def circle():
    return MetricGraph(["v"], [Edge("c", "v", "v", 1.0, kappa=True)], require_core=False)


def pytest_terminal_summary(terminalreporter):
    # acceptance verdicts, one line per criterion, printed even when output is captured
    import sys

    mod = sys.modules.get("test_acceptance")
    RESULTS = getattr(mod, "RESULTS", None)
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            ok, detail = RESULTS[k]
            terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
