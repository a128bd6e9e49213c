import json

import numpy as np
import pytest

from nlsgraph.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main


def test_tadpole_command(tmp_path, capsys):
    out = tmp_path / "tp"
    assert main(["tadpole", "--p", "8", "--h", "1e-3", "--out", str(out)]) == EXIT_OK
    rec = json.loads((out / "tadpole.json").read_text())
    assert rec["lambda"] == 0.0 and rec["gradient_residual"] <= 1e-4
    assert max(rec["kirchhoff"].values()) <= 1e-4
    assert "PASS" in capsys.readouterr().out


def test_ode_periods_p2(capsys):
    assert main(["ode", "periods", "--p", "2", "--alpha", "1,4,9", "--u0", "1"]) == EXIT_OK
    rows = capsys.readouterr().out.splitlines()[1:]
    taus = [float(r.split(",")[3]) for r in rows]
    np.testing.assert_allclose(taus, [2 * np.pi / np.sqrt(a) for a in (1, 4, 9)], rtol=1e-12)


def test_ode_orbit_p2_is_cosine(tmp_path):
    assert main(["ode", "orbit", "--p", "2", "--alpha", "1", "--u0", "1", "--samples", "64", "--out", str(tmp_path)]) == 0
    data = np.loadtxt(tmp_path / "orbit.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 1], np.cos(data[:, 0]), atol=1e-10)


def test_ode_mass_bounds(capsys):
    assert main(["ode", "mass-bounds"]) == EXIT_OK
    rows = capsys.readouterr().out.splitlines()
    assert len(rows) == 28 and all(r.endswith("True") for r in rows[1:])


def test_solve_rejects_subcritical(capsys):
    assert main(["solve", "--p", "4"]) == EXIT_CONFIG
    assert "requires p > 6" in capsys.readouterr().err


def test_solve_missing_graph(tmp_path, capsys):
    assert main(["solve", "--graph", str(tmp_path / "g.json")]) == EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_verify_parse_errors(tmp_path, capsys):
    (tmp_path / "e.json").write_text("")
    assert main(["verify", str(tmp_path / "e.json")]) == EXIT_CONFIG
    (tmp_path / "b.json").write_text("{\"p\": 8}")
    assert main(["verify", str(tmp_path / "b.json")]) == EXIT_CONFIG
    assert "parse error" in capsys.readouterr().err


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    code = main(["solve", "--N", "3", "--out", str(out)])
    return code, out


def test_solve_finds_two_solutions(solved):
    code, out = solved
    assert code == EXIT_OK
    reports = sorted(out.glob("solution_*.json"))
    assert len(reports) >= 2
    lams = [json.loads(r.read_text())["lambda"] for r in reports]
    assert all(l > 0 for l in lams) and len(set(np.round(lams, 3))) == len(lams)
    assert (out / "summary.csv").exists() and (out / "run.json").exists()


def test_solved_reports_verify(solved, capsys):
    _, out = solved
    assert main(["verify", *map(str, sorted(out.glob("solution_*.json")))]) == EXIT_OK


def test_noisy_report_fails_on_nehari(solved, tmp_path, capsys):
    _, out = solved
    for f in ("solution_00.json", "solution_00.csv"):
        (tmp_path / f).write_text((out / f).read_text())
    lines = (tmp_path / "solution_00.csv").read_text().splitlines()
    rng = np.random.default_rng(0)
    vals = np.array([float(l.rsplit(",", 1)[1]) for l in lines[1:]])
    scale = 0.01 * np.max(np.abs(vals))
    rows = [l.split(",") for l in lines[1:]]
    noisy = [lines[0]]
    for i, (edge, x, v) in enumerate(rows):
        # endpoints are shared vertex values; only interior nodes get noise
        interior = 0 < i < len(rows) - 1 and rows[i - 1][0] == edge == rows[i + 1][0]
        val = float(v) + (scale * rng.standard_normal() if interior else 0.0)
        noisy.append(f"{edge},{x},{float(val)!r}")
    (tmp_path / "solution_00.csv").write_text("\n".join(noisy) + "\n")
    code = main(["verify", "--no-morse", str(tmp_path / "solution_00.json")])
    captured = capsys.readouterr()
    text = captured.out
    assert code == EXIT_VERIFY, captured.err
    assert "nehari" in text.split("FAIL", 1)[1].splitlines()[0]


def test_deterministic_reports(tmp_path):
    runs = [tmp_path / "a", tmp_path / "b"]
    for r in runs:
        assert main(["solve", "--N", "2", "--seed", "7", "--out", str(r)]) == EXIT_OK
    for name in ("solution_00.json", "solution_00.csv", "summary.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()
