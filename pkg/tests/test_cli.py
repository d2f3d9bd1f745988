import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from superhol.cli import load_scene, main

SCENES = Path(__file__).resolve().parent.parent / "scenes"


def run(*args):
    res = CliRunner().invoke(main, [str(a) for a in args])
    return res.exit_code, res.output


def _json(out):
    return json.loads(out[out.index("{"):])


@pytest.mark.parametrize("name", ["odd_line", "flat_gauge", "mixed_curved"])
def test_verify_shipped_scenes(name):
    code, out = run("verify", SCENES / f"{name}.toml")
    assert code == 0, out
    assert "fail]" not in out


def test_wilson_flat_trace_is_rank():
    code, out = run("wilson", SCENES / "flat_gauge.toml", "--path", "loop", "--gauge", "V", "--format", "json")
    assert code == 0
    rep = _json(out)
    assert rep["schema"] == "superhol/1"
    assert rep["trace"] == [[[], 2.0]]
    assert rep["supertrace_max_deviation"] <= 1e-8


def test_wilson_open_path_rejected():
    code, _ = run("wilson", SCENES / "mixed_curved.toml", "--path", "line")
    assert code == 2


def test_holonomy_worked_example_rank():
    code, out = run("holonomy", SCENES / "odd_line.toml", "--extra-generators", "2", "--format", "json")
    assert code == 0
    assert _json(out)["rank"] == 1
    code, out = run("holonomy", SCENES / "odd_line.toml", "--extra-generators", "0", "--format", "json")
    assert _json(out)["rank"] == 0


def test_json_is_deterministic():
    a = run("holonomy", SCENES / "mixed_curved.toml", "--format", "json")
    b = run("holonomy", SCENES / "mixed_curved.toml", "--format", "json")
    assert a == b and a[0] == 0


def test_transport_methods_agree():
    _, rk = run("transport", SCENES / "mixed_curved.toml", "--path", "line", "--format", "json")
    _, se = run("transport", SCENES / "mixed_curved.toml", "--path", "line", "--method", "series", "--format", "json")
    a, b = _json(rk)["matrix"], _json(se)["matrix"]

    def entries(m):
        return {(i, j, tuple(I)): c for i, row in enumerate(m) for j, e in enumerate(row) for I, c in e}

    ea, eb = entries(a), entries(b)
    assert ea
    for k in set(ea) | set(eb):
        assert abs(ea.get(k, 0.0) - eb.get(k, 0.0)) <= 1e-6


def test_galaev_report():
    code, out = run("galaev", SCENES / "odd_line.toml", "--format", "json")
    assert code == 0
    rep = _json(out)
    assert rep["direct"][0]["matrix"] == [[2.0]]
    assert rep["span_distance"] <= rep["tol"]


def test_show_canonical_form():
    code, out = run("show", SCENES / "odd_line.toml")
    assert code == 0
    assert "th1" in out


def _write(tmp_path, text):
    p = tmp_path / "scene.toml"
    p.write_text(text)
    return p


def test_parity_error_exit_code(tmp_path):
    p = _write(tmp_path, '[manifold]\neven=1\nodd=1\n[bundle]\neven=1\n[connection]\n"x1.T1"="th1*T1"\n')
    code, out = run("show", p)
    assert code == 2
    assert "E_PARITY" in out


def test_syntax_error_reports_location(tmp_path):
    p = _write(tmp_path, '[manifold]\neven=1\n[bundle]\neven=1\n[connection]\n"x1.T1"="x1 +* T1"\n')
    code, out = run("show", p)
    assert code == 2
    assert "E_SYNTAX" in out and "column 5" in out


def test_unknown_identifier(tmp_path):
    p = _write(tmp_path, '[manifold]\neven=1\n[bundle]\neven=1\n[connection]\n"x1.T1"="y7*T1"\n')
    code, out = run("show", p)
    assert code == 2
    assert "E_UNKNOWN_IDENTIFIER" in out


def test_unknown_path_reference(tmp_path):
    code, out = run("transport", SCENES / "mixed_curved.toml", "--path", "nope")
    assert code == 2


def test_scene_loader_objects():
    scene = load_scene(SCENES / "mixed_curved.toml")
    assert scene.conn.rank == 2
    assert "loop" in scene.paths and scene.closed["loop"]
