import json
import math
from pathlib import Path

import numpy as np
import pytest

from spherecone.cli import main, parse_params
from spherecone.cone_surface import bigon_glue, mark_smooth_point_on_edge, octant_double
from spherecone.errors import DomainError, UnknownFamily
from spherecone.harness import (Report, Scenario, analyze, build_family, emit_report, ground_truth, pigeonhole_delta,
                                pigeonhole_ok, run_scenarios, run_systole_inequality, strip_volatile)

GOLDEN = Path(__file__).parent / "golden" / "octant_report.json"


def rounded(x, digits=9):
    if isinstance(x, float):
        return float(f"{x:.{digits}g}")
    if isinstance(x, list):
        return [rounded(v, digits) for v in x]
    if isinstance(x, dict):
        return {k: rounded(v, digits) for k, v in x.items()}
    return x


def test_pigeonhole_examples():
    d = pigeonhole_delta(1e-6, 0.1, 5, [1e-3, 1e-4, 3e-5])
    assert pigeonhole_ok(1e-6, 0.1, d, [1e-3, 1e-4, 3e-5])
    assert pigeonhole_delta(0.001, 0.5, 2) < 0.5


@pytest.mark.parametrize("args", [(0.1, 0.5, 1, ()), (0.5, 0.1, 3, ()), (0.2, 0.5, 3, ()),
                                  (1e-4, 0.5, 3, (0.01, 0.02))])
def test_pigeonhole_domain(args):
    with pytest.raises(DomainError):
        pigeonhole_delta(*args)


def test_unknown_family():
    with pytest.raises(UnknownFamily):
        build_family("torus")
    with pytest.raises(UnknownFamily):
        ground_truth("torus")


def test_families():
    assert build_family("doubled_triangle").area == pytest.approx(math.pi)
    assert build_family("lune_double", {"theta": 0.7}).n == 2
    assert build_family("bigon_genus_g", {"g": 2, "theta": 1.0}).theta[0] == pytest.approx(4.0)
    assert ground_truth("appendix_family", {"N": 0, "m": 2, "eps": 1e-3})["theta_norm"] == 4.5


def test_emit_report_exit_codes(tmp_path):
    assert emit_report([], tmp_path / "a.json") == 0
    r = Report(Scenario("x", "doubled_triangle"))
    r.add("ok", True, 1.0, 2.0, "<")
    assert emit_report([r], tmp_path / "b.json") == 0
    r.add("bad", False, 3.0, 2.0, "<")
    assert emit_report([r], tmp_path / "c.json") == 1
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["schema_version"] == 1 and doc["passed"] is False
    assert [c["name"] for c in doc["reports"][0]["checks"]] == ["ok", "bad"]


def test_golden_octant(tmp_path):
    out = tmp_path / "r.json"
    assert main(["verify", "--family", "doubled_triangle", "--out", str(out)]) == 0
    got = strip_volatile(json.loads(out.read_text()))
    want = strip_volatile(json.loads(GOLDEN.read_text()))
    assert rounded(got) == rounded(want)
    vals = got["reports"][0]["values"]
    assert vals["sys"] == pytest.approx(math.pi / 4, abs=1e-12)
    assert vals["ground_truth"]["area"] == pytest.approx(math.pi)


def test_deterministic():
    sc = Scenario("oct", "doubled_triangle", checks=("systole", "nb", "sampled"), seed=3)
    a = strip_volatile({"reports": [analyze(sc).to_dict()]})
    b = strip_volatile({"reports": [analyze(sc).to_dict()]})
    assert a == b


def test_workers_match_serial():
    scs = [Scenario("oct", "doubled_triangle", checks=("systole", "nb")),
           Scenario("lune", "lune_double", {"theta": 0.7}, checks=("systole", "nb", "monodromy"))]
    ser = [r.to_dict()["values"] for r in run_scenarios(scs, 1)]
    par = [r.to_dict()["values"] for r in run_scenarios(scs, 2)]
    assert ser == par


def test_unknown_check():
    with pytest.raises(DomainError):
        analyze(Scenario("x", "doubled_triangle", checks=("bogus",)))


def test_systole_inequality_branches():
    rep = run_systole_inequality(bigon_glue(1, 0.5), eps=0.4)
    assert rep.passed
    names = {c.name for c in rep.checks}
    assert "theorem_c" in names
    s = mark_smooth_point_on_edge(octant_double(), (0, 0), 0.4)
    assert run_systole_inequality(s, eps=0.4).passed
    with pytest.raises(DomainError):
        run_systole_inequality(octant_double())
    with pytest.raises(DomainError):
        run_systole_inequality(bigon_glue(1, 0.5), eps=0.7)


def test_parse_params():
    assert parse_params("g=2,theta=1.5,name=x") == {"g": 2, "theta": 1.5, "name": "x"}
    assert parse_params(None) == {}


def test_cli_build_and_report(tmp_path, capsys):
    out = tmp_path / "b.json"
    assert main(["build", "--family", "lune_double", "--params", "theta=0.7", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["surfaces"][0]["theta"] == [0.7, 0.7]
    rep = tmp_path / "r.json"
    main(["verify", "--family", "lune_double", "--params", "theta=0.7", "--checks", "gauss_bonnet,nb",
          "--out", str(rep)])
    capsys.readouterr()
    assert main(["report", str(rep)]) == 0
    assert "PASS" in capsys.readouterr().out


def test_config_then_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"family": "lune_double", "params": {"theta": 0.3}, "checks": ["gauss_bonnet"]}))
    out = tmp_path / "a.json"
    assert main(["analyze", "--config", str(cfg), "--params", "theta=0.9", "--out", str(out)]) == 0
    vals = json.loads(out.read_text())["values"][0]
    assert vals["theta"] == [0.9, 0.9]


def test_config_scenarios(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"checks": ["gauss_bonnet"], "scenarios": [
        {"name": "a", "family": "lune_double", "params": {"theta": 0.4}},
        {"name": "b", "family": "bigon_genus_g", "params": {"g": 1, "theta": 0.5}}]}))
    out = tmp_path / "r.json"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert [r["scenario"]["name"] for r in doc["reports"]] == ["a", "b"]
    assert np.isclose(doc["reports"][1]["values"]["theta"][0], 1.5)
