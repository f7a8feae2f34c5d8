import json
import math

import numpy as np
import pytest

from qubitpmp import cli
from qubitpmp.model import RHO_F, RHO_I, SystemSpec
from qubitpmp.propagate import Segmented, evolve_state, read_trajectory_csv


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("text,value", [("0.42pi", 0.42 * math.pi), ("pi", math.pi),
                                        ("2*pi", 2 * math.pi), ("1.5", 1.5), ("1e-1π", 0.1 * math.pi)])
def test_parse_time(text, value):
    assert cli.parse_time(text) == pytest.approx(value)


def test_parse_time_rejects_junk():
    with pytest.raises(cli.UsageError):
        cli.parse_time("fast")


def test_parse_grid():
    assert np.allclose(cli.parse_grid("0.1pi:0.3pi:3"), np.array([0.1, 0.2, 0.3]) * math.pi)
    assert np.allclose(cli.parse_grid("0.5,1pi"), [0.5, math.pi])
    with pytest.raises(cli.UsageError):
        cli.parse_grid("1:2")


def test_speed_limit(capsys):
    code, out, _ = run(["speed-limit"], capsys)
    assert code == 0
    value = float(out.split("=")[1])
    assert value == pytest.approx(math.acos(1 / math.sqrt(5)), abs=1e-6)
    code, out, _ = run(["speed-limit", "--states", "1,0;0,1"], capsys)
    assert "0.50000000 pi" in out
    code, _, err = run(["speed-limit", "--states", "1,0"], capsys)
    assert code == 1


def test_simulate_uniform_decay(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    code, _, err = run(["simulate", "--channel", "uniform", "--gamma", "0.1", "--tf", "pi",
                        "--schedule", '{"u": [0.0]}', "--out", str(out)], capsys)
    assert code == 0
    norm = float(err.split("|rho(tf)| =")[1])
    assert norm == pytest.approx(math.exp(-0.1 * math.pi), abs=1e-6)
    assert out.read_text().splitlines()[0] == "t,u,rx,ry,rz"
    assert (tmp_path / "traj.csv.manifest.json").exists()


def test_simulate_closed_roundtrip(tmp_path, capsys):
    sched = {"structure": "XSY", "durations": [0.4, 0.5, 0.4]}
    out = tmp_path / "t.csv"
    code, _, err = run(["simulate", "--schedule", json.dumps(sched), "--out", str(out)], capsys)
    assert code == 0
    data = read_trajectory_csv(out)
    final = np.array([data["rx"][-1], data["ry"][-1], data["rz"][-1]])
    lib = evolve_state(RHO_I, Segmented.from_label("XSY", [0.4, 0.5, 0.4]), SystemSpec()).final
    assert np.array_equal(final, lib)
    assert float(err.split("overlap =")[1].split()[0]) == pytest.approx(float(RHO_F @ lib), abs=1e-11)


def test_simulate_null_space_rows_constant(tmp_path, capsys):
    out = tmp_path / "t.csv"
    code, _, _ = run(["simulate", "--channel", "x", "--gamma", "0.1", "--scenario", "custom",
                      "--initial", "0.7,0,0", "--target", "0.7,0,0", "--tf", "1.0",
                      "--schedule", '{"u": [0]}', "--out", str(out)], capsys)
    assert code == 0
    data = read_trajectory_csv(out)
    assert np.all(data["rx"] == 0.7) and np.all(data["rz"] == 0.0)


def test_simulate_schedule_mismatch_is_usage_error(capsys):
    code, _, err = run(["simulate", "--tf", "2", "--schedule",
                        '{"structure": "XY", "durations": [0.5, 0.5]}'], capsys)
    assert code == 1


def test_verify_bad_protocol_exits_2(tmp_path, capsys):
    out = tmp_path / "v.json"
    code, _, _ = run(["verify", "--schedule", '{"structure": "Y", "durations": [1.0]}',
                      "--out", str(out)], capsys)
    assert code == 2
    report = json.loads(out.read_text())
    assert report["bang_violations"] > 0 and report["passed"] is False


def test_optimize_outputs_are_reproducible(tmp_path, capsys):
    files = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        code, _, _ = run(["optimize", "--structure", "XSY", "--tf", "0.42pi", "--restarts", "1",
                          "--out", str(out)], capsys)
        assert code == 0
        files.append(out)
    assert files[0].read_bytes() == files[1].read_bytes()
    res = json.loads(files[0].read_text())
    assert res["structure"] == "XSY" and res["overlap"] > 0.99
    ma = json.loads((tmp_path / "a.json.manifest.json").read_text())
    mb = json.loads((tmp_path / "b.json.manifest.json").read_text())
    assert ma["config_hash"] == mb["config_hash"]
    assert ma["version"]
    text = files[0].read_text()
    assert text == json.dumps(json.loads(text), sort_keys=True, indent=2) + "\n"


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"channel": "uniform", "gamma": 0.5, "tf": "pi"}))
    code, _, err = run(["simulate", "--config", str(cfg), "--gamma", "0.1",
                        "--schedule", '{"u": [0.3]}'], capsys)
    assert code == 0
    assert float(err.split("|rho(tf)| =")[1]) == pytest.approx(math.exp(-0.1 * math.pi), abs=1e-6)
    cfg.write_text(json.dumps({"bogus": 1}))
    code, _, _ = run(["simulate", "--config", str(cfg)], capsys)
    assert code == 1


def test_sweep_small_grid(tmp_path, capsys):
    outs = []
    for name in ("s1.csv", "s2.csv"):
        out = tmp_path / name
        code, _, _ = run(["sweep", "--grid", "0.2pi,0.3pi", "--catalog", "XY,XSY", "--restarts", "1",
                          "--workers", "1", "--out", str(out)], capsys)
        assert code == 0
        outs.append(out)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    lines = outs[0].read_text().splitlines()
    assert lines[0].startswith("tf,overlap,structure,hc_sign,switch_times")
    assert len(lines) == 3
    manifest = json.loads((tmp_path / "s1.csv.manifest.json").read_text())
    assert manifest["catalog"] == ["XY", "XSY"] and len(manifest["grid"]) == 2


def test_retain_writes_baseline(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code, _, _ = run(["retain", "--channel", "x", "--gamma", "0.1", "--grid", "0,0.1pi",
                      "--catalog", "X,Y", "--restarts", "1", "--workers", "1", "--out", str(out)],
                     capsys)
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[1].split(",")[1] == "1.0"
    assert (tmp_path / "r_baseline.csv").exists()


def test_grad_command(tmp_path, capsys):
    out = tmp_path / "g"
    code, _, _ = run(["grad", "--tf", "0.45pi", "--n", "16", "--max-iter", "50", "--cost", "frobenius",
                      "--out", str(out)], capsys)
    assert code == 0
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "t,u" and len(lines) == 17
    assert json.loads((tmp_path / "g.json").read_text())["structure"] == "sampled"


def test_singular_arc_command(capsys):
    code, out, err = run(["singular-arc", "--xi", "0.2", "--thetas", "9"], capsys)
    assert code == 0
    assert "-0.192307692308" in err
    rows = [list(map(float, r.split(","))) for r in out.splitlines()[1:]]
    assert all(abs(r[-1] + 0.2 / 1.04) < 1e-6 for r in rows)


def test_usage_errors(capsys):
    assert run(["optimize", "--structure", "XSY"], capsys)[0] == 1  # no --tf
    assert run(["optimize", "--tf", "1", "--structure", "XXY"], capsys)[0] == 1
    assert run(["simulate", "--channel", "w"], capsys)[0] == 1
    assert run(["sweep", "--grid", "0.3pi,0.2pi"], capsys)[0] == 1


def test_verify_accepts_optimize_output(tmp_path, capsys):
    res = tmp_path / "xsy.json"
    assert run(["optimize", "--structure", "XSY", "--tf", "0.42pi", "--restarts", "1",
                "--out", str(res)], capsys)[0] == 0
    rep = tmp_path / "rep.json"
    code, _, _ = run(["verify", "--tf", "0.42pi", "--schedule", str(res), "--out", str(rep)], capsys)
    assert code == 0
    assert json.loads(rep.read_text())["passed"] is True
