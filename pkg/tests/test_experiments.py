import numpy as np
import pytest

from qubitpmp import experiments as ex
from qubitpmp.model import RHO_F, RHO_I, SystemSpec
from qubitpmp.optimize import optimize_switching_times
from qubitpmp.propagate import Sampled, evolve_state

SIGMA_X = SystemSpec(xi=0.2, channel="x", gamma=0.1)


def _rec(tf, ov, label="XY", hc=0.0):
    return ex.SweepRecord(tf, ov, label, [tf], "near_zero", True, hc)


def test_scenario_presets():
    p = ex.Scenario.prepare(SIGMA_X)
    assert np.array_equal(p.initial, RHO_I) and np.array_equal(p.target, RHO_F)
    r = ex.Scenario.retain(SIGMA_X)
    assert np.array_equal(r.target, RHO_I)
    with pytest.raises(ValueError):
        ex.Scenario([1, 1, 0], RHO_F, SIGMA_X)
    assert r.to_dict()["spec"]["channel"] == "x"


def test_zero_control_baseline():
    sc = ex.Scenario.retain(SIGMA_X)
    recs = ex.zero_control_baseline(sc, [0.0, 0.5, 1.0])
    assert recs[0].overlap == 1.0
    final = evolve_state(RHO_I, Sampled(1.0, [0.0]), SIGMA_X).final
    assert recs[2].overlap == pytest.approx(float(RHO_I @ final), abs=1e-14)


def test_zero_control_retention_has_maximum_near_pi():
    sc = ex.Scenario.retain(SIGMA_X)
    grid = np.linspace(0.6, 1.4, 41) * np.pi
    recs = ex.zero_control_baseline(sc, grid)
    k = int(np.argmax([r.overlap for r in recs]))
    assert 0 < k < len(grid) - 1
    assert grid[k] / np.pi == pytest.approx(1.0, abs=0.05)


def test_retention_at_zero_time_is_exact():
    recs = ex.retention_scan(SIGMA_X, [0.0])
    assert len(recs) == 1 and recs[0].overlap == 1.0


def test_small_sweep(closed):
    sc = ex.Scenario.prepare(closed)
    grid = np.array([0.2, 0.3, 0.42]) * np.pi
    recs = ex.sweep_tf(sc, grid, ["XY", "XSY"], restarts=1)
    assert [r.tf for r in recs] == list(grid)
    assert all(r.passed for r in recs)
    assert all(-1 <= r.overlap <= 1 for r in recs)
    ov = [r.overlap for r in recs]
    assert ov == sorted(ov)
    assert recs[-1].structure == "XSY"
    with pytest.raises(ValueError):
        ex.sweep_tf(sc, grid[::-1], ["XY"])


def test_transitions_and_sequences():
    recs = [_rec(0.1, 0.1, "XY"), _rec(0.2, 0.2, "XY"), _rec(0.3, 0.3, "XSY"),
            _rec(0.4, 0.4, "XSXY"), _rec(0.5, 0.5, "XSXY")]
    assert ex.structure_transitions(recs) == [(0.2, 0.3, "XY", "XSY"), (0.3, 0.4, "XSY", "XSXY")]
    assert ex.structure_sequence(recs) == ["XY", "XSY", "XSXY"]


def test_classification():
    rising = [_rec(t, 0.9 - 0.1 * np.exp(-t)) for t in np.linspace(0.1, 6.3, 30)]
    assert ex.interior_maximum(rising) is None
    assert ex.classify_records(rising) == "case_i"
    peaked = [_rec(t, 0.91 + 0.01 * np.exp(-(t - 2.3) ** 2)) for t in np.linspace(0.1, 6.3, 30)]
    assert ex.interior_maximum(peaked) is not None
    assert ex.classify_records(peaked) == "case_ii"
    assert ex.is_saturated(rising, 1.6 * np.pi, 2.0 * np.pi)
    with pytest.raises(ValueError):
        ex.case_classifier(SystemSpec(channel="z", gamma=0.1))


def test_best_local_maximum_ignores_the_start():
    # retention-like curve: global maximum at the first point, local one later
    t = np.linspace(0.1, 6.3, 40)
    ov = 0.92 + 0.07 * np.exp(-3 * t) + 0.01 * np.exp(-(t - 1.8) ** 2 * 4) - 0.01 * np.exp(-(t - 1.0) ** 2 * 8)
    recs = [_rec(a, b) for a, b in zip(t, ov)]
    assert ex.interior_maximum(recs) is None
    k = ex.best_local_maximum(recs)
    assert k is not None and abs(t[k] - 1.8) < 0.2
    assert ex.best_local_maximum([_rec(a, a) for a in t]) is None


def test_warm_inits_stretch_singular_segments():
    d = np.array([0.1, 0.2, 0.3, 0.4])
    ext, scaled = ex._warm_inits(d, "YSXY", 1.0, 1.5)
    assert np.allclose(ext, [0.1, 0.7, 0.3, 0.4])
    assert np.allclose(scaled, d * 1.5)
    assert len(ex._warm_inits(d[:2], "XY", 1.0, 1.5)) == 1


def test_sweep_csv_roundtrip(tmp_path):
    recs = [ex.SweepRecord(0.5, 0.25, "XSY", [0.1, 0.2, 0.2], "negative", True),
            ex.SweepRecord(1.0, 0.5, "XY", [0.4, 0.6], "positive", False)]
    path = tmp_path / "s.csv"
    ex.write_sweep_csv(path, recs)
    assert path.read_text().splitlines()[0] == "tf,overlap,structure,hc_sign,switch_times,passed"
    back = ex.read_sweep_csv(path)
    assert [b.to_dict() for b in back] == [
        {**r.to_dict(), "hc_mean": b.hc_mean, "cost": b.cost} for r, b in zip(recs, back)]


def test_long_singular_stretch_hugs_null_space():
    # sigma_x channel, tf = 2 pi: the middle of the singular arc sits near (rho_x, 0, 0)
    tf = 2.0 * np.pi
    guess = np.array([0.042, 0.2071, 1.5109, 0.1748, 0.0652]) * np.pi
    res = optimize_switching_times("XYSXY", tf, SIGMA_X, init=guess, restarts=1)
    assert res.report.passed
    traj = evolve_state(RHO_I, res.schedule, SIGMA_X)
    t0, t1 = np.cumsum(res.durations)[1:3]
    mid = (traj.times > t0 + 0.25 * (t1 - t0)) & (traj.times < t1 - 0.25 * (t1 - t0))
    assert np.max(np.hypot(traj.states[mid, 1], traj.states[mid, 2])) < 0.2
