import json

import pytest

from qode import checks
from qode.cli import main
from qode.ffnet import demo_net
from qode.io import load_json, save_schedule
from qode.schedule import ControlSchedule, ControlSegment


@pytest.fixture
def sin_schedule(tmp_path):
    out = tmp_path / "sin.json"
    assert main(["compile-sobolev", "--target", "sin1d", "--order", "2", "--dim", "1",
                 "--eps", "0.1", "--out", str(out)]) == 0
    return out


@pytest.fixture
def net_file(tmp_path):
    p = tmp_path / "net.json"
    p.write_text(json.dumps(demo_net().to_json()))
    return p


def test_compile_sobolev_sidecar(sin_schedule):
    rep = load_json(sin_schedule.with_name("sin.report.json"))
    assert (rep["N"], rep["W"], rep["D"]) == (5, 15, 11)
    assert set(rep) >= {"N", "delta", "c", "W", "D", "bound"}


@pytest.mark.parametrize("flags", [["--eps", "0"], ["--eps", "0.1", "--gamma", "1.5"]])
def test_compile_sobolev_rejects_bad_parameters(tmp_path, flags, capsys):
    code = main(["compile-sobolev", "--target", "sin1d", "--order", "2", "--dim", "1",
                 "--out", str(tmp_path / "x.json")] + flags)
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_unknown_target(tmp_path):
    assert main(["compile-sobolev", "--target", "nope", "--order", "2", "--dim", "1",
                 "--eps", "0.1", "--out", str(tmp_path / "x.json")]) == 2


def test_missing_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["compile-sobolev", "--target", "sin1d"])
    assert exc.value.code == 2


def test_compile_ffnet_shape_and_gains(tmp_path, net_file):
    reps = []
    for eps in ("1e-2", "1e-3"):
        out = tmp_path / f"ff{eps}.json"
        assert main(["compile-ffnet", "--net", str(net_file), "--eps", eps, "--out", str(out)]) == 0
        reps.append(load_json(out.with_name(out.stem + ".report.json")))
    assert reps[0]["W"] == reps[1]["W"] == 6 and reps[0]["D"] == reps[1]["D"] == 6
    assert reps[0]["r1"] != reps[1]["r1"]
    assert set(reps[0]) >= {"K", "a1", "a2", "a3", "delta0", "r1", "r3"}


def test_compile_ffnet_malformed_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"input_dim": 2,\n "width": 2,,\n}')
    assert main(["compile-ffnet", "--net", str(bad), "--eps", "0.01",
                 "--out", str(tmp_path / "o.json")]) == 2
    err = capsys.readouterr().err
    assert "bad.json:2" in err and '"width": 2,,' in err


def test_simulate_empty_schedule(tmp_path, capsys):
    p = tmp_path / "e.json"
    save_schedule(ControlSchedule(1, 1, (ControlSegment(1.0),), ((0, 1.0),)), p)
    assert main(["simulate", "--schedule", str(p), "--input", "0.4"]) == 0
    assert float(capsys.readouterr().out) == 0.4


def test_simulate_tanh_gadget_and_trajectory(tmp_path, capsys):
    p = tmp_path / "t.json"
    assert main(["gadget", "tanh", "--a", "1", "--b", "0", "--out", str(p)]) == 0
    capsys.readouterr()
    csv_path = tmp_path / "traj.csv"
    assert main(["simulate", "--schedule", str(p), "--input", "0.5",
                 "--trajectory", str(csv_path)]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.4621171573, abs=1e-10)
    rows = csv_path.read_text().splitlines()
    assert rows[0] == "t,y1,y2,y3"
    assert float(rows[-1].split(",")[0]) == pytest.approx(1.0)


def test_simulate_wrong_arity(sin_schedule):
    assert main(["simulate", "--schedule", str(sin_schedule), "--input", "0.1,0.2"]) == 2


def test_simulate_integration_failure(tmp_path, capsys):
    from qode.schedule import SegmentBuilder
    p = tmp_path / "blow.json"
    seg = SegmentBuilder().quadratic(0, 0, 0, 1.0).build()
    save_schedule(ControlSchedule(1, 1, (seg,), ((0, 1.0),)), p)
    assert main(["simulate", "--schedule", str(p), "--input", "5"]) == 1
    assert "segment 1" in capsys.readouterr().err


def test_verify_sin1d_passes(sin_schedule, tmp_path):
    csv_path = tmp_path / "v.csv"
    rep = tmp_path / "v.json"
    assert main(["verify", "--schedule", str(sin_schedule), "--target", "sin1d", "--grid", "101",
                 "--csv", str(csv_path), "--report", str(rep)]) == 0
    summary = load_json(rep)
    assert summary["sup_error"]["total"] <= 0.1
    assert summary["sup_error"]["realization"] <= 1e-5
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "x1,f,fhat_direct,fhat_ode,err_total" and len(lines) == 102
    # 17 significant digits survive a float round trip
    assert all(float(repr(float(v))) == float(v) for v in lines[1].split(","))
    errs = [float(r.split(",")[-1]) for r in lines[1:]]
    assert max(errs) == pytest.approx(summary["sup_error"]["total"], rel=1e-12)


def test_verify_demo_net_passes(tmp_path, net_file):
    out = tmp_path / "ff.json"
    main(["compile-ffnet", "--net", str(net_file), "--eps", "1e-2", "--out", str(out)])
    assert main(["verify", "--schedule", str(out), "--net", str(net_file), "--grid", "21"]) == 0


def test_verify_detects_corrupted_schedule(sin_schedule, tmp_path):
    data = load_json(sin_schedule)
    # scale one multiply-batch coefficient by 10%
    seg = data["segments"][7]
    seg["linear"][0][2] *= 1.1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(data))
    assert main(["verify", "--schedule", str(bad), "--target", "sin1d", "--grid", "21"]) == 1


def test_verify_target_mismatch(sin_schedule):
    assert main(["verify", "--schedule", str(sin_schedule), "--target", "cos2d",
                 "--grid", "3"]) == 2


def test_check_gadgets_seed7(capsys):
    assert main(["check", "--suite", "gadgets", "--seed", "7"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"]


def test_check_lemma5_prints_ratio(capsys):
    assert main(["check", "--suite", "lemma5"]) == 0
    captured = capsys.readouterr()
    assert "max observed/bound" in captured.err
    recs = json.loads(captured.out)["results"][0]["records"]
    assert max(r["max_ratio"] for r in recs) <= 1.0


def test_check_bootstrap_reports_mu2(monkeypatch, capsys, tmp_path):
    # the full c grid is exercised by the acceptance suite; keep this one quick
    monkeypatch.setitem(checks.SUITES, "bootstrap",
                        lambda seed: [checks.check_bootstrap(seed, points=5, cs=(5.0,))])
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["check", "--suite", "bootstrap", "--seed", "3", "--report", str(a)]) == 0
    assert "mu(2) residual" in capsys.readouterr().err
    main(["check", "--suite", "bootstrap", "--seed", "3", "--report", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_gadget_ln_and_mul(tmp_path, capsys):
    assert main(["gadget", "ln", "--out", str(tmp_path / "ln.json")]) == 0
    assert main(["gadget", "mul", "--w", "2,1", "--out", str(tmp_path / "m.json")]) == 0
    capsys.readouterr()
    assert main(["simulate", "--schedule", str(tmp_path / "m.json"), "--input", "0.5,0.4"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.1, rel=1e-9)
    assert main(["gadget", "mul", "--out", str(tmp_path / "m2.json")]) == 2


def test_compile_reports_are_deterministic(tmp_path):
    outs = []
    for n in range(2):
        out = tmp_path / f"s{n}.json"
        main(["compile-sobolev", "--target", "sin1d", "--order", "2", "--dim", "1",
              "--eps", "0.2", "--out", str(out), "--report", str(tmp_path / f"r{n}.json")])
        outs.append((out.read_bytes(), (tmp_path / f"r{n}.json").read_bytes()))
    assert outs[0] == outs[1]
