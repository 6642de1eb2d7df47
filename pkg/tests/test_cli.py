import hashlib
import json

import numpy as np
import pytest

from permot import cli


def run(tmp_path, *argv):
    return cli.main(list(argv) + ["--out-dir", str(tmp_path)])


def test_lattice_example(tmp_path, capsys):
    assert run(tmp_path, "lattice", "--interval", "-1", "1", "--k", "2") == 0
    lines = (tmp_path / "lattice.csv").read_text().splitlines()
    assert lines[0] == "index,p_1" and len(lines) == 6
    assert "N = 5" in capsys.readouterr().out


def test_assign_example(tmp_path, capsys):
    (tmp_path / "c.csv").write_text("0,2\n3,1\n")
    assert run(tmp_path, "assign", "--cost", str(tmp_path / "c.csv")) == 0
    out = capsys.readouterr().out
    assert "C(sigma)=0.5" in out and "sigma = (1, 2)" in out


def test_unknown_flag_writes_nothing(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["lattice", "--k", "2", "--nonsense", "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_config_error_names_line(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"body": [0, 1],\n "k": }\n')
    out = tmp_path / "o"
    assert cli.main(["lattice", "--config", str(cfg), "--out-dir", str(out)]) == 2
    assert "line 2" in capsys.readouterr().err
    assert not out.exists()


def test_missing_field(tmp_path, capsys):
    assert run(tmp_path, "lattice", "--interval", "0", "1") == 2
    assert "'k'" in capsys.readouterr().err


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"body": [0, 1], "k": 5}))
    assert run(tmp_path, "lattice", "--config", str(cfg), "--k", "2") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["k"] == 2 and man["command"] == "lattice"


def test_manifest_digests(tmp_path):
    assert run(tmp_path, "solve-ma", "--beta", "2", "--interval", "0", "1", "--window", "0", "1",
               "--nodes", "201", "--ladder", "1", "4") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(man["outputs"]) >= {"solve_ma.csv", "solve_ma.svg", "ladder.dat"}
    for name, digest in man["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    gaps = [float(l.split()[1]) for l in (tmp_path / "ladder.dat").read_text().splitlines()
            if l and not l.startswith("#")]
    assert gaps[0] > gaps[1]


def test_same_manifest_same_bytes(tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"body": [0, 1], "k": 3, "window": [0, 1]}))
    args = ["transport-map", "--spec", str(spec), "--queries", "0.25", "0.75", "--M", "50",
            "--seed", "7"]
    assert run(tmp_path / "a", *args) == 0
    assert run(tmp_path / "b", *args) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma == mb
    assert (tmp_path / "a" / "transport_map.csv").read_text().startswith("x,T_N,stderr")


def test_precision_loss_exit_code(tmp_path, capsys):
    a = np.random.default_rng(0).uniform(-800, 800, (7, 7))
    np.savetxt(tmp_path / "k.csv", a, delimiter=",")
    assert run(tmp_path / "o", "permanent", "--kernel", str(tmp_path / "k.csv")) == 1
    assert "PrecisionLossError" in capsys.readouterr().err


def test_permanent_outputs(tmp_path, capsys):
    (tmp_path / "k.csv").write_text("1,2\n3,4\n")
    assert run(tmp_path, "permanent", "--kernel", str(tmp_path / "k.csv"), "--scale", "linear") == 0
    row = (tmp_path / "permanent.csv").read_text().splitlines()[1].split(",")
    lp, lo, hi = map(float, row)
    assert lp == pytest.approx(np.log(10)) and lo <= lp <= hi


def test_envelope_then_ma_round_trip(tmp_path):
    assert run(tmp_path, "envelope", "--interval", "-1", "1", "--weight", "x**2",
               "--window", "-2", "2", "--nodes", "401") == 0
    pot = tmp_path / "envelope.csv"
    assert pot.read_text().startswith("x_1,value")
    assert run(tmp_path / "m", "ma", "--interval", "-1", "1", "--potential", str(pot),
               "--cells", "4") == 0
    masses = np.loadtxt(tmp_path / "m" / "ma.csv", delimiter=",", skiprows=1)[:, 1]
    assert masses.sum() == pytest.approx(2.0)
    np.testing.assert_allclose(masses[[0, 3]], 0.0, atol=1e-12)


def test_verify_positional_and_failure_code(tmp_path, monkeypatch):
    from permot import acceptance

    assert run(tmp_path, "verify", "4") == 0
    monkeypatch.setitem(acceptance.CRITERIA, 4,
                        lambda: acceptance.CriterionResult(4, "forced", False))
    assert run(tmp_path, "verify", "4") == 1
    assert run(tmp_path, "verify", "--suite", "nope") == 2


def test_emit_plot_data_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        cli.emit_plot_data({"T_N": ([], [])}, tmp_path, "x", "x", "T_N")
    with pytest.raises(ValueError):
        cli.emit_plot_data({}, tmp_path, "x", "x", "T_N")


def test_svg_is_deterministic(tmp_path):
    a = cli.emit_plot_data({"T_N": ([0, 1], [0, 1])}, tmp_path, "a", "x", "T_N")[1]
    b = cli.emit_plot_data({"T_N": ([0, 1], [0, 1])}, tmp_path, "b", "x", "T_N")[1]
    assert a.read_bytes() == b.read_bytes()


def test_read_grid_function_rejects_uneven(tmp_path):
    (tmp_path / "g.csv").write_text("x_1,value\n0,0\n0.1,1\n0.5,2\n")
    with pytest.raises(cli.ConfigError):
        cli.read_grid_function(tmp_path / "g.csv")


def test_envelope_window_margin(tmp_path, capsys):
    assert run(tmp_path / "o", "envelope", "--interval", "-1", "1", "--weight", "x**2",
               "--window", "-0.4", "0.4", "--margin", "0.1") == 2
    assert "margin" in capsys.readouterr().err
    assert run(tmp_path, "envelope", "--interval", "-1", "1", "--weight", "x**2",
               "--window", "-3", "3", "--margin", "1") == 0
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["config"]["window_margin"] == pytest.approx(6.25)
