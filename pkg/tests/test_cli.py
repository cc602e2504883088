import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rotorlab.cli import (ConfigError, RunConfig, VERIFY_CHECKS, interval_deviation, log_checkpoints, main,
                          parse_checkpoints)
from rotorlab.io import SCHEMAS, read_csv, read_pgm, render_order, schema_line
from rotorlab.engine import aggregate, read_snapshot
from rotorlab.rotors import nesw


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# -- config -------------------------------------------------------------------

def test_config_defaults_round_trip():
    cfg = RunConfig()
    assert RunConfig.from_text(cfg.to_text()) == cfg


@given(st.sampled_from(["aggregate", "verify", "orthant"]), st.integers(1, 4), st.integers(1, 10**7),
       st.floats(1e-14, 1.0), st.booleans(), st.text("abc,:0123456789", max_size=12))
def test_config_round_trip(command, d, n, tol, ball, order):
    cfg = RunConfig(command=command, d=d, n=n, tol=tol, ball=ball, order=order.strip())
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ConfigError):
        RunConfig.from_text("n = 10\ncolour = red\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("n = ten\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("n = 1\nn = 2\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("just words\n")
    cfg = RunConfig.from_text("# comment\n\nn = 1e4\nball = yes\n")
    assert cfg.n == 10_000 and cfg.ball is True


def test_config_file_with_overrides(tmp_path, capsys):
    p = tmp_path / "run.cfg"
    p.write_text("command = aggregate\nn = 10\npolicy = nesw\n")
    code, out, _ = run(capsys, "--config", str(p), "--dump-config")
    assert code == 0 and RunConfig.from_text(out).n == 10
    code, out, _ = run(capsys, "aggregate", "--config", str(p), "-n", "3")
    assert code == 0 and "A_3 = {o,(1,0),(0,-1)}" in out
    p.write_text("n = 10\nfoo = 1\n")
    code, _, err = run(capsys, "--config", str(p))
    assert code == 2 and "foo" in err


def test_checkpoints():
    assert log_checkpoints(10**5) == [100, 316, 1000, 3162, 10000, 31623, 100000]
    assert log_checkpoints(50) == [50]
    assert log_checkpoints(2000) == [100, 316, 1000, 2000]
    assert parse_checkpoints("10,5,1e3", 500) == [5, 10, 500]


# -- commands -----------------------------------------------------------------

def test_aggregate_prints_three_particle_example(capsys):
    code, out, _ = run(capsys, "aggregate", "-d", "2", "-n", "3", "--policy", "nesw")
    assert code == 0
    assert out.splitlines()[0] == "A_3 = {o,(1,0),(0,-1)}"


def test_aggregate_outputs(tmp_path, capsys):
    csv, pgm, snap = tmp_path / "c.csv", tmp_path / "r.pgm", tmp_path / "s.rrl"
    code, out, _ = run(capsys, "aggregate", "-n", "2000", "--csv", str(csv), "--render", str(pgm),
                       "--snapshot", str(snap))
    assert code == 0
    schema, rows = read_csv(csv)
    assert schema == schema_line("shape-curve")
    assert [int(r["n"]) for r in rows] == [100, 316, 1000, 2000]
    assert list(rows[0]) == SCHEMAS["shape-curve"]
    img = read_pgm(pgm)
    assert img.dtype == np.uint8 and (img < 255).sum() == 2000
    st_ = read_snapshot(snap)
    assert st_.particles_placed == 2000 and int(rows[-1]["T_n"]) == st_.total_steps


def test_resume_gives_identical_csv(tmp_path, capsys):
    full, part, snap = tmp_path / "full.csv", tmp_path / "part.csv", tmp_path / "s.rrl"
    assert run(capsys, "aggregate", "-n", "3162", "--policy", "nesw", "--csv", str(full))[0] == 0
    assert run(capsys, "aggregate", "-n", "1000", "--policy", "nesw", "--csv", str(part),
               "--snapshot", str(snap))[0] == 0
    assert run(capsys, "aggregate", "-n", "3162", "--policy", "nesw", "--csv", str(part),
               "--resume", str(snap))[0] == 0
    assert full.read_bytes() == part.read_bytes()


def test_snapshot_interval(tmp_path, capsys):
    snap = tmp_path / "s.rrl"
    run(capsys, "aggregate", "-n", "1000", "--snapshot", str(snap), "--snapshot-every", "300")
    assert read_snapshot(snap).particles_placed == 1000
    # the interval snapshots are the prefixes of the final run
    run(capsys, "aggregate", "-n", "650", "--snapshot", str(snap), "--snapshot-every", "300")
    assert read_snapshot(snap).particles_placed == 650


def test_shape_curve_to_stdout(capsys):
    code, out, err = run(capsys, "shape-curve", "-n", "500", "--checkpoints", "100,250")
    lines = out.splitlines()
    assert code == 0 and lines[0] == schema_line("shape-curve")
    assert [l.split(",")[0] for l in lines[2:]] == ["100", "250", "500"]
    assert "T_n=" in err


def test_idla_seed_replay(tmp_path, capsys):
    a = run(capsys, "idla", "-n", "300", "--seed", "5")[1]
    b = run(capsys, "idla", "-n", "300", "--seed", "5")[1]
    c = run(capsys, "idla", "-n", "300", "--seed", "6")[1]
    assert a == b and a != c


def test_verify_default_suite_passes(capsys):
    code, out, _ = run(capsys, "verify", "-d", "2", "-n", "1000")
    recs = [json.loads(l) for l in out.splitlines()]
    assert code == 0
    assert {r["check"] for r in recs} == set(VERIFY_CHECKS) - {"interval-deviation"}
    assert all(r["pass"] for r in recs)


def test_verify_detects_skipped_increment(capsys):
    code, out, err = run(capsys, "verify", "-d", "2", "-n", "1000", "--inject-fault", "skip-increment")
    failed = {json.loads(l)["check"] for l in out.splitlines() if not json.loads(l)["pass"]}
    assert code != 0
    assert {"weight-inequality", "abelian"} <= failed
    for name in failed:
        assert code & (1 << VERIFY_CHECKS.index(name))
        assert name in err


def test_verify_interval_deviation_in_one_dimension(capsys):
    code, out, _ = run(capsys, "verify", "-d", "1", "-n", "100")
    rec = [json.loads(l) for l in out.splitlines() if json.loads(l)["check"] == "interval-deviation"][0]
    assert code == 0 and rec["pass"] and rec["value"] <= 2


def test_interval_deviation_bounded_across_scales():
    from rotorlab.rotors import default_cyclic
    dev = interval_deviation(aggregate(1000, default_cyclic(1)).sites)
    per_decade = [dev[9:100].max(), dev[100:1000].max()]
    assert max(per_decade) <= 1


def test_bruteforce_iso(tmp_path, capsys):
    csv = tmp_path / "iso.csv"
    code, out, _ = run(capsys, "bruteforce-iso", "-d", "2", "-n", "5", "--csv", str(csv))
    assert code == 0 and "12 shapes solved" in out
    schema, rows = read_csv(csv)
    assert schema == schema_line("iso") and rows[0]["n"] == "5"
    code, _, err = run(capsys, "bruteforce-iso", "-d", "2", "-n", "11")
    assert code == 3 and "n <= 10" in err


def test_orthant_inequality_line(tmp_path, capsys):
    csv = tmp_path / "mc.csv"
    code, out, _ = run(capsys, "orthant", "-d", "2", "-k", "1", "-r", "9", "--trials", "100000",
                       "--seed", "1", "--csv", str(csv))
    line = [l for l in out.splitlines() if "<=" in l][0]
    assert code == 0 and line.endswith("PASS")
    schema, rows = read_csv(csv)
    assert schema == schema_line("mc") and len(rows) == 2 and rows[0]["trials"] == "100000"
    assert run(capsys, "orthant", "-d", "2", "-k", "1", "-r", "9", "--trials", "100000",
               "--seed", "1")[1] == out


def test_exit_ball(capsys):
    code, out, _ = run(capsys, "exit", "--ball", "-d", "2", "-n", "10000")
    assert code == 0
    e_o = float(out.split("e_o=")[1].split()[0])
    ratio = float(out.split("ratio=")[1].split()[0])
    assert "n/pi=" in out and 0.95 <= ratio <= 1.05 and e_o > 3000
    code, out, _ = run(capsys, "exit", "--region", "3o!", "-d", "1")
    assert code == 0 and "max_e=4" in out


def test_usage_errors(capsys, monkeypatch):
    assert run(capsys, "aggregate", "-d", "7")[0] == 2
    assert run(capsys, "aggregate", "--policy", "nesw", "-d", "3")[0] == 2
    assert run(capsys, "exit", "-n", "10")[0] == 2
    monkeypatch.setenv("ROTORLAB_THREADS", "zero")
    assert run(capsys, "aggregate", "-n", "3")[0] == 2
    monkeypatch.setenv("ROTORLAB_THREADS", "1")
    assert run(capsys, "aggregate", "-n", "3")[0] == 0


def test_render_order_shading():
    agg = aggregate(200, nesw())
    img = render_order(agg.sites)
    lo = agg.sites.min(axis=0) - 2
    hi = agg.sites.max(axis=0) + 2
    first = img[hi[1] - 0, 0 - lo[0]]
    last = img[hi[1] - agg.sites[-1][1], agg.sites[-1][0] - lo[0]]
    assert first < last < 255
    with pytest.raises(ValueError):
        render_order(np.zeros((3, 3), int))
