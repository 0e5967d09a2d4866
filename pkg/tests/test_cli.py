import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from codedcache.cli import SWEEP_HEADER, main, run_chunk_popularity_report, run_sweep
from codedcache.config import parse_config
from codedcache.errors import ConfigError, DecodeError

BASE = {
    "model": {"N": 3, "B": 2, "alpha": 1.0, "beta": 1.0, "arrivals": {"deterministic": 2}},
    "M_grid": [0.0, 0.5, 1.5, 3.0],
    "schemes": ["RAN", "UNCODED", "MAN", "PCC", "LB"],
    "allocations": ["PCA"],
    "bound": {"points": 16},
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg, indent=2))
    return str(path)


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def run(capsys, argv):
    rc = main(argv)
    out, err = capsys.readouterr()
    return rc, out, err


def test_sweep_rows(tmp_path, capsys):
    rc, out, _ = run(capsys, ["sweep", "--config", write(tmp_path, BASE)])
    assert rc == 0
    assert out.splitlines()[0] == ",".join(SWEEP_HEADER)
    table = rows(out)
    assert len(table) == 4 * 5
    by = {(float(r["M"]), r["scheme"]): r for r in table}
    for M in BASE["M_grid"]:
        assert by[(M, "UNCODED")]["analytic_rate"] == by[(M, "RAN")]["analytic_rate"]
        for s in ("RAN", "MAN", "PCC"):
            assert float(by[(M, s)]["lower_bound"]) <= float(by[(M, s)]["analytic_rate"]) + 1e-12
    for s in ("RAN", "UNCODED", "MAN", "PCC", "LB"):
        assert float(by[(3.0, s)]["analytic_rate"]) == 0.0
    Ms = [float(r["M"]) for r in table]
    assert Ms == sorted(Ms)


def test_sweep_is_reproducible_and_thread_independent(tmp_path, capsys):
    cfg = dict(BASE, M_grid=[0.5, 1.0], schemes=["MAN", "PCC"],
               simulation={"enabled": True, "num_slots": 200})
    path = write(tmp_path, cfg)
    outs = []
    for threads in ("1", "1", "2"):
        rc, out, _ = run(capsys, ["sweep", "--config", path, "--threads", threads])
        assert rc == 0
        outs.append([{k: v for k, v in r.items() if k != "wallclock"} for r in rows(out)])
    assert outs[0] == outs[1] == outs[2]
    assert all(r["sim_mean"] != "" for r in outs[0])


def test_rate_command(tmp_path, capsys):
    out_path = tmp_path / "rate.csv"
    rc, _, _ = run(capsys, ["rate", "--config", write(tmp_path, BASE), "--out", str(out_path)])
    assert rc == 0
    table = rows(out_path.read_text())
    pcc = [r for r in table if r["scheme"] == "PCC"]
    assert all(float(r["delta_phi1"]) >= 0 and float(r["delta_phi2"]) >= 0 for r in pcc)
    man = [r for r in table if r["scheme"] == "MAN"]
    assert all(r["delta_phi1"] == "" for r in man)


def test_optimize_then_simulate_with_Q(tmp_path, capsys):
    cfg = dict(BASE, M=1.0, M_grid=None, allocations=["OCA"], oca={"max_iter": 20})
    del cfg["M_grid"]
    q_path = tmp_path / "q.csv"
    rc, _, err = run(capsys, ["optimize", "--config", write(tmp_path, cfg), "--out", str(q_path)])
    assert rc == 0
    trace = json.loads(err.strip().splitlines()[-1])
    assert trace["method"] == "OCA" and trace["achieved_rate"] > 0
    assert q_path.read_text().startswith("file_index,chunk_index,q\n")
    sim = dict(cfg, Q_csv=str(q_path), schemes=["PCC"], simulation={"num_slots": 100})
    trace_path = tmp_path / "trace.csv"
    rc, out, _ = run(capsys, ["simulate", "--config", write(tmp_path, sim, "s.json"), "--seed", "4",
                              "--trace", str(trace_path)])
    assert rc == 0
    assert rows(out)[0]["scheme"] == "PCC" and rows(out)[0]["seed"] == "4"
    assert len(trace_path.read_text().splitlines()) == 101


def test_sync_mode_flag(tmp_path, capsys):
    cfg = dict(BASE, M=0.5, schemes=["PCC"], simulation={"num_slots": 600})
    del cfg["M_grid"]
    path = write(tmp_path, cfg)
    _, a, _ = run(capsys, ["simulate", "--config", path, "--mode", "async"])
    _, s, _ = run(capsys, ["simulate", "--config", path, "--mode", "sync"])
    assert float(rows(s)[0]["mean"]) < float(rows(a)[0]["mean"])


def test_bound_command(tmp_path, capsys):
    rc, out, _ = run(capsys, ["bound", "--config", write(tmp_path, BASE)])
    assert rc == 0
    vals = [float(r["rate"]) for r in rows(out)]
    assert vals[-1] == 0.0 and np.all(np.diff(vals) <= 1e-15)


def test_chunk_report():
    cfg = parse_config(json.dumps({
        "model": {"N": 5, "B": 3}, "M": 1,
        "chunk_report": {"alphas": [1, 0], "betas": [1, 0]},
    }))
    table = run_chunk_popularity_report(cfg)
    first = [r[4] for r in table if r[:3] == (1.0, 1.0, 1)]
    np.testing.assert_allclose(first, [1 / 3, 1 / 6, 1 / 9], rtol=1e-14)
    flat = [r[4] for r in table if r[:2] == (0.0, 0.0)]
    np.testing.assert_allclose(flat, 0.2, rtol=1e-14)
    for a in (1.0, 0.0):
        for b in (1.0, 0.0):
            for i in range(1, 6):
                row = [r[4] for r in table if r[:3] == (a, b, i)]
                assert np.all(np.diff(row) <= 0)


@pytest.mark.parametrize("patch,field", [
    ({"M_grid": [0.5, 4.0]}, "M_grid"),
    ({"schemes": ["PCC", "XOR"]}, "schemes"),
    ({"model": {"N": 0, "B": 2}}, "model.N"),
    ({"model": {"N": "3", "B": 2}}, "model.N"),
    ({"simulation": {"num_slots": 5}}, "simulation.num_slots"),
    ({"model": {"N": 3, "B": 2, "alpha": -1}}, "model"),
])
def test_config_errors_name_the_field(tmp_path, capsys, patch, field):
    rc, _, err = run(capsys, ["rate", "--config", write(tmp_path, dict(BASE, **patch))])
    assert rc == 2
    assert f"field '{field}'" in err and "line " in err


def test_json_syntax_error_reports_line(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "model": {"N": 3,\n  "B": 2\n')
    rc, _, err = run(capsys, ["rate", "--config", str(path)])
    assert rc == 2 and "line 4" in err


def test_missing_config_and_bad_flags(tmp_path, capsys):
    assert run(capsys, ["rate", "--config", str(tmp_path / "none.json")])[0] == 2
    path = write(tmp_path, BASE)
    assert run(capsys, ["sweep", "--config", path, "--threads", "0"])[0] == 2
    assert run(capsys, ["sweep", "--config", path, "--seed", "-1"])[0] == 2
    assert run(capsys, ["simulate", "--config", path])[0] == 2  # needs a single M


def test_internal_failure_exit_code(tmp_path, capsys, monkeypatch):
    import codedcache.cli as cli

    def boom(cfg, args):
        raise DecodeError("user 1 cannot recover W11")

    monkeypatch.setitem(cli.COMMANDS, "rate", boom)
    rc, _, err = run(capsys, ["rate", "--config", write(tmp_path, BASE)])
    assert rc == 3 and "W11" in err


def test_parse_config_grid_forms():
    cfg = parse_config(json.dumps(dict(BASE, M_grid={"start": 0, "stop": 3, "num": 4})))
    assert cfg.M_grid == [0.0, 1.0, 2.0, 3.0]
    with pytest.raises(ConfigError):
        parse_config(json.dumps(dict(BASE, mode="sync", model={"N": 3, "B": 2, "arrivals": {"pmf": [0.5, 0.5]}}))).schedule()


def test_run_sweep_direct():
    cfg = parse_config(json.dumps(dict(BASE, M_grid=[1.0], schemes=["RAN", "PCC"], allocations=["PCA", "OCA"],
                                       oca={"max_iter": 20})))
    table = run_sweep(cfg)
    assert [(r[1], r[2]) for r in table] == [("RAN", "OCA"), ("RAN", "PCA"), ("PCC", "OCA"), ("PCC", "PCA")]
    pcc = {r[2]: r[3] for r in table if r[1] == "PCC"}
    assert pcc["OCA"] <= pcc["PCA"] + 1e-9


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "codedcache.cli", "bound", "--config", write(tmp_path, BASE)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("scheme,M,rate")
