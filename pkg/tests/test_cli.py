import json
import subprocess
import sys

import numpy as np
import pytest

from mimic.cli import read_paths_csv, run
from mimic.config import RunConfig, parse_config
from mimic.errors import ConfigError
from mimic.families import get_family
from mimic.hedge import ensemble_slacks
from mimic.simulate import simulate


def write_cfg(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw, indent=2))
    return str(p)


def run_json(capsys, argv):
    code = run(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_tv_uniform(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="uniform", eps=0.0, T=1.0, n_paths=1)
    code, out = run_json(capsys, ["tv", "--config", cfg])
    assert code == 0
    assert out["bound"] == pytest.approx(0.666667, abs=1e-6)


def test_tv_gaussian_reports_constants(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="gaussian", eps=0.1, T=1.0, n_paths=2000, seed=3)
    code, out = run_json(capsys, ["tv", "--config", cfg])
    assert code == 0
    assert out["C"] <= out["C_upper"]
    assert out["bound"] == pytest.approx(out["attained"], rel=1e-5)
    assert abs(out["mc_estimate"] - out["attained"]) <= 4 * out["mc_se"]


def test_malformed_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "family": "uniform",,\n}')
    assert run(["tv", "--config", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_unknown_key_reports_line(tmp_path, capsys):
    p = tmp_path / "cfg.json"
    p.write_text('{\n  "family": "uniform",\n  "bogus": 1\n}')
    assert run(["tv", "--config", str(p)]) == 2
    assert "line 3: unknown key 'bogus'" in capsys.readouterr().err


@pytest.mark.parametrize("text", ['{"eps": true}', '{"n_paths": 1.5}', '{"eps": 2, "T": 1}',
                                  '{"family": "nope"}', '{"kernel": "nope"}', '[1]',
                                  '{"eps": 0.1, "eps": 0.2}'])
def test_config_rejections(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_defaults_round_trip():
    cfg = parse_config('{"family": "uniform", "checkpoints": [0.5, 1]}')
    assert cfg.checkpoints == [0.5, 1.0]
    assert RunConfig(**cfg.to_dict()) == cfg


def test_missing_config_file(tmp_path):
    assert run(["tv", "--config", str(tmp_path / "none.json")]) == 2


def test_bad_subcommand():
    assert run(["fly"]) == 2


def test_frozen_check_marginals_fails(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="gaussian", eps=0.1, T=1.0, n_paths=3000, freeze=True,
                    checkpoints=[1.0])
    code, out = run_json(capsys, ["check-marginals", "--config", cfg])
    assert code == 3 and out["passed"] is False


def test_check_marginals_passes(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="uniform", eps=0.1, T=1.0, n_paths=3000)
    code, out = run_json(capsys, ["check-marginals", "--config", cfg])
    assert code == 0 and out["passed"] is True


def test_round_trip_bit_exact(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="gaussian", eps=0.1, T=1.0, n_paths=500, seed=11)
    csv, summ = str(tmp_path / "paths.csv"), str(tmp_path / "summary.json")
    assert run(["simulate", "--config", cfg, "--out", csv, "--summary", summ]) == 0
    capsys.readouterr()
    summary = json.loads(open(summ).read())
    assert summary["config"]["seed"] == 11 and "marginals" in summary
    mem = simulate(parse_config(open(cfg).read()).sim_config())
    disk = read_paths_csv(csv, 1.0)
    for f in ("x0", "offsets", "times", "values"):
        np.testing.assert_array_equal(getattr(mem, f), getattr(disk, f))
    fam = get_family("gaussian")
    np.testing.assert_array_equal(ensemble_slacks(mem, fam)[0], ensemble_slacks(disk, fam)[0])
    code, out = run_json(capsys, ["hedge-check", "--config", cfg, "--paths", csv])
    assert code == 0 and out["violations"] == 0
    assert out["mean_tv"] == float(np.mean(mem.tv()))


def test_corrupt_paths_file(tmp_path):
    cfg = write_cfg(tmp_path, family="uniform", eps=0.1, T=1.0)
    bad = tmp_path / "p.csv"
    bad.write_text("path_id,event_index,time,value\n0,0,0.1,0.0\n0,1,0.05,0.3\n")
    assert run(["hedge-check", "--config", cfg, "--paths", str(bad)]) == 2


def test_seed_override(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="uniform", eps=0.1, T=1.0, n_paths=200, seed=1)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    run(["simulate", "--config", cfg, "--out", a])
    run(["simulate", "--config", cfg, "--out", b, "--seed-override", "2"])
    capsys.readouterr()
    assert open(a).read() != open(b).read()
    run(["simulate", "--config", cfg, "--out", b, "--seed-override", "1"])
    assert open(a).read() == open(b).read()


def test_threads_env(tmp_path, capsys, monkeypatch):
    cfg = write_cfg(tmp_path, family="gaussian", eps=0.1, T=1.0, n_paths=400, chunk=100)
    a, b = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    run(["simulate", "--config", cfg, "--out", a, "--threads", "1"])
    monkeypatch.setenv("MIMIC_THREADS", "2")
    run(["simulate", "--config", cfg, "--out", b])
    assert open(a).read() == open(b).read()
    monkeypatch.setenv("MIMIC_THREADS", "many")
    assert run(["simulate", "--config", cfg, "--out", b]) == 2


def test_transport_dump(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="uniform", t=1.0)
    out = str(tmp_path / "k.csv")
    code = run(["transport-dump", "--config", cfg, "--out", out, "--x-grid", "0.3:0.3:1"])
    assert code == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1, ndmin=2)
    assert rows[0].tolist() == pytest.approx([0.3, -1.0, 1.0, 0.65])
    assert json.loads(capsys.readouterr().out)["l1"] <= 1e-4


def test_transport_dump_gaussian(tmp_path, capsys):
    cfg = write_cfg(tmp_path, family="gaussian")
    out = str(tmp_path / "k.csv")
    assert run(["transport-dump", "--config", cfg, "--out", out, "--t", "0.25"]) == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    np.testing.assert_allclose(rows[:, 3] * rows[:, 2] + (1 - rows[:, 3]) * rows[:, 1],
                               rows[:, 0], atol=1e-9)


def test_psi_dump(tmp_path):
    cfg = write_cfg(tmp_path, family="gaussian", grid=41)
    out = str(tmp_path / "psi.csv")
    assert run(["psi-dump", "--config", cfg, "--out", out, "--t", "1"]) == 0
    rows = np.loadtxt(out, delimiter=",", skiprows=1)
    x, psi = rows[:, 0], rows[:, 4]
    assert np.all(psi <= np.abs(x) + 1e-9)


def test_bad_x_grid(tmp_path):
    cfg = write_cfg(tmp_path, family="uniform")
    assert run(["transport-dump", "--config", cfg, "--x-grid", "1:0:3"]) == 2


def test_console_entry_point(tmp_path):
    cfg = write_cfg(tmp_path, family="uniform", eps=0.0, n_paths=1)
    res = subprocess.run([sys.executable, "-m", "mimic.cli", "tv", "--config", cfg],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["bound"] == pytest.approx(2 / 3, abs=1e-12)
