import csv
import json
from importlib import resources

import numpy as np
import pytest

from belh import __version__, cli
from belh import diagnostics as dg
from belh import dynamics as dy


def packaged(name):
    return (resources.files("belh") / "configs" / f"{name}.ini").read_text()


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_packaged_configs_listed():
    names = cli.packaged_configs()
    for n in ("run_minimal", "energy_32", "uniaxial_stable", "uniaxial_unstable",
              "compare_uniaxial", "tail_demo", "eps_sweep"):
        assert n in names


# verify ---------------------------------------------------------------------------

def test_verify_passes(tmp_path, capsys):
    assert cli.main(["verify", "--out", str(tmp_path), "--samples", "100000"]) == 0
    out = capsys.readouterr().out
    assert "cancellation" in out and "FAIL" not in out
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert rep["passed"] and rep["failed"] == []


def test_verify_xi_subset(tmp_path):
    assert cli.main(["verify", "--out", str(tmp_path), "--xi", "-1", "0", "1",
                     "--samples", "10000"]) == 0


def test_verify_catches_tau_sign_mutation(tmp_path, capsys):
    code = cli.main(["verify", "--out", str(tmp_path), "--mutate", "tau-sign",
                     "--samples", "10000"])
    assert code == cli.EXIT_VERIFY
    rep = json.loads((tmp_path / "verify.json").read_text())
    assert not rep["passed"]
    assert any("cancellation" in name for name in rep["failed"])
    assert "FAILED" in capsys.readouterr().out


# run -------------------------------------------------------------------------------

def test_run_minimal_columns_and_manifest(tmp_path):
    assert cli.main(["run", "--config", "run_minimal", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "diagnostics.csv")
    assert rows[0] == dg.csv_header(())
    assert len(rows) == 12   # header and 11 records
    assert float(rows[-1][0]) == pytest.approx(0.1)
    m = cli.RunManifest.read(tmp_path / "manifest.json")
    assert m.subcommand == "run" and m.status == "ok" and m.version == __version__
    assert m.seed == 7 and m.config == packaged("run_minimal")
    assert m.finished >= m.started


def test_manifest_round_trip(tmp_path):
    m = cli.RunManifest(subcommand="run", config="[x]\n", config_source="a.ini", seed=3,
                        version="1", out_dir=str(tmp_path), started="now",
                        extra={"k": [1.5, None]})
    m.write(tmp_path / "m.json")
    assert cli.RunManifest.read(tmp_path / "m.json") == m
    assert not (tmp_path / "m.json.tmp").exists()


def test_run_deterministic_and_reproducible_from_manifest(tmp_path):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(["run", "--config", "run_minimal", "--out", str(a), "--seed", "5"]) == 0
    assert cli.main(["run", "--config", "run_minimal", "--out", str(b), "--seed", "5"]) == 0
    assert (a / "diagnostics.csv").read_bytes() == (b / "diagnostics.csv").read_bytes()
    m = cli.RunManifest.read(a / "manifest.json")
    cfg = tmp_path / "snapshot.ini"
    cfg.write_text(m.config)
    assert cli.main(["run", "--config", str(cfg), "--out", str(c), "--seed", str(m.seed)]) == 0
    assert (a / "diagnostics.csv").read_bytes() == (c / "diagnostics.csv").read_bytes()
    other = tmp_path / "d"
    assert cli.main(["run", "--config", "run_minimal", "--out", str(other), "--seed", "6"]) == 0
    assert (a / "diagnostics.csv").read_bytes() != (other / "diagnostics.csv").read_bytes()


def test_run_checkpoint(tmp_path):
    assert cli.main(["run", "--config", "run_minimal", "--out", str(tmp_path),
                     "--checkpoint-every", "5"]) == 0
    state, params = dy.read_checkpoint(tmp_path / "checkpoint.bin")
    assert state.t == pytest.approx(0.1) and params.xi == 0.5


def _write_minimal(tmp_path, transform):
    p = tmp_path / "cfg.ini"
    p.write_text(transform(packaged("run_minimal")))
    return p


def test_missing_key_named(tmp_path, capsys):
    p = _write_minimal(tmp_path, lambda t: t.replace("dt = 0.01\n", ""))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert "'dt'" in err and "[time]" in err
    m = cli.RunManifest.read(tmp_path / "o" / "manifest.json")
    assert m.status.startswith("config error")


def test_unknown_key_with_line(tmp_path, capsys):
    p = _write_minimal(tmp_path, lambda t: t.replace("dt = 0.01", "dt = 0.01\ndtt = 3"))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    lines = p.read_text().splitlines()
    n = lines.index("dtt = 3") + 1
    assert f"cfg.ini:{n}" in capsys.readouterr().err


def test_bad_values_and_missing_file(tmp_path, capsys):
    p = _write_minimal(tmp_path, lambda t: t.replace("n = 16", "n = sixteen"))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    p = _write_minimal(tmp_path, lambda t: t.replace("n = 16", "n = 7"))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", str(tmp_path / "nope.ini"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "not found" in capsys.readouterr().err


def test_numerical_failure_exit(tmp_path, capsys):
    p = _write_minimal(tmp_path, lambda t: t.replace("dt = 0.01", "dt = 5.0").replace("T = 0.1", "T = 10"))
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == cli.EXIT_NUMERIC
    assert "t=" in capsys.readouterr().err


def test_threads_flag_and_env(monkeypatch, tmp_path):
    args = cli.build_parser().parse_args(["run", "--config", "x"])
    monkeypatch.delenv("BELH_THREADS", raising=False)
    assert cli.threads(args) == 1
    monkeypatch.setenv("BELH_THREADS", "3")
    assert cli.threads(args) == 3
    args = cli.build_parser().parse_args(["run", "--config", "x", "--threads", "2"])
    assert cli.threads(args) == 2
    monkeypatch.setenv("BELH_THREADS", "many")
    assert cli.main(["run", "--config", "run_minimal", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_threads_do_not_change_results(monkeypatch, tmp_path):
    monkeypatch.setenv("BELH_THREADS", "2")
    assert cli.main(["run", "--config", "run_minimal", "--out", str(tmp_path / "a")]) == 0
    monkeypatch.delenv("BELH_THREADS")
    assert cli.main(["run", "--config", "run_minimal", "--out", str(tmp_path / "b")]) == 0
    a = np.loadtxt(tmp_path / "a" / "diagnostics.csv", delimiter=",", skiprows=1)
    b = np.loadtxt(tmp_path / "b" / "diagnostics.csv", delimiter=",", skiprows=1)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_csv_sink_flushes_each_row(tmp_path):
    sink = cli._CsvSink(tmp_path / "x.csv", ["a", "b"])
    sink.row([0.1, 2])
    assert read_csv(tmp_path / "x.csv") == [["a", "b"], ["0.10000000000000001", "2"]]
    sink.close()


# suites -----------------------------------------------------------------------------

def test_uniaxial_stable_and_unstable(tmp_path, capsys):
    assert cli.main(["uniaxial", "--config", "uniaxial_stable", "--out", str(tmp_path / "s")]) == 0
    assert cli.main(["uniaxial", "--config", "uniaxial_unstable", "--out", str(tmp_path / "u")]) == 0
    out = capsys.readouterr().out
    assert "bounded" in out and "blow-up at t=" in out
    s = read_csv(tmp_path / "s" / "summary.csv")
    u = read_csv(tmp_path / "u" / "summary.csv")
    assert s[1][3] == "0" and u[1][3] == "1"
    assert 0 < float(u[1][4]) < 5
    series = read_csv(tmp_path / "u" / "scalar_a0_b0_c-1.csv")
    assert series[0] == ["time", "max_q", "moment", "dt", "comparison"]
    assert float(series[-1][1]) >= 1e6
    m = cli.RunManifest.read(tmp_path / "u" / "manifest.json")
    assert m.extra["runs"][0]["blowup"] is True


def test_uniaxial_sweep(tmp_path):
    assert cli.main(["uniaxial", "--config", "uniaxial_sweep", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "summary.csv")
    assert [r[2] for r in rows[1:]] == ["1", "-1"]
    assert [r[3] for r in rows[1:]] == ["0", "1"]


def test_compare_uniaxial_packaged(tmp_path, capsys):
    assert cli.main(["compare-uniaxial", "--config", "compare_uniaxial",
                     "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "compare.csv")
    assert float(rows[-1][0]) == pytest.approx(0.5)
    assert max(float(r[1]) for r in rows[1:]) <= 1e-8
    m = cli.RunManifest.read(tmp_path / "manifest.json")
    assert m.extra["passed"] is True


def _compare_cfg(tmp_path, extra):
    p = tmp_path / "cmp.ini"
    p.write_text("[scalar]\nlength = 3.141592653589793\nnodes = 1024\ndt = 0.001\nT = 0.01\n"
                 "a = -0.5\nc = 1.0\namp = 0.5\n" + extra)
    return p


def test_compare_uniaxial_tolerance_failure(tmp_path):
    p = _compare_cfg(tmp_path, "[tensor]\nn = 64, 8, 8\ntol = 1e-15\n")
    assert cli.main(["compare-uniaxial", "--config", str(p), "--out", str(tmp_path / "o")]) == 4


def test_compare_uniaxial_rejects_quadratic(tmp_path):
    p = _compare_cfg(tmp_path, "").read_text().replace("a = -0.5", "a = -0.5\nb = 1.0")
    (tmp_path / "q.ini").write_text(p)
    assert cli.main(["compare-uniaxial", "--config", str(tmp_path / "q.ini"),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_tail_small(tmp_path):
    text = packaged("tail_demo").replace("n = 64", "n = 32").replace("T = 0.5", "T = 0.05")
    text = text.replace("box = 3.0", "box = 1.5").replace("tail_radii = 1, 2, 4", "tail_radii = 0.5, 1, 2")
    p = tmp_path / "tail.ini"
    p.write_text(text)
    assert cli.main(["tail", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    head = read_csv(tmp_path / "o" / "diagnostics.csv")[0]
    assert "Y_R0.5" in head and "flux_R2" in head
    summ = read_csv(tmp_path / "o" / "tail_summary.csv")
    assert len(summ) == 4
    Y = [float(r[1]) for r in summ[1:]]
    assert Y[0] > Y[1] > Y[2]
    m = cli.RunManifest.read(tmp_path / "o" / "manifest.json")
    assert m.extra["Y_monotone"]


def test_tail_requires_radii(tmp_path):
    assert cli.main(["tail", "--config", "run_minimal", "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_eps_sweep_small(tmp_path):
    text = packaged("eps_sweep").replace("n = 24", "n = 16").replace("T = 20.0", "T = 0.5")
    text = text.replace("eps = 1e-1, 1e-2, 1e-3, 1e-4", "eps = 1e-1, 1e-2")
    p = tmp_path / "eps.ini"
    p.write_text(text)
    assert cli.main(["eps-sweep", "--config", str(p), "--out", str(tmp_path / "o")]) == 0
    rows = read_csv(tmp_path / "o" / "eps_sweep.csv")
    assert rows[0][0] == "eps" and len(rows) == 3
    assert [float(r[0]) for r in rows[1:]] == [0.1, 0.01]
    assert all(float(r[1]) > 0 for r in rows[1:])
