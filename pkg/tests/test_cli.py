import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from nlslab.cli import main, run
from nlslab.config import ConfigError, ExperimentConfig, config_hash, load_config
from nlslab.report import ReportRecord, compare_runs, read_records, write_artifacts

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
BASE = {"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "single", "n": 2, "lam": [1.0, 0.0]}}


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- config --------------------------------------------------------------------


def test_defaults_and_hash_stable():
    a = ExperimentConfig.from_mapping(BASE, "scatter")
    b = ExperimentConfig.from_mapping(json.loads(json.dumps(BASE)), "scatter")
    assert a.hash == b.hash and len(a.hash) == 40
    assert a.options["gap_tol"] == 1e-4 and a.grid == {"n": 1024, "L": 20.0}
    assert a.alpha0 == 1.5
    assert a.with_seed(3).hash != a.hash


@pytest.mark.parametrize("doc,msg", [
    ({"d": 3, "nonlinearity": {"alpha": 2.2}}, "alpha = 2"),
    ({"d": 1, "nonlinearity": {"alpha": 3.0}}, "admissible"),
    ({**BASE, "grid": {"n": 100}}, "power of two"),
    ({**BASE, "grid": {"L": -1}}, "power of two"),
    ({"d": 1, "nonlinearity": {}}, "alpha"),
    ({"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "weird"}}, "kind"),
    ({"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "single", "n": 0}}, "assumptions"),
    ({"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "hk", "k": 3}}, "assumptions"),
    ({**BASE, "rng_seed": -1}, "rng_seed"),
    ({**BASE, "d": "x"}, "invalid literal"),
])
def test_invalid_configs(doc, msg):
    with pytest.raises(ConfigError, match=msg):
        ExperimentConfig.from_mapping(doc, "simulate")


def test_assumption_override_and_coeffs_exemption():
    doc = {"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "single", "n": 0}}
    ExperimentConfig.from_mapping(doc, "coeffs")
    ExperimentConfig.from_mapping({**doc, "enforce_assumptions": False}, "simulate")


def test_alpha0_key_and_kinds():
    cfg = ExperimentConfig.from_mapping({"d": 2, "nonlinearity": {"alpha0": 1.5, "kind": "gauge_invariant"}})
    assert cfg.alpha == 2.5
    cfg = ExperimentConfig.from_mapping({"d": 1, "nonlinearity": {"alpha": 4.0, "kind": "coeffs",
                                                                 "coeffs": [[1, 0.5, 0.0], [2, 0.0, 1.0]]}})
    assert cfg.seq.coefficient(2) == 1j


def test_load_config_formats(tmp_path):
    t = load_config(CONFIGS / "scatter_d1.toml", "scatter")
    assert t.grid["n"] == 4096
    j = _write(tmp_path, json.dumps(BASE), "c.json")
    assert load_config(j).alpha == 4.0
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "d = [", "bad.toml"))
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_all_shipped_configs_validate():
    subs = {"coeffs_aseries": "coeffs", "scatter_d1": "scatter", "contraction_d1": "contraction",
            "lemma": "lemma-check", "identity": "identity-check", "simulate_gauge": "simulate"}
    for stem, sub in subs.items():
        load_config(CONFIGS / f"{stem}.toml", sub)


def test_config_hash_is_git_blob_sha():
    import hashlib

    body = b'{"a":1}'
    assert config_hash({"a": 1}) == hashlib.sha1(b"blob 7\0" + body).hexdigest()


# -- report --------------------------------------------------------------------


def test_record_comparators():
    assert ReportRecord.check("e", "h", "m", 0.1, 0.2).passed
    assert not ReportRecord.check("e", "h", "m", 0.3, 0.2).passed
    assert ReportRecord.check("e", "h", "m", 3, 2, "ge").passed
    assert not ReportRecord.check("e", "h", "m", float("nan"), 1.0).passed
    info = ReportRecord.check("e", "h", "m", 5.0, None)
    assert info.comparator == "info" and info.passed
    with pytest.raises(ValueError):
        ReportRecord.check("e", "h", "m", 1, 1, "lt")


def test_artifacts_and_compare(tmp_path):
    recs = [ReportRecord.check("e", "h1", "m", 0.1, 0.2)]
    write_artifacts(tmp_path / "a", {"config_hash": "h1"}, recs)
    write_artifacts(tmp_path / "b", {"config_hash": "h1"}, [ReportRecord.check("e", "h1", "m", 0.15, 0.2)])
    write_artifacts(tmp_path / "c", {"config_hash": "h2"}, recs)
    assert read_records(tmp_path / "a")[0] == "h1"
    assert compare_runs(tmp_path / "a", tmp_path / "b") == ["m"]
    assert compare_runs(tmp_path / "a", tmp_path / "a") == []
    with pytest.raises(ValueError):
        compare_runs(tmp_path / "a", tmp_path / "c")
    assert (tmp_path / "a" / "records.csv").read_text().startswith("experiment,config_hash,metric")


# -- cli -----------------------------------------------------------------------


def test_malformed_config_exit_2_no_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, 'd = 1\n[nonlinearity]\nalpha = 3.0\n')
    out = tmp_path / "out"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "invalid configuration" in capsys.readouterr().err
    bad = _write(tmp_path, "this is not toml", "bad.toml")
    assert main(["simulate", "--config", str(bad), "--out", str(out)]) == 2
    assert main(["lemma-check", "--lemma", "NOPE", "--out", str(out)]) == 2
    d2 = _write(tmp_path, 'd = 2\n[nonlinearity]\nalpha = 2.5\n', "d2.toml")
    assert main(["contraction", "--config", str(d2), "--out", str(out)]) == 2
    assert main(["simulate", "--workers", "0", "--out", str(out)]) == 2
    assert not out.exists()


def test_coeffs_aseries(tmp_path):
    out = tmp_path / "o"
    assert main(["coeffs", "--config", str(CONFIGS / "coeffs_aseries.toml"), "--out", str(out)]) == 0
    recs = {r["metric"]: r for r in read_records(out)[1]}
    assert recs["A1_pass"]["value"] == 1.0 and recs["A2_pass"]["value"] == 1.0
    assert recs["roundtrip_max_error"]["value"] <= 1e-10
    assert (out / "config.json").exists() and (out / "records.csv").exists()


def test_coeffs_reports_failing_assumptions(tmp_path):
    cfg = _write(tmp_path, 'd = 1\n[nonlinearity]\nalpha = 4.0\nkind = "hk"\nk = 3\n')
    assert main(["coeffs", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1


def test_lemma_k2161_flat(tmp_path):
    out = tmp_path / "o"
    assert main(["lemma-check", "--lemma", "K2_16_1", "--out", str(out)]) == 0
    recs = {r["metric"]: r["value"] for r in read_records(out)[1]}
    assert recs["K2_16_1:spread"] < 1e-12
    lines = (out / "lemma.csv").read_text().splitlines()
    assert lines[0] == "lemma_id,n,t,gamma/theta,measured,compensated,pass"


def test_simulate_gauge_conserves_mass(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(CONFIGS / "simulate_gauge.toml"), "--out", str(out)]) == 0
    recs = {r["metric"]: r["value"] for r in read_records(out)[1]}
    assert recs["mass_rel_change"] <= 1e-10
    assert (out / "fields").is_dir()


def test_blowup_exit_3(tmp_path, capsys):
    cfg = _write(tmp_path, 'd = 1\nepsilon = 1.0\n[nonlinearity]\nalpha = 4.0\nkind = "gauge_invariant"\n'
                 'lam = [0.0, 1.0]\n[grid]\nn = 256\nL = 12.0\n[mesh]\nT = 1.0\nsteps = 10\nmax_dt = 0.001\n')
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 3
    doc = json.loads((out / "summary.json").read_text())
    assert doc["status"] == "numerical_failure" and "BlowUpError" in doc["error"]


def test_strict_turns_warnings_into_failure(tmp_path):
    # a small box makes the field reach the boundary
    cfg = _write(tmp_path, 'd = 1\nepsilon = 0.1\n[nonlinearity]\nalpha = 4.0\nkind = "single"\nn = 2\n'
                 '[grid]\nn = 64\nL = 4.0\n[mesh]\nT = 2.0\nsteps = 4\n')
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--strict"]) == 1
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["warnings"]


def test_determinism_and_workers(tmp_path):
    cfg = load_config(CONFIGS / "lemma.toml", "lemma-check")
    run("lemma-check", cfg, tmp_path / "a", workers=1)
    run("lemma-check", cfg, tmp_path / "b", workers=2)
    assert compare_runs(tmp_path / "a", tmp_path / "b") == []
    assert (tmp_path / "a" / "records.csv").read_bytes() == (tmp_path / "b" / "records.csv").read_bytes()


def test_rng_seed_changes_hash(tmp_path):
    main(["coeffs", "--out", str(tmp_path / "a"), "--rng-seed", "1"])
    main(["coeffs", "--out", str(tmp_path / "b"), "--rng-seed", "2"])
    with pytest.raises(ValueError):
        compare_runs(tmp_path / "a", tmp_path / "b")


def test_console_entry_point(tmp_path):
    exe = shutil.which("nlslab")
    cmd = [exe] if exe else [sys.executable, "-m", "nlslab"]
    res = subprocess.run(cmd + ["coeffs", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "coeffs: PASS" in res.stdout
