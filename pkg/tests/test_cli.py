import filecmp

import numpy as np

from trajcert.cli import main
from trajcert.datagen import load_dataset


def _tree(d):
    return sorted(p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file())


def test_sweep_writes_tree_and_passes(tmp_path, small_toml, capsys):
    out = tmp_path / "o"
    assert main(["sweep", "--config", str(small_toml), "--out", str(out)]) == 0
    files = _tree(out)
    for f in ("config.resolved", "summary.csv", "suite.csv", "series.csv", "scatter.csv",
              "tables/T1.csv", "tables/A5.csv", "runs/gd_eta0.2_random_clean/1/steps.csv",
              "runs/gd_eta0.2_random_clean/1/certificate.csv"):
        assert f in files
    assert "3 step-size proportionality: cert ratios" in capsys.readouterr().out


def test_refuses_overwrite_without_force(tmp_path, small_toml, capsys):
    out = tmp_path / "o"
    args = ["ablate-labels", "--config", str(small_toml), "--out", str(out)]
    assert main(args) == 0
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_force_removes_stale_runs(tmp_path, small_toml):
    out = tmp_path / "o"
    assert main(["run", "--config", str(small_toml), "--out", str(out)]) == 0
    assert main(["sweep", "--config", str(small_toml), "--out", str(out), "--force",
                 "--etas", "0.1"]) == 0
    assert [p.name for p in (out / "runs").iterdir()] == ["gd_eta0.1_random_clean"]


def test_seeds_and_workers_flags(tmp_path, small_toml):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["compare-optimizers", "--config", str(small_toml), "--out", str(a),
                 "--seeds", "3"]) == 0
    assert main(["compare-optimizers", "--config", str(small_toml), "--out", str(b),
                 "--seeds", "3", "--workers", "2"]) == 0
    assert sorted(p.name for p in (a / "runs" / "gd_eta0.2_random_clean").iterdir()) == ["0", "1", "2"]
    # config.resolved records the worker count; every data file must match
    for f in _tree(a):
        if f == "config.resolved":
            continue
        assert filecmp.cmp(a / f, b / f, shallow=False), f


def test_seed_env_var(tmp_path, small_toml, monkeypatch):
    monkeypatch.setenv("TCERT_SEED", "40")
    out = tmp_path / "o"
    assert main(["ablate-neighbor", "--config", str(small_toml), "--out", str(out)]) == 0
    assert sorted(p.name for p in (out / "runs" / "gd_eta0.2_random_clean").iterdir()) == ["40", "41"]
    assert "base = 40" in (out / "config.resolved").read_text()


def test_gen_writes_loadable_datasets(tmp_path, small_toml):
    out = tmp_path / "o"
    assert main(["gen", "--config", str(small_toml), "--out", str(out)]) == 0
    base = load_dataset(out / "data" / "0" / "base.tcds")
    nb = load_dataset(out / "data" / "0" / "neighbor_random_index.tcds")
    assert base.X.shape == (24, 48)
    assert np.sum(np.any(base.X != nb.X, axis=1)) == 1


def test_demo_and_report(tmp_path, small_toml, capsys):
    out = tmp_path / "o"
    rc = main(["necessity-demo", "--config", str(small_toml), "--out", str(out)])
    text = capsys.readouterr().out
    assert rc == 0
    assert "[PASS] demo interpolation" in text
    assert main(["report", "--out", str(out)]) == 0
    assert capsys.readouterr().out == text


def test_bad_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[suite]\nT = -4\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "bad.toml:2" in capsys.readouterr().err


def test_rejects_nonpositive_seeds(tmp_path, capsys):
    assert main(["run", "--seeds", "0", "--out", str(tmp_path / "o")]) == 2


def test_report_on_missing_dir(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path / "nothing")]) == 2
    assert "config.resolved" in capsys.readouterr().out
