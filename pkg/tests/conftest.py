import os
from dataclasses import replace

import pytest

from trajcert.cli import main
from trajcert.config import Config, DataConfig, SeedConfig, SuiteConfig

# (criterion number, status, detail) lines collected by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")


@pytest.fixture(autouse=True)
def _no_seed_env(monkeypatch):
    monkeypatch.delenv("TCERT_SEED", raising=False)


@pytest.fixture
def small_cfg() -> Config:
    """Tiny problem that keeps every code path but runs in milliseconds."""
    return Config(data=DataConfig(n=24, p=48, m_probe=32, n_test=64, feature_scale=0.1),
                  suite=SuiteConfig(T=20),
                  seeds=SeedConfig(count=2))


SMALL_TOML = """\
[data]
n = 24
p = 48
m_probe = 32
n_test = 64
feature_scale = 0.1

[suite]
T = 20

[seeds]
count = 2

[demo]
n = 12
p = 96
trials = 8
pilot_trials = 8
m_probe = 32
n_test = 64
"""


@pytest.fixture
def small_toml(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_TOML)
    return path


@pytest.fixture(scope="session")
def full_run_dirs(tmp_path_factory):
    """The default-configuration suite, run twice into separate directories."""
    dirs = []
    for name in ("full_a", "full_b"):
        d = tmp_path_factory.mktemp(name) / "out"
        rc = main(["run", "--out", str(d)])
        dirs.append((d, rc))
    return dirs


@pytest.fixture(scope="session")
def demo_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("demo") / "out"
    rc = main(["necessity-demo", "--out", str(d)])
    return d, rc
