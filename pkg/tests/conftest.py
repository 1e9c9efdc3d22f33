from __future__ import annotations

import time

import pytest

from redundancy_lab import cli, ingest
from redundancy_lab.metrics import aggregate_scores

# filled by test_acceptance.py; printed at the end of the run
ACCEPTANCE_LINES: list[str] = []
# wall-clock seconds of each simulate run, keyed by output directory name
SIM_SECONDS: dict[str, float] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def eagle():
    return ingest.load_eagle_fixture()


@pytest.fixture(scope="session")
def cambrian():
    return ingest.load_cambrian_fixture()


@pytest.fixture(scope="session")
def eagle_agg(eagle):
    return aggregate_scores(eagle)


@pytest.fixture(scope="session")
def cambrian_agg(cambrian):
    return aggregate_scores(cambrian)


def _simulate(tmp_path_factory, config: str, tag: str):
    out = tmp_path_factory.mktemp(f"sim-{config}-{tag}")
    start = time.perf_counter()
    assert cli.main(["simulate", "--config", config, "--out", str(out)]) == 0
    SIM_SECONDS[out.name] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def clone_run(tmp_path_factory):
    return _simulate(tmp_path_factory, "clone", "a")


@pytest.fixture(scope="session")
def clone_rerun(tmp_path_factory):
    return _simulate(tmp_path_factory, "clone", "b")


@pytest.fixture(scope="session")
def specialist_run(tmp_path_factory):
    return _simulate(tmp_path_factory, "specialist", "a")
