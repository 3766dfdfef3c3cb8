import pytest

from satground.config import default_config, default_config_path
from satground.orchestrator import Pipeline

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def default_cfg():
    return default_config()


@pytest.fixture(scope="session")
def small_cfg(default_cfg):
    return default_cfg.with_updates(samples__count=60)


@pytest.fixture(scope="session")
def small_pipeline(small_cfg):
    return Pipeline(small_cfg)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
