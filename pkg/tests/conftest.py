import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from covgrow.io import load_config  # noqa: E402
from covgrow.simulate import simulate  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def profiles_config():
    return load_config(CONFIGS / "profiles40.cfg")


@pytest.fixture(scope="session")
def profiles_data(profiles_config):
    """40 x 61 synthetic dataset with its truth."""
    dataset, truth, _ = simulate(profiles_config, seed=7)
    return dataset, truth


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, limit): numbered acceptance criterion")
    config.addinivalue_line("markers", "acceptance: acceptance suite")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "status": "PASS", "detail": "",
                                          "limit": mark.kwargs.get("limit")})
    if report.skipped:
        entry["status"] = "SKIP"
    elif report.failed:
        entry["status"] = "FAIL"
        if report.when == "call" and call.excinfo is not None:
            entry["error"] = call.excinfo.exconly().splitlines()[0][:160]
    for key, value in item.user_properties:
        if key == "detail":
            entry["detail"] = value


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        limit = f" [limit {e['limit']:g} s]" if e["limit"] else ""
        line = f"criterion {number} {e['status']}: {e['title']}{limit}: {e['detail']}"
        if "error" in e:
            line += f" ({e['error']})"
        terminalreporter.write_line(line)
