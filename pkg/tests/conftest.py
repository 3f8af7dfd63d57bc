import numpy as np
import pytest

from aisfish.checkpoint import Checkpoint, NormStats
from aisfish.model import ModelConfig, init
from aisfish.synthetic import synthetic_fleet


@pytest.fixture(scope="session")
def fleet():
    return synthetic_fleet(12, seed=3)


def tiny_checkpoint(cell="elman", w=4, s=8, seed=0) -> Checkpoint:
    cfg = ModelConfig(cell, w, s, seed=seed)
    norm = NormStats((48.5, -124.0, 180.0, 8.0), (0.5, 0.5, 100.0, 4.0),
                     (48.0, -125.0, 0.0, 0.6), (49.0, -123.0, 360.0, 20.0))
    return Checkpoint(cfg, init(cfg), norm, {"note": "test"})


@pytest.fixture
def ckpt():
    return tiny_checkpoint()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def labeled_tracks():
    from aisfish.features import WindowSpec
    from aisfish.labeling import label_dataset

    tracks, _ = label_dataset(synthetic_fleet(20, seed=5).values(), WindowSpec.default("message"))
    return tracks


# ---- acceptance reporting -------------------------------------------------
# Tests marked ``acceptance(number, title)`` are summarised as one PASS/FAIL/SKIP
# line per criterion at the end of the run. ``measured`` attaches the observed
# value to that line.

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion check")


@pytest.fixture
def measured(request):
    def note(text: str) -> None:
        request.node.user_properties.append(("measured", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (report.when == "call" or report.skipped or report.failed):
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "status": "PASS", "notes": []})
    if report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else str(report.longrepr)
        entry["notes"].append(reason.removeprefix("Skipped: "))
        if entry["status"] == "PASS":
            entry["status"] = "SKIP"
    elif report.failed:
        entry["status"] = "FAIL"
        entry["notes"].append(f"{item.name} failed")
    entry["notes"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        notes = "; ".join(dict.fromkeys(e["notes"]))
        terminalreporter.write_line(f"criterion {number}: {e['status']} - {e['title']}" + (f" [{notes}]" if notes else ""))
