from __future__ import annotations

import time
from pathlib import Path

import pytest

from killfie.pipeline import PipelineConfig, run_pipeline
from killfie.synth import PlantedConfig, write_planted_bundle

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when not in ("setup", "call"):
        return
    info = getattr(report, "criterion", None)
    if info is None:
        return
    n, title = info
    entry = _CRITERIA.setdefault(n, {"title": title, "failed": False, "tests": 0, "seconds": 0.0})
    if report.when == "call":
        entry["tests"] += 1
        entry["seconds"] += report.duration
    if report.failed:
        entry["failed"] = True


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        status = "FAIL" if e["failed"] or e["tests"] == 0 else "PASS"
        terminalreporter.write_line(f"criterion {n:>2} {status}  {e['title']}  ({e['tests']} tests, {e['seconds']:.1f}s)")


@pytest.fixture(scope="session")
def planted_bundle(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("planted")
    write_planted_bundle(root, PlantedConfig())
    return root


@pytest.fixture(scope="session")
def planted_run(planted_bundle):
    """One full offline pipeline run over the planted corpus."""
    cfg = PipelineConfig.load(planted_bundle / "config.json")
    t0 = time.perf_counter()
    manifest = run_pipeline(cfg)
    return cfg, manifest, time.perf_counter() - t0
