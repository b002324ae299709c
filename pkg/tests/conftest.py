from __future__ import annotations

import numpy as np
import pytest

from gface.data import generate_synthetic


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset():
    # 4 classes, 2 old, well separated; small enough for sub-second training
    return generate_synthetic(4, 2, 8, [40, 40, 40, 40], class_separation=6.0, seed=3)


def unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def stochastic_rows(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    return rng.dirichlet(np.ones(k), size=n)


# ---------------------------------------------------------------- acceptance summary

_CRITERIA: dict[str, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or (report.when != "call" and not report.failed):
        return
    cid, title = marker.args
    lines = [text.strip().splitlines()[-1] for name, text in report.sections
             if name == "Captured stdout call" and text.strip()]
    detail = lines[-1] if lines else ""
    if report.failed:
        crash = getattr(report.longrepr, "reprcrash", None)
        why = crash.message.splitlines()[0] if crash else "error"
        detail = f"{detail} | {why}" if detail else why
    _CRITERIA[cid] = [title, report.passed, detail]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=lambda c: int(c[1:])):
        title, ok, detail = _CRITERIA[cid]
        terminalreporter.write_line(f"{cid:>3} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
