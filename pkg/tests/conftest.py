"""Shared fixtures: in-process gateway clients and scripted sessions."""

from __future__ import annotations

import warnings
from pathlib import Path

import pytest

warnings.filterwarnings("ignore", category=DeprecationWarning)


@pytest.fixture()
def gateway_client(tmp_path):
    """A TestClient over a fresh gateway; yields (client, gateway, data_dir)."""
    from fastapi.testclient import TestClient

    from codesign.gateway.api import create_app

    data_dir = tmp_path / "data"
    app = create_app(data_dir, base_seed=1234)
    with TestClient(app) as client:
        yield client, app.state.gateway, data_dir


def make_client(data_dir: Path, base_seed: int = 1234, max_rounds: int = 6):
    from fastapi.testclient import TestClient

    from codesign.gateway.api import create_app

    app = create_app(data_dir, base_seed=base_seed, max_rounds=max_rounds)
    return TestClient(app), app.state.gateway


def pytest_runtest_logreport(report):
    """Echo one pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[{status}] {name}", flush=True)
