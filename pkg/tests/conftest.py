"""Shared fixtures and the acceptance-suite summary printer."""

from __future__ import annotations

import numpy as np
import pytest

from searchdet.embeddings import FixtureEmbeddingBackend

_ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    if "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name]
        mark = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(f"{mark}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def simple_fixture_backend():
    """A tiny embedding fixture with two images at a known cosine."""
    backend = FixtureEmbeddingBackend(dimension=4)
    backend.register("A", [1.0, 0.0, 0.0, 0.0])
    backend.register("B", [0.6, 0.8, 0.0, 0.0])  # cos(A, B) = 0.6
    backend.register_patch_grid(
        "A",
        np.asarray(
            [
                [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]],
                [[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]],
            ]
        ),
    )
    return backend
