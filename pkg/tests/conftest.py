"""Shared oracles for the test suite.

These deliberately avoid the library's own code paths: the QP oracle goes
through cvxopt, quadrature oracles through mpmath, so each check pits two
independent routes against each other.
"""

from __future__ import annotations

import numpy as np
import pytest


def qp_max_margin(features: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Hard-margin-through-origin oracle: min ||w||^2 s.t. y_i w.x_i >= 1.

    Returns (margin of the unit-norm solution, unit-norm direction).
    """
    from cvxopt import matrix, solvers

    solvers.options["show_progress"] = False
    n, d = features.shape
    xy = features * labels[:, None].astype(float)
    sol = solvers.qp(matrix(np.eye(d)), matrix(np.zeros(d)), matrix(-xy), matrix(-np.ones(n)))
    if sol["status"] != "optimal":
        raise RuntimeError(f"QP oracle did not converge: {sol['status']}")
    w = np.asarray(sol["x"]).ravel()
    norm = np.linalg.norm(w)
    return 1.0 / norm, w / norm


@pytest.fixture()
def rng():
    # function-scoped: every test sees the same stream regardless of ordering
    return np.random.default_rng(20240811)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance criterion verdict lines after the test summary."""
    try:
        import test_acceptance
    except ImportError:
        return
    lines = getattr(test_acceptance, "RESULTS", [])
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
