"""Shared fixtures: ground-state profiles are expensive, solve them once."""

import pytest

from sbpcluster import solve_ground_state


@pytest.fixture(scope="session")
def profile3():
    """Cubic-nonlinearity profile at tight tolerance; most tests share it."""
    return solve_ground_state(3.0, tol=1e-8)


@pytest.fixture(scope="session")
def profile3_loose():
    """Same profile at working tolerance, for refinement comparisons."""
    return solve_ground_state(3.0, tol=1e-5)
