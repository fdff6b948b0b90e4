"""Shared fixtures: the two-asset rough market and its solved objects.

Heavy artifacts (stabilizers, Riccati solutions, path ensembles) are
session-scoped so the acceptance module and the unit tests reuse them.
"""

import pytest

from voltmark.model import Grid, MarketModel, bundled_model
from voltmark.riccati import oracle_volterra_picard, solve_riccati_adams
from voltmark.simulate import simulate_variance_paths


@pytest.fixture(scope="session")
def model_t1():
    return bundled_model(T=1.0)


@pytest.fixture(scope="session")
def stabs_t1(model_t1):
    return model_t1.build_stabilizers()


@pytest.fixture(scope="session")
def riccati_600(model_t1, stabs_t1):
    return solve_riccati_adams(model_t1, stabs_t1, 600)


@pytest.fixture(scope="session")
def picard_4800(model_t1, stabs_t1):
    return oracle_volterra_picard(model_t1, stabs_t1, 4800)


@pytest.fixture(scope="session")
def grid_600():
    return Grid(1.0, 600)


@pytest.fixture(scope="session")
def ensemble_5000_fixed(model_t1, stabs_t1, grid_600):
    """Fixed-V0 ensemble backing the wealth and frontier acceptance runs."""
    return simulate_variance_paths(
        model_t1, stabs_t1, grid_600, 5000, seed=20240, initial="fixed",
        store_noise=False,
    )


@pytest.fixture(scope="session")
def ensemble_10000_stationary(model_t1, stabs_t1, grid_600):
    """Stationary ensemble for the fake-stationarity diagnostics."""
    return simulate_variance_paths(
        model_t1, stabs_t1, grid_600, 10000, seed=31415, store_noise=False,
    )


def small_model(**overrides):
    """One-asset configuration for cheap targeted tests."""
    params = dict(
        d=1, alpha=[0.7], lam=[0.3], nu=[0.5], rho=[-0.5], theta=[0.2],
        mu0=[1.5], c=[0.02], r=0.02, x0=2.0, T=1.0,
    )
    params.update(overrides)
    return MarketModel(**params)
