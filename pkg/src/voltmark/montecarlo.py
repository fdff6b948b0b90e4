"""Ensemble statistics, bootstrap bands, and the experiment drivers.

Bootstrap resampling is over whole paths (per-time resampling would
understate path-level variance) and implemented as multinomial weight
matrices hitting the path array in a single matrix product, so 1000
resamples of 10^4 paths stay cheap.  Standard errors for variances come
from the same bootstrap distribution rather than asymptotic formulas;
terminal wealth is heavy-tailed for ambitious targets.
"""

from dataclasses import dataclass, field

import numpy as np

from .kernels import ParameterError
from .markowitz import gamma0, simulate_wealth, variance_of_terminal, xi_eta_star
from .model import Grid, MarketModel
from .riccati import RiccatiSolution, solve_riccati_adams
from .simulate import PathEnsemble, simulate_variance_paths

_DEFAULT_BOOT = 1000


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Per-time mean/variance with 95% bootstrap bands of the mean."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    mean_se: np.ndarray = field(repr=False)
    var_se: np.ndarray = field(repr=False)
    n_boot: int = _DEFAULT_BOOT


def _bootstrap_weights(M: int, n_boot: int, rng: np.random.Generator) -> np.ndarray:
    return rng.multinomial(M, np.full(M, 1.0 / M), size=n_boot) / M


def ensemble_stats(paths: np.ndarray, times: np.ndarray, n_boot: int = _DEFAULT_BOOT,
                   seed: int = 0) -> EnsembleStats:
    """Sample mean/variance over paths with percentile-bootstrap CIs.

    paths has shape (M, len(times)); whole paths are resampled.
    """
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 2 or paths.shape[0] < 2:
        raise ParameterError("ensemble_stats needs an (M, n_times) array with M >= 2")
    M = paths.shape[0]
    rng = np.random.default_rng(seed)
    w = _bootstrap_weights(M, n_boot, rng)           # (n_boot, M)
    boot_mean = w @ paths                            # (n_boot, n_times)
    boot_sq = w @ (paths * paths)
    boot_var = (boot_sq - boot_mean**2) * M / (M - 1.0)
    lo, hi = np.percentile(boot_mean, [2.5, 97.5], axis=0)
    return EnsembleStats(
        times=np.asarray(times, dtype=float),
        mean=paths.mean(axis=0),
        variance=paths.var(axis=0, ddof=1),
        ci_low=lo,
        ci_high=hi,
        mean_se=boot_mean.std(axis=0, ddof=1),
        var_se=boot_var.std(axis=0, ddof=1),
        n_boot=n_boot,
    )


@dataclass(frozen=True)
class StationarityReport:
    """Fraction of grid times whose 3-SE band captures the constants."""

    mean_coverage: np.ndarray   # per asset
    var_coverage: np.ndarray
    passed: bool
    mean_threshold: float = 0.99
    var_threshold: float = 0.95


def stationarity_diagnostics(ensemble: PathEnsemble, model: MarketModel,
                             n_boot: int = _DEFAULT_BOOT, seed: int = 0) -> StationarityReport:
    """Check that per-time sample moments stay on the stationary constants.

    For each asset the sample mean of V must sit within 3 bootstrap SEs
    of x_inf at >= 99% of grid times and the sample variance within 3
    SEs of v0 at >= 95% of times.
    """
    mean_cov = np.empty(model.d)
    var_cov = np.empty(model.d)
    for i in range(model.d):
        stats = ensemble_stats(ensemble.V[:, i, :], ensemble.grid.times, n_boot, seed + i)
        z_mean = np.abs(stats.mean - model.x_inf[i]) / stats.mean_se
        z_var = np.abs(stats.variance - model.v0[i]) / stats.var_se
        mean_cov[i] = float(np.mean(z_mean <= 3.0))
        var_cov[i] = float(np.mean(z_var <= 3.0))
    passed = bool(np.all(mean_cov >= 0.99) and np.all(var_cov >= 0.95))
    return StationarityReport(mean_coverage=mean_cov, var_coverage=var_cov, passed=passed)


@dataclass(frozen=True)
class FrontierPoint:
    m: float
    xi_star: float
    v_theory: float
    v_mc: float
    v_mc_se: float
    mean_terminal: float
    mean_se: float

    @property
    def sigma_theory(self) -> float:
        return float(np.sqrt(self.v_theory))

    @property
    def sigma_mc(self) -> float:
        return float(np.sqrt(max(self.v_mc, 0.0)))


def terminal_bootstrap(terminal: np.ndarray, n_boot: int = _DEFAULT_BOOT,
                       seed: int = 0) -> tuple[float, float, float, float]:
    """(mean, mean SE, variance, variance SE) of terminal wealth."""
    M = len(terminal)
    rng = np.random.default_rng(seed)
    w = _bootstrap_weights(M, n_boot, rng)
    bm = w @ terminal
    bv = (w @ terminal**2 - bm**2) * M / (M - 1.0)
    return (
        float(np.mean(terminal)),
        float(np.std(bm, ddof=1)),
        float(np.var(terminal, ddof=1)),
        float(np.std(bv, ddof=1)),
    )


def frontier_experiment(model: MarketModel, m_values, M: int, seed: int, *,
                        grid: Grid | None = None, stabs=None,
                        solution: RiccatiSolution | None = None,
                        ensemble: PathEnsemble | None = None,
                        n_boot: int = _DEFAULT_BOOT) -> list[FrontierPoint]:
    """Monte Carlo frontier: simulated Var(X_T) against V(m) per target m.

    One variance ensemble (deterministic V0 = x_inf, matching the single
    Gamma0 that prices the frontier) is reused across all targets; only
    the cheap wealth recursion reruns per m.
    """
    grid = grid or Grid(model.T, 600)
    stabs = stabs or model.build_stabilizers()
    solution = solution or solve_riccati_adams(model, stabs, grid.n)
    if ensemble is None:
        ensemble = simulate_variance_paths(
            model, stabs, grid, M, seed, initial="fixed", store_noise=False
        )
    g0 = gamma0(model, solution, stabs)  # m-independent, priced once
    out = []
    for j, m in enumerate(np.atleast_1d(np.asarray(m_values, dtype=float))):
        xi, _ = xi_eta_star(g0, model, float(m))
        wealth = simulate_wealth(model, ensemble, solution, stabs, xi)
        mean, mean_se, var, var_se = terminal_bootstrap(
            wealth.terminal, n_boot=n_boot, seed=seed + 7919 * (j + 1)
        )
        out.append(FrontierPoint(
            m=float(m), xi_star=xi,
            v_theory=variance_of_terminal(g0, model, float(m)),
            v_mc=var, v_mc_se=var_se, mean_terminal=mean, mean_se=mean_se,
        ))
    return out


def frontier_m_grid(model: MarketModel, count: int = 8) -> np.ndarray:
    """Target means spanning [x0 e^((r+0.01)T), x0 e^((r+0.5)T)]."""
    lo = model.x0 * np.exp((model.r + 0.01) * model.T)
    hi = model.x0 * np.exp((model.r + 0.5) * model.T)
    return np.linspace(lo, hi, count)
