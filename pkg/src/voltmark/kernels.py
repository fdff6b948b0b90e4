"""Convolution kernels, resolvents and the special functions behind them.

Four kernel families are supported: the fractional kernel t^(a-1)/G(a)
(the rough one, a in (1/2, 1]), the gamma kernel t^(a-1) e^(-b t)/G(a),
the exponential kernel e^(-b t), and the constant kernel 1.  On top of
plain evaluation this module provides

* the lambda-resolvent R_lam of a kernel, solving R + lam K*R = 1, and
  its density f_lam = -R'_lam (a Mittag-Leffler function for the
  fractional family),
* one- and two-parameter Mittag-Leffler evaluation that stays accurate
  for large negative arguments (power series near zero, Gauss-Laguerre
  quadrature of the spectral representation far out),
* exact segment integrals of the kernel and of kernel products, the
  building blocks of the simulation covariance matrices,
* Riemann-Liouville fractional integrals of grid functions by product
  integration (exact for piecewise-linear data).

All evaluators accept scalars or numpy arrays and are pure functions of
immutable specs, so they can be shared freely across threads.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammainc, roots_jacobi, roots_legendre


class ParameterError(ValueError):
    """Kernel or resolvent parameters outside their admissible range."""


class DomainError(ValueError):
    """Evaluation point outside the domain of the requested quantity."""


FAMILIES = ("fractional", "gamma", "exponential", "constant")

# Switch from the power series to the spectral integral representation of
# the Mittag-Leffler functions beyond this |z|; the alternating series
# loses precision for large negative arguments.
_ML_SERIES_RADIUS = 5.0
_ML_MAX_TERMS = 250
_N_JACOBI = 32
_N_LEGENDRE = 32


@dataclass(frozen=True)
class KernelSpec:
    """Scalar convolution kernel K from one of the four supported families.

    Parameters
    ----------
    family : str
        One of ``fractional``, ``gamma``, ``exponential``, ``constant``.
    alpha : float, optional
        Fractional order in (1/2, 1]; required by the fractional and
        gamma families.  The Hurst exponent is H = alpha - 1/2.
    beta : float, optional
        Exponential decay rate; > 0 for the exponential family, >= 0 for
        the gamma family (beta = 0 degenerates to fractional).
    """

    family: str
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown kernel family {self.family!r}")
        if self.family in ("fractional", "gamma"):
            if self.alpha is None or not 0.5 < self.alpha <= 1.0:
                raise ParameterError(
                    f"{self.family} kernel requires alpha in (1/2, 1], got {self.alpha}"
                )
        if self.family == "exponential":
            if self.beta is None or self.beta <= 0.0:
                raise ParameterError("exponential kernel requires beta > 0")
        if self.family == "gamma":
            if self.beta is None or self.beta < 0.0:
                raise ParameterError("gamma kernel requires beta >= 0")

    @property
    def singular(self) -> bool:
        """True when K(0+) = +inf (fractional/gamma with alpha < 1)."""
        return self.family in ("fractional", "gamma") and self.alpha < 1.0


def fractional_kernel(alpha: float) -> KernelSpec:
    return KernelSpec("fractional", alpha=alpha)


@dataclass(frozen=True)
class ResolventSpec:
    """Kernel together with a mean-reversion rate lambda > 0.

    R_lam solves R_lam(t) + lam * (K * R_lam)(t) = 1 with R_lam(0) = 1;
    its density f_lam = -R'_lam integrates to 1 - a where a = lim R_lam.
    """

    kernel: KernelSpec
    lam: float

    def __post_init__(self):
        if not self.lam > 0.0:
            raise ParameterError(f"resolvent requires lambda > 0, got {self.lam}")


# ---------------------------------------------------------------------------
# Mittag-Leffler machinery
# ---------------------------------------------------------------------------

def _ml_series(alpha: float, offset: float, z: np.ndarray) -> np.ndarray:
    """Power series sum_k z^k / Gamma(alpha k + offset), vectorized in z."""
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    term = np.full_like(z, 1.0 / gamma_fn(offset))
    out += term
    zk = np.ones_like(z)
    for k in range(1, _ML_MAX_TERMS):
        zk = zk * z
        term = zk / gamma_fn(alpha * k + offset)
        out += term
        if np.all(np.abs(term) <= 1e-16 * np.maximum(np.abs(out), 1e-300)):
            break
    return out


@lru_cache(maxsize=8)
def _parabola_nodes(M: int = 64, U: float = 4.0):
    # midpoint rule on the parabolic Laplace-inversion contour p = mu (1+iu)^2
    mu = 0.25 * M / U**2 * np.pi
    h = 2.0 * U / M
    u = -U + (np.arange(M) + 0.5) * h
    p = mu * (1.0 + 1j * u) ** 2
    dp = 2j * mu * (1.0 + 1j * u)
    return p, np.exp(p) * dp * h / (2.0j * np.pi)


def _ml_contour(alpha: float, x: np.ndarray, power_alpha: bool = True) -> np.ndarray:
    """Laplace inversion on a parabolic contour, accurate for large x.

    Evaluates (2 pi i)^-1 int_C e^p p^q / (p^alpha + x) dp with q =
    alpha-1 (giving E_alpha(-x)) or q = 0 (giving the kernel of the
    resolvent density).  For alpha in (0, 1) the principal branch of
    p^alpha keeps the denominator zero-free off the negative axis, so
    deforming the Hankel contour to the parabola is exact; the midpoint
    trapezoid then converges geometrically and is uniform in x.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p, w = _parabola_nodes()
    num = p ** (alpha - 1.0) if power_alpha else np.ones_like(p)
    vals = (w * num)[None, :] / (p[None, :] ** alpha + x[:, None])
    return vals.sum(axis=1).real


def mittag_leffler(alpha: float, z) -> float | np.ndarray:
    """Standard Mittag-Leffler function E_alpha(z) for real z.

    Uses the power series for |z| <= 5 and the Gauss-Laguerre spectral
    quadrature for large negative arguments.  E_1(z) = exp(z) exactly.
    """
    if not 0.0 < alpha <= 1.0:
        raise ParameterError(f"mittag_leffler requires alpha in (0, 1], got {alpha}")
    scalar = np.isscalar(z)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if alpha == 1.0:
        out = np.exp(z)
        return float(out[0]) if scalar else out
    out = np.empty_like(z)
    small = z >= -_ML_SERIES_RADIUS
    if np.any(small):
        # positive arguments have no cancellation, the series is safe there
        out[small] = _ml_series(alpha, 1.0, z[small])
    if np.any(~small):
        out[~small] = _ml_contour(alpha, -z[~small])
    return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# Kernel evaluation and resolvents
# ---------------------------------------------------------------------------

def eval_kernel(spec: KernelSpec, t) -> float | np.ndarray:
    """Evaluate K(t) for t > 0 (singular families reject t <= 0)."""
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if spec.singular and np.any(t <= 0.0):
        raise DomainError(f"{spec.family} kernel is singular at t <= 0")
    if spec.family == "constant":
        out = np.ones_like(t)
    elif spec.family == "exponential":
        out = np.exp(-spec.beta * t)
    elif spec.family == "fractional":
        out = t ** (spec.alpha - 1.0) / gamma_fn(spec.alpha)
    else:  # gamma
        out = t ** (spec.alpha - 1.0) * np.exp(-spec.beta * t) / gamma_fn(spec.alpha)
    return float(out[0]) if scalar else out


def resolvent(spec: ResolventSpec, t) -> float | np.ndarray:
    """R_lam(t) for t >= 0.

    Closed form E_alpha(-lam t^alpha) for the fractional family and
    exp(-lam t) for the constant kernel.  The exponential kernel has the
    elementary form (beta + lam e^(-(beta+lam) t)) / (beta + lam); the
    gamma family is integrated from its density, see
    :func:`resolvent_density`.
    """
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0.0):
        raise DomainError("resolvent requires t >= 0")
    k, lam = spec.kernel, spec.lam
    if k.family == "constant":
        out = np.exp(-lam * t)
    elif k.family == "fractional":
        out = np.asarray(mittag_leffler(k.alpha, -lam * t ** k.alpha))
    elif k.family == "exponential":
        b = k.beta
        out = (b + lam * np.exp(-(b + lam) * t)) / (b + lam)
    else:  # gamma: R(t) = 1 - int_0^t e^(-beta s) f^frac_lam(s) ds
        out = np.array([1.0 - _gamma_density_integral(spec, ti) for ti in t])
    return float(out[0]) if scalar else out


def _gamma_density_integral(spec: ResolventSpec, t: float) -> float:
    """int_0^t e^(-beta s) f^frac_{alpha,lam}(s) ds for the gamma family.

    The substitution s = w^(1/alpha) removes the s^(alpha-1) endpoint
    singularity; geometric panels keep the Legendre rule sharp when the
    transformed upper limit t^alpha is large.
    """
    if t == 0.0:
        return 0.0
    alpha, b, lam = spec.kernel.alpha, spec.kernel.beta, spec.lam
    frac = ResolventSpec(fractional_kernel(alpha), lam)

    def smooth(w):
        s = w ** (1.0 / alpha)
        return np.exp(-b * s) * resolvent_density(frac, s) * s ** (1.0 - alpha) / alpha

    nodes, weights = roots_legendre(48)
    w_hi = t ** alpha
    edges = [0.0, min(1.0, w_hi)]
    while edges[-1] < w_hi:
        edges.append(min(4.0 * edges[-1], w_hi))
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        h = 0.5 * (hi - lo)
        w = lo + h * (nodes + 1.0)
        total += h * float(weights @ smooth(w))
    return total


def resolvent_density(spec: ResolventSpec, t) -> float | np.ndarray:
    """f_lam(t) = -R'_lam(t) for t > 0.

    Fractional family: lam t^(alpha-1) E_{alpha,alpha}(-lam t^alpha),
    evaluated by series for lam t^alpha <= 5 and by the spectral
    quadrature beyond.  Gamma family uses the exponential-shift identity
    f^gamma_lam(t) = e^(-beta t) f^frac_lam(t).
    """
    scalar = np.isscalar(t)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t <= 0.0):
        raise DomainError("resolvent_density requires t > 0")
    k, lam = spec.kernel, spec.lam
    if k.family == "constant":
        out = lam * np.exp(-lam * t)
    elif k.family == "exponential":
        out = lam * np.exp(-(k.beta + lam) * t)
    else:
        alpha = k.alpha
        if alpha == 1.0:
            out = lam * np.exp(-lam * t)
        else:
            x = lam * t ** alpha
            out = np.empty_like(t)
            small = x <= _ML_SERIES_RADIUS
            if np.any(small):
                out[small] = (
                    lam * t[small] ** (alpha - 1.0) * _ml_series(alpha, alpha, -x[small])
                )
            if np.any(~small):
                # f_lam(t) = lam t^(alpha-1) E_{a,a}(-x) with the E_{a,a}
                # factor recovered from the q = 0 contour integral
                out[~small] = (
                    lam * t[~small] ** (alpha - 1.0) * _ml_contour(alpha, x[~small], power_alpha=False)
                )
        if k.family == "gamma":
            out = out * np.exp(-k.beta * t)
    return float(out[0]) if scalar else out


def resolvent_limit(spec: ResolventSpec) -> float:
    """a = lim_{t->inf} R_lam(t).

    Zero for fractional and constant kernels; beta/(beta+lam) for the
    exponential family and beta^alpha/(beta^alpha+lam) for gamma (from
    the Laplace transform lam/(p^alpha+lam) of the fractional density).
    """
    k = spec.kernel
    if k.family == "exponential":
        return k.beta / (k.beta + spec.lam)
    if k.family == "gamma" and k.beta > 0.0:
        ba = k.beta ** k.alpha
        return ba / (ba + spec.lam)
    return 0.0


# ---------------------------------------------------------------------------
# Segment integrals
# ---------------------------------------------------------------------------

def kernel_mean_segment(spec: KernelSpec, t_k, a, b) -> float | np.ndarray:
    """int_a^b K(t_k - s) ds for a < b <= t_k (vectorized in t_k).

    Fractional closed form ((t_k-a)^alpha - (t_k-b)^alpha)/Gamma(alpha+1);
    the gamma family reduces to regularized incomplete gamma functions.
    """
    scalar = np.isscalar(t_k)
    t_k = np.atleast_1d(np.asarray(t_k, dtype=float))
    if not a < b:
        raise DomainError(f"segment [{a}, {b}] is empty or reversed")
    if np.any(b > t_k * (1 + 1e-12) + 1e-300):
        raise DomainError("segment must satisfy b <= t_k")
    fam = spec.family
    if fam == "constant":
        out = np.full_like(t_k, b - a)
    elif fam == "exponential":
        bt = spec.beta
        out = (np.exp(-bt * (t_k - b)) - np.exp(-bt * (t_k - a))) / bt
    elif fam == "fractional" or (fam == "gamma" and spec.beta == 0.0):
        al = spec.alpha
        out = ((t_k - a) ** al - np.maximum(t_k - b, 0.0) ** al) / gamma_fn(al + 1.0)
    else:
        al, bt = spec.alpha, spec.beta
        hi = gammainc(al, bt * (t_k - a))
        lo = gammainc(al, bt * np.maximum(t_k - b, 0.0))
        out = (hi - lo) / bt ** al
    return float(out[0]) if scalar else out


@lru_cache(maxsize=64)
def _jacobi_rule(exponent: float):
    # weight (1 - x)^exponent on [-1, 1]
    x, w = roots_jacobi(_N_JACOBI, exponent, 0.0)
    return x, w


@lru_cache(maxsize=8)
def _legendre_rule(n: int = _N_LEGENDRE):
    return roots_legendre(n)


def kernel_cross_segment(spec: KernelSpec, t_k: float, t_k2: float, a: float, b: float) -> float:
    """int_a^b K(t_k - s) K(t_k2 - s) ds for a < b <= min(t_k, t_k2).

    Needed for the covariance of kernel-weighted Brownian integrals.  The
    equal-time fractional case has the closed form
    ((t_k-a)^(2a-1) - (t_k-b)^(2a-1)) / ((2a-1) Gamma(a)^2); otherwise a
    Gauss-Jacobi rule absorbs the (t_min - s)^(alpha-1) endpoint
    singularity whenever b hits t_min, and plain Gauss-Legendre is used
    when both factors are regular on the segment.
    """
    if not a < b:
        raise DomainError(f"segment [{a}, {b}] is empty or reversed")
    t_lo, t_hi = min(t_k, t_k2), max(t_k, t_k2)
    if b > t_lo * (1 + 1e-12) + 1e-300:
        raise DomainError("segment must satisfy b <= min(t_k, t_k2)")
    fam = spec.family
    if fam == "constant":
        return b - a
    if fam == "exponential":
        bt = spec.beta
        return np.exp(-bt * (t_k + t_k2)) * (np.exp(2 * bt * b) - np.exp(2 * bt * a)) / (2 * bt)
    al = spec.alpha
    pure_frac = fam == "fractional" or spec.beta == 0.0
    if pure_frac and t_k == t_k2:
        if al == 1.0:
            return b - a
        p = 2.0 * al - 1.0
        return ((t_k - a) ** p - (t_k - b) ** p) / (p * gamma_fn(al) ** 2)
    singular_at_b = spec.singular and np.isclose(b, t_lo, rtol=1e-12, atol=0.0)
    if singular_at_b:
        expo = 2.0 * al - 2.0 if t_k == t_k2 else al - 1.0
        nodes, weights = _jacobi_rule(expo)
        h = 0.5 * (b - a)
        s = a + h * (nodes + 1.0)
        # split off the singular power of (t_lo - s); the rest is smooth
        smooth = eval_kernel(spec, t_hi - s) if t_k != t_k2 else np.ones_like(s)
        g = gamma_fn(al)
        if t_k == t_k2:
            smooth = smooth * np.exp(-2.0 * spec.beta * (t_lo - s)) / g**2 if fam == "gamma" else smooth / g**2
        else:
            rest = np.exp(-spec.beta * (t_lo - s)) / g if fam == "gamma" else 1.0 / g
            smooth = smooth * rest
        return float(h ** (expo + 1.0) * (weights @ smooth))
    nodes, weights = _legendre_rule()
    h = 0.5 * (b - a)
    s = a + h * (nodes + 1.0)
    vals = eval_kernel(spec, t_k - s) * eval_kernel(spec, t_k2 - s)
    return float(h * (weights @ vals))


def segment_moments(spec: KernelSpec, lags: np.ndarray, dt: float):
    """Zeroth and first kernel moments over one grid cell at integer lags.

    For j in ``lags`` returns m0[j] = int_{jd}^{(j+1)d} K(u) du and
    m1[j] = int_{jd}^{(j+1)d} K(u) ((j+1)d - u) du, the weights of
    product integration that is exact for piecewise-linear integrands.
    """
    lags = np.asarray(lags, dtype=float)
    lo = lags * dt
    hi = (lags + 1.0) * dt
    fam = spec.family
    if fam == "constant":
        m0 = np.full_like(lo, dt)
        m1 = np.full_like(lo, 0.5 * dt * dt)
        return m0, m1
    if fam == "exponential":
        bt = spec.beta
        e_lo, e_hi = np.exp(-bt * lo), np.exp(-bt * hi)
        m0 = (e_lo - e_hi) / bt
        # int u K du = [-(u/b + 1/b^2) e^(-bu)]
        int_u = (lo / bt + 1.0 / bt**2) * e_lo - (hi / bt + 1.0 / bt**2) * e_hi
        m1 = hi * m0 - int_u
        return m0, m1
    al = spec.alpha
    if fam == "fractional" or spec.beta == 0.0:
        return _power_moments(al, lo, hi)
    bt = spec.beta
    g0 = (gammainc(al, bt * hi) - gammainc(al, bt * lo)) / bt ** al
    g1 = gamma_fn(al + 1.0) / gamma_fn(al) * (
        gammainc(al + 1.0, bt * hi) - gammainc(al + 1.0, bt * lo)
    ) / bt ** (al + 1.0)
    return g0, hi * g0 - g1


def _power_moments(r: float, lo: np.ndarray, hi: np.ndarray):
    """Cell moments of the power kernel u^(r-1)/Gamma(r), any r in (0, 1]."""
    g = gamma_fn(r)
    m0 = (hi ** r - lo ** r) / (r * g)
    int_u = (hi ** (r + 1.0) - lo ** (r + 1.0)) / ((r + 1.0) * g)
    return m0, hi * m0 - int_u


def kernel_convolve(spec: KernelSpec, g: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """(K * g)(t_k) on a uniform grid, exact for piecewise-linear g."""
    g = np.asarray(g, dtype=float)
    grid = np.asarray(grid, dtype=float)
    n = len(grid) - 1
    if g.shape != grid.shape:
        raise DomainError("g must be sampled on the given grid")
    dt = grid[1] - grid[0]
    if not np.allclose(np.diff(grid), dt):
        raise DomainError("kernel_convolve requires a uniform grid")
    m0, m1 = segment_moments(spec, np.arange(n), dt)
    w_right = m1 / dt          # weight on g(t_l) for cell ending at lag j
    w_left = m0 - w_right      # weight on g(t_{l-1})
    out = np.zeros(n + 1)
    # (K*g)(t_k) = sum_{l=1..k} w_left[k-l] g_{l-1} + w_right[k-l] g_l
    out[1:] = (
        np.convolve(w_left, g[:-1])[:n]
        + np.convolve(w_right, g[1:])[:n]
    )
    return out


def resolvent_equation_residual(spec: ResolventSpec, T: float, n: int) -> float:
    """max_k |R(t_k) + lam (K*R)(t_k) - 1| on the uniform grid over [0, T].

    The convolution is product integration against the piecewise-linear
    interpolant of R, so the residual measures how well the evaluated
    resolvent satisfies its defining Volterra equation.
    """
    grid = np.linspace(0.0, T, n + 1)
    R = np.asarray(resolvent(spec, grid))
    conv = kernel_convolve(spec.kernel, R, grid)
    return float(np.max(np.abs(R + spec.lam * conv - 1.0)))


def fractional_integral(r: float, f: np.ndarray, T: float) -> float:
    """Riemann-Liouville fractional integral I^r f(T) of a grid function.

    f is sampled on the uniform grid over [0, T]; the product-integration
    rule integrates (T-s)^(r-1) against the piecewise-linear interpolant
    exactly, so I^1 reduces to the trapezoidal rule.
    """
    if not 0.0 < r <= 1.0:
        raise ParameterError(f"fractional order r must be in (0, 1], got {r}")
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or len(f) < 2:
        raise DomainError("f must be a 1-d grid function with at least 2 samples")
    n = len(f) - 1
    dt = T / n
    lags = np.arange(n, dtype=float)
    m0, m1 = _power_moments(r, lags * dt, (lags + 1.0) * dt)
    w_right = m1 / dt
    w_left = m0 - w_right
    # lag j = n - l pairs cell l with weights at distance from T
    fl = f[:-1][::-1]   # g_{l-1} ordered by lag
    fr = f[1:][::-1]    # g_l ordered by lag
    return float(w_left @ fl + w_right @ fr)
