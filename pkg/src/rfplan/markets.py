"""Statistical models of market returns, Treasury rates, and inflation.

Market returns follow a small Gaussian mixture.  Treasury rates and
piecewise-linearly transformed inflation follow a mean-reverting VAR(1).
Portfolio real returns combine the two: a stock weight times the market
return, the rest in Treasuries, minus inflation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of univariate normals for annual market returns."""

    weights: tuple[float, ...]
    means: tuple[float, ...]
    std_devs: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.weights) == len(self.means) == len(self.std_devs)):
            raise ModelError("component lists must have equal length")
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ModelError("weights must sum to one")
        if any(w < 0 for w in self.weights):
            raise ModelError("weights must be nonnegative")
        if any(s < 0 for s in self.std_devs):
            raise ModelError("std deviations must be nonnegative")

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.means))

    @property
    def std(self) -> float:
        w = np.asarray(self.weights)
        m = np.asarray(self.means)
        s = np.asarray(self.std_devs)
        second = float(np.dot(w, s**2 + m**2))
        return math.sqrt(max(second - self.mean**2, 0.0))


@dataclass(frozen=True)
class PWLTransform:
    """Invertible piecewise linear map with one kink, used to symmetrize inflation."""

    kink: float = 0.029
    slope_below: float = 2.5
    slope_above: float = 0.75

    def __post_init__(self):
        if self.slope_below <= 0 or self.slope_above <= 0:
            raise ModelError("slopes must be positive")


@dataclass(frozen=True)
class VARModel:
    """First-order vector autoregression x_{t+1} = mu + A (x_t - mu) + eps_t."""

    mean: np.ndarray
    coefficient: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.coefficient)
        s = np.asarray(self.noise_cov)
        if a.shape != (2, 2) or s.shape != (2, 2) or np.asarray(self.mean).shape != (2,):
            raise ModelError("expected a 2-dimensional VAR")
        if not np.allclose(s, s.T, atol=1e-12):
            raise ModelError("noise covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(s)) < -1e-12:
            raise ModelError("noise covariance must be positive semidefinite")
        if self.spectral_radius >= 1:
            raise ModelError("VAR coefficient must have spectral radius < 1")

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.coefficient))))


@dataclass(frozen=True)
class PortfolioSpec:
    """Stock weight of a stock/Treasury portfolio, e.g. 0.6 for 60/40."""

    stock_weight: float
    label: str = ""

    def __post_init__(self):
        if not (0.0 <= self.stock_weight <= 1.0):
            raise ModelError("stock weight must lie in [0, 1]")


# Fitted model parameters used throughout: a three-component mixture for
# annual market returns (weights renormalized from their two-decimal
# published form) and a VAR(1) for the Treasury rate and transformed
# inflation.
_W = (0.38, 0.25, 0.38)
GMM_PRESET = GaussianMixture(
    weights=tuple(w / sum(_W) for w in _W),
    means=(0.28, -0.11, 0.11),
    std_devs=(0.11, 0.16, 0.12),
)
INFLATION_TRANSFORM = PWLTransform(kink=0.029, slope_below=2.5, slope_above=0.75)
VAR_PRESET = VARModel(
    mean=np.array([0.058, 0.029]),
    coefficient=np.array([[0.80, 0.24], [-0.04, 0.88]]),
    noise_cov=1e-4 * np.array([[0.72, 0.48], [0.48, 1.47]]),
)

MARKET_FORECAST = 0.120  # long-run average annual market return

BROKERAGE_PORTFOLIO = PortfolioSpec(0.20, "20/80")
RETIREMENT_PORTFOLIO = PortfolioSpec(0.60, "60/40")

# Fixed real gross return forecasts (historical averages); the collared
# variants are the averages under the self-financing collar.
FIXED_FORECASTS = {"20/80": 1.032, "60/40": 1.055}
FIXED_FORECASTS_COLLARED = {"20/80": 1.034, "60/40": 1.054}


def sample_market_returns(gmm: GaussianMixture, n: int, rng) -> np.ndarray:
    """Draw n i.i.d. annual market returns from the mixture."""
    if n < 1:
        raise ModelError("n must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    comp = rng.choice(len(gmm.weights), size=n, p=gmm.weights)
    means = np.asarray(gmm.means)[comp]
    stds = np.asarray(gmm.std_devs)[comp]
    return means + stds * rng.standard_normal(n)


def fit_gmm(
    returns: np.ndarray,
    m: int,
    rng=None,
    max_iter: int = 500,
    tol: float = 1e-10,
    std_floor: float = 1e-6,
    error_on_degenerate: bool = False,
) -> tuple[GaussianMixture, float]:
    """Fit an m-component mixture by expectation-maximization.

    Initializes component means at spread quantiles plus a small seeded
    jitter.  Returns the fitted mixture and its final log-likelihood; the
    log-likelihood is nondecreasing across iterations.  A component whose
    std collapses is floored at ``std_floor`` (or raises when
    ``error_on_degenerate``).
    """
    x = np.asarray(returns, dtype=float)
    n = len(x)
    if n < 10 * m:
        raise ModelError(f"need at least {10 * m} observations to fit {m} components")
    rng = np.random.default_rng(rng)

    qs = np.quantile(x, np.linspace(0.1, 0.9, m))
    mu = qs + 1e-3 * x.std() * rng.standard_normal(m)
    sigma = np.full(m, x.std() if x.std() > 0 else 1.0)
    w = np.full(m, 1.0 / m)

    prev_ll = -np.inf
    ll = prev_ll
    for _ in range(max_iter):
        # E step: responsibilities via log densities.
        logp = (
            -0.5 * ((x[:, None] - mu) / sigma) ** 2
            - np.log(sigma)
            - 0.5 * math.log(2 * math.pi)
            + np.log(w)
        )
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        resp = np.exp(logp - norm[:, None])
        # M step.
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        w = nk / n
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk
        if np.any(var < std_floor**2):
            if error_on_degenerate:
                raise ModelError("degenerate mixture component (std collapsed)")
            var = np.maximum(var, std_floor**2)
        sigma = np.sqrt(var)
        if ll - prev_ll < tol * max(abs(prev_ll), 1.0) and np.isfinite(prev_ll):
            break
        prev_ll = ll
    w = w / w.sum()
    gmm = GaussianMixture(tuple(w), tuple(mu), tuple(sigma))
    return gmm, ll


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    hi = np.max(a, axis=axis, keepdims=True)
    return (hi + np.log(np.sum(np.exp(a - hi), axis=axis, keepdims=True))).squeeze(axis)


def transform_inflation(z, t: PWLTransform):
    """Map a raw inflation rate through the symmetrizing kinked line."""
    z = np.asarray(z, dtype=float)
    out = np.where(
        z <= t.kink,
        (z - t.kink) * t.slope_below + t.kink,
        (z - t.kink) * t.slope_above + t.kink,
    )
    return float(out) if out.ndim == 0 else out


def inverse_transform(y, t: PWLTransform):
    """Exact inverse of :func:`transform_inflation`."""
    y = np.asarray(y, dtype=float)
    out = np.where(
        y <= t.kink,
        (y - t.kink) / t.slope_below + t.kink,
        (y - t.kink) / t.slope_above + t.kink,
    )
    return float(out) if out.ndim == 0 else out


def fit_var(series: np.ndarray) -> VARModel:
    """Least-squares VAR(1) fit on a (T, 2) series (inflation already transformed).

    The mean is the empirical mean; the coefficient minimizes the summed
    squared one-step errors of the centered series; the noise covariance
    is the empirical covariance of the residuals.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2 or x.shape[0] < 3:
        raise ModelError("need a (T, 2) series with T >= 3")
    mu = x.mean(axis=0)
    z = x - mu
    z0, z1 = z[:-1], z[1:]
    gram = z0.T @ z0
    if np.linalg.cond(gram) > 1e12:
        raise ModelError("singular regressor covariance; series lacks variation")
    a = np.linalg.solve(gram, z0.T @ z1).T
    resid = z1 - z0 @ a.T
    cov = resid.T @ resid / len(resid)
    cov = 0.5 * (cov + cov.T)
    return VARModel(mean=mu, coefficient=a, noise_cov=cov)


def simulate_var(model: VARModel, x0: np.ndarray, horizon: int, rng) -> np.ndarray:
    """Simulate the recursion for ``horizon`` steps; returns a (horizon, 2) path.

    The path holds the raw state (transformed inflation in the second
    coordinate); apply :func:`inverse_transform` to recover inflation.
    """
    if horizon < 1:
        raise ModelError("horizon must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    chol = _safe_cholesky(model.noise_cov)
    eps = rng.standard_normal((horizon, 2)) @ chol.T
    path = np.empty((horizon, 2))
    x = np.asarray(x0, dtype=float)
    for t in range(horizon):
        x = model.mean + model.coefficient @ (x - model.mean) + eps[t]
        path[t] = x
    return path


def _safe_cholesky(cov: np.ndarray) -> np.ndarray:
    if np.allclose(cov, 0):
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(cov + 1e-14 * np.eye(len(cov)))


def steady_state_cov(model: VARModel) -> np.ndarray:
    """Stationary covariance: the solution of S = A S A' + noise_cov.

    Solved directly by vectorizing to a 4x4 linear system.
    """
    a = np.asarray(model.coefficient)
    eye = np.eye(4)
    vec = np.linalg.solve(eye - np.kron(a, a), np.asarray(model.noise_cov).ravel())
    s = vec.reshape(2, 2)
    return 0.5 * (s + s.T)


def steady_state_sample(model: VARModel, rng) -> np.ndarray:
    """Draw an initial state from the stationary distribution N(mu, S)."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    chol = _safe_cholesky(steady_state_cov(model))
    return np.asarray(model.mean) + chol @ rng.standard_normal(2)


def forecast_var(model: VARModel, x_t: np.ndarray, horizons) -> np.ndarray:
    """Conditional mean forecasts mu + A^h (x_t - mu) at each horizon h >= 1."""
    hs = np.atleast_1d(horizons).astype(int)
    if np.any(hs < 1):
        raise ModelError("horizons must be >= 1")
    dev = np.asarray(x_t, dtype=float) - model.mean
    out = np.empty((len(hs), 2))
    for i, h in enumerate(hs):
        out[i] = model.mean + np.linalg.matrix_power(model.coefficient, h) @ dev
    return out if np.ndim(horizons) else out[0] if len(hs) == 1 else out


def portfolio_real_return(market_r, treasury_r, inflation, spec: PortfolioSpec):
    """Inflation-adjusted portfolio return for the given stock weight."""
    w = spec.stock_weight
    return w * np.asarray(market_r) + (1 - w) * np.asarray(treasury_r) - np.asarray(inflation)


def load_market_returns(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (year, market_return) delimited text; returns (years, returns)."""
    data = _read_columns(path, 2)
    return data[:, 0].astype(int), data[:, 1]


def load_rate_history(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Read (year, treasury_rate, inflation_rate); returns the three columns."""
    data = _read_columns(path, 3)
    return data[:, 0].astype(int), data[:, 1], data[:, 2]


def _read_columns(path, ncols: int) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line[0].isalpha():
                continue
            parts = line.replace(",", " ").split()
            if len(parts) < ncols:
                raise ModelError(f"expected {ncols} columns in {path}")
            rows.append([float(p) for p in parts[:ncols]])
    if not rows:
        raise ModelError(f"no data rows in {path}")
    return np.asarray(rows)


def save_preset(path, gmm: GaussianMixture, var: VARModel, transform: PWLTransform) -> None:
    doc = {
        "gmm": {
            "weights": [float(v) for v in gmm.weights],
            "means": [float(v) for v in gmm.means],
            "std_devs": [float(v) for v in gmm.std_devs],
        },
        "var": {
            "mean": np.asarray(var.mean, dtype=float).tolist(),
            "coefficient": np.asarray(var.coefficient, dtype=float).tolist(),
            "noise_cov": np.asarray(var.noise_cov, dtype=float).tolist(),
        },
        "inflation_transform": {
            "kink": float(transform.kink),
            "slope_below": float(transform.slope_below),
            "slope_above": float(transform.slope_above),
        },
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def load_preset(path) -> tuple[GaussianMixture, VARModel, PWLTransform]:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    g = doc["gmm"]
    v = doc["var"]
    t = doc.get("inflation_transform", {})
    return (
        GaussianMixture(tuple(g["weights"]), tuple(g["means"]), tuple(g["std_devs"])),
        VARModel(
            mean=np.asarray(v["mean"], dtype=float),
            coefficient=np.asarray(v["coefficient"], dtype=float),
            noise_cov=np.asarray(v["noise_cov"], dtype=float),
        ),
        PWLTransform(
            kink=float(t.get("kink", 0.029)),
            slope_below=float(t.get("slope_below", 2.5)),
            slope_above=float(t.get("slope_above", 0.75)),
        ),
    )
