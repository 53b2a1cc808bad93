"""Noise distributions, the generalized-loss induced density and Gaussian fitting.

Every sampler takes an explicit ``numpy.random.Generator`` so Monte Carlo
batches are replayable from their seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .correntropy import KernelConfig, gl_loss


class NoiseSpec:
    """Base class for scalar noise distributions."""

    kind = "abstract"

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, x) -> np.ndarray:
        raise NotImplementedError

    def logpdf(self, x) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def var(self) -> float:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(NoiseSpec):
    """Degenerate noise that is always 0, for noise-free runs."""

    kind = "zero"

    def sample(self, rng, size):
        return np.zeros(size)

    def pdf(self, x):
        raise ValueError("the zero distribution has no density")

    def logpdf(self, x):
        raise ValueError("the zero distribution has no density")

    @property
    def mean(self):
        return 0.0

    @property
    def var(self):
        return 0.0

    def to_dict(self):
        return {"type": "zero"}


@dataclass(frozen=True)
class Gaussian(NoiseSpec):
    mu: float = 0.0
    sigma2: float = 1.0
    kind = "gaussian"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("Gaussian variance must be positive")

    def sample(self, rng, size):
        return self.mu + math.sqrt(self.sigma2) * rng.standard_normal(size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * (x - self.mu) ** 2 / self.sigma2) / math.sqrt(
            2 * math.pi * self.sigma2)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -0.5 * (x - self.mu) ** 2 / self.sigma2 - 0.5 * math.log(2 * math.pi * self.sigma2)

    @property
    def mean(self):
        return self.mu

    @property
    def var(self):
        return self.sigma2

    def to_dict(self):
        return {"type": "gaussian", "mean": self.mu, "var": self.sigma2}


@dataclass(frozen=True)
class Laplace(NoiseSpec):
    """Laplace distribution with location ``loc`` and scale ``scale`` (variance ``2 scale**2``)."""

    loc: float = 0.0
    scale: float = 1.0
    kind = "laplace"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("Laplace scale must be positive")

    def sample(self, rng, size):
        # inverse CDF
        u = rng.random(size) - 0.5
        return self.loc - self.scale * np.sign(u) * np.log1p(-2.0 * np.abs(u))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-np.abs(x - self.loc) / self.scale) / (2 * self.scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -np.abs(x - self.loc) / self.scale - math.log(2 * self.scale)

    @property
    def mean(self):
        return self.loc

    @property
    def var(self):
        return 2 * self.scale ** 2

    def to_dict(self):
        return {"type": "laplace", "loc": self.loc, "scale": self.scale}


@dataclass(frozen=True)
class Uniform(NoiseSpec):
    low: float = -1.0
    high: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not self.low < self.high:
            raise ValueError("uniform bounds must satisfy low < high")

    def sample(self, rng, size):
        return rng.uniform(self.low, self.high, size)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.low) & (x <= self.high), 1.0 / (self.high - self.low), 0.0)

    @property
    def mean(self):
        return 0.5 * (self.low + self.high)

    @property
    def var(self):
        return (self.high - self.low) ** 2 / 12

    def to_dict(self):
        return {"type": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class Mixture(NoiseSpec):
    """Convex combination ``sum_j weights[j] * components[j]``."""

    weights: tuple
    components: tuple
    kind = "mixture"

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", tuple(self.components))
        if len(w) != len(self.components) or not w:
            raise ValueError("mixture needs one weight per component")
        if any(x <= 0 for x in w) or abs(sum(w) - 1) > 1e-9:
            raise ValueError("mixture weights must be positive and sum to 1")

    def choose(self, rng, size) -> np.ndarray:
        """Component index of each draw."""
        cum = np.cumsum(self.weights)
        return np.minimum(np.searchsorted(cum, rng.random(size), side="right"),
                          len(self.weights) - 1)

    def sample(self, rng, size):
        labels = self.choose(rng, size)
        out = np.empty(np.shape(labels))
        for j, comp in enumerate(self.components):
            mask = labels == j
            out[mask] = comp.sample(rng, int(mask.sum()))
        return out

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def logpdf(self, x):
        terms = [math.log(w) + c.logpdf(x) for w, c in zip(self.weights, self.components)]
        return special.logsumexp(np.stack(terms), axis=0)

    @property
    def mean(self):
        return sum(w * c.mean for w, c in zip(self.weights, self.components))

    @property
    def var(self):
        second = sum(w * (c.var + c.mean ** 2) for w, c in zip(self.weights, self.components))
        return second - self.mean ** 2

    def to_dict(self):
        return {"type": "mixture", "weights": list(self.weights),
                "components": [c.to_dict() for c in self.components]}


_FIELDS = {
    "zero": (Zero, {}),
    "gaussian": (Gaussian, {"mean": "mu", "var": "sigma2"}),
    "laplace": (Laplace, {"loc": "loc", "scale": "scale"}),
    "uniform": (Uniform, {"low": "low", "high": "high"}),
}


def noise_from_dict(d: dict) -> NoiseSpec:
    """Build a spec from its JSON form, e.g. ``{"type": "laplace", "scale": 0.07}``."""
    d = dict(d)
    kind = d.pop("type", None)
    if kind == "mixture":
        extra = set(d) - {"weights", "components"}
        if extra:
            raise ValueError(f"unknown mixture keys: {sorted(extra)}")
        return Mixture(tuple(d["weights"]), tuple(noise_from_dict(c) for c in d["components"]))
    if kind not in _FIELDS:
        raise ValueError(f"unknown noise type {kind!r}")
    cls, names = _FIELDS[kind]
    extra = set(d) - set(names)
    if extra:
        raise ValueError(f"unknown keys for {kind} noise: {sorted(extra)}")
    return cls(**{names[k]: float(v) for k, v in d.items()})


def sample(spec: NoiseSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. variates from ``spec``."""
    return spec.sample(rng, n)


@dataclass(frozen=True)
class PdfDomain:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("domain needs lower < upper")


@lru_cache(maxsize=256)
def _gl_normalizer(alpha: float, beta: float, lower: float, upper: float) -> float:
    cfg = KernelConfig(alpha, (beta,))
    mass, err = integrate.quad(lambda e: math.exp(-gl_loss([e], cfg)), lower, upper,
                               points=[0.0] if lower < 0 < upper else None,
                               epsabs=1e-13, epsrel=1e-12, limit=200)
    if not mass > 0 or err > 1e-9 * mass:
        raise RuntimeError(f"normalization quadrature failed (mass={mass}, err={err})")
    return 1.0 / mass


def gl_pdf(e, alpha: float, beta: float, domain: PdfDomain):
    """Density ``c * exp(-J_GL(e))`` truncated to ``domain``.

    The constant ``c`` is found by adaptive quadrature and cached.
    """
    e = np.asarray(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("density argument must be finite")
    c = _gl_normalizer(float(alpha), float(beta), float(domain.lower), float(domain.upper))
    cfg = KernelConfig(alpha, (beta,))
    flat = e.reshape(-1)
    vals = np.array([math.exp(-gl_loss([v], cfg)) for v in flat]) * c
    vals[(flat < domain.lower) | (flat > domain.upper)] = 0.0
    out = vals.reshape(e.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    var: float
    mse: float
    grid: np.ndarray = field(repr=False, compare=False, default=None)


def default_fit_grid() -> np.ndarray:
    return np.linspace(-6.0, 6.0, 1001)


def _fit_mse(p, grid, mu, var):
    return float(np.mean((p - Gaussian(mu, var).pdf(grid)) ** 2))


def _golden_var(p, grid, mu, lo=1e-4, hi=1e4):
    # coarse log scan for a bracket, then golden-section refinement
    cands = np.geomspace(lo, hi, 161)
    vals = [_fit_mse(p, grid, mu, v) for v in cands]
    i = int(np.argmin(vals))
    a, b = cands[max(i - 1, 0)], cands[min(i + 1, len(cands) - 1)]
    res = optimize.minimize_scalar(lambda v: _fit_mse(p, grid, mu, v),
                                   bracket=(a, cands[i], b) if 0 < i < len(cands) - 1 else None,
                                   method="golden", tol=1e-12)
    return float(res.x)


def fit_gaussian_mse(target: NoiseSpec, grid=None, symmetric: bool | None = None,
                     max_rounds: int = 50, tol: float = 1e-10) -> GaussianFit:
    """Gaussian minimizing the mean squared density error against ``target`` on ``grid``.

    Args:
        target: distribution with a closed-form ``pdf``.
        grid: evaluation points, 1001 points on [-6, 6] by default.
        symmetric: fix the mean at 0. Defaults to ``target.mean == 0``.
        max_rounds: cap on alternating mean/variance rounds for the asymmetric case.
    """
    grid = default_fit_grid() if grid is None else np.asarray(grid, dtype=float)
    p = np.asarray(target.pdf(grid), dtype=float)
    if symmetric is None:
        symmetric = abs(target.mean) < 1e-12
    if symmetric:
        var = _golden_var(p, grid, 0.0)
        return GaussianFit(0.0, var, _fit_mse(p, grid, 0.0, var), grid)

    mu, var = float(target.mean), float(max(target.var, 1e-3))
    span = float(grid.max() - grid.min())
    for _ in range(max_rounds):
        var_new = _golden_var(p, grid, mu)
        res = optimize.minimize_scalar(lambda m: _fit_mse(p, grid, m, var_new),
                                       bounds=(grid.min(), grid.max()), method="bounded",
                                       options={"xatol": 1e-12 * span})
        mu_new = float(res.x)
        done = abs(mu_new - mu) <= tol * span and abs(var_new - var) <= tol * var
        mu, var = mu_new, var_new
        if done:
            return GaussianFit(mu, var, _fit_mse(p, grid, mu, var), grid)
    raise RuntimeError("Gaussian fit did not converge within the round cap")
