"""Auxiliary measurement priors and the chi-squared credibility radius.

A prior is an ellipsoidal credibility region for the newest clean
measurement: mean mu, covariance sigma, and a confidence level tau that sets
the squared Mahalanobis radius to the chi-squared quantile with one degree of
freedom per channel.  Synthetic priors stand in for an exogenous predictor
during closed-loop runs: they are centered a controlled Mahalanobis distance
away from the true measurement along a seeded random direction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.special

from .errors import ConfigurationError, InvalidModelError, PriorDegenerateError

CHI2_TOL = 1e-10


def chi2_quantile(m: int, tau: float, tol: float = CHI2_TOL) -> float:
    """Quantile of the chi-squared distribution with m degrees of freedom.

    Inverts the regularized lower incomplete gamma CDF with a bracketed
    Newton iteration (bisection fallback), to absolute tolerance tol on the
    quantile.
    """
    if m < 1 or m != int(m):
        raise InvalidModelError(f"degrees of freedom must be a positive integer, got {m}")
    if not 0.0 < tau < 1.0:
        raise InvalidModelError(f"confidence level must be in (0, 1), got {tau}")
    m = int(m)
    half = 0.5 * m

    def cdf(q: float) -> float:
        return float(scipy.special.gammainc(half, 0.5 * q))

    def pdf(q: float) -> float:
        if q <= 0.0:
            return 0.0
        logp = (half - 1.0) * math.log(q) - 0.5 * q - half * math.log(2.0) - math.lgamma(half)
        return math.exp(logp)

    # Wilson-Hilferty start, then expand to a sign-changing bracket.
    z = float(scipy.special.ndtri(tau))
    q = m * (1.0 - 2.0 / (9.0 * m) + z * math.sqrt(2.0 / (9.0 * m))) ** 3
    q = max(q, 1e-12)
    lo, hi = 0.0, max(2.0 * q, 1.0)
    while cdf(hi) < tau:
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            raise ConfigurationError(f"chi-squared quantile bracket overflow for m={m}, tau={tau}")

    q = min(max(q, lo + 1e-16), hi)
    for _ in range(200):
        f = cdf(q) - tau
        if f > 0.0:
            hi = q
        else:
            lo = q
        d = pdf(q)
        if d > 0.0:
            step = f / d
            q_new = q - step
        else:
            q_new = 0.5 * (lo + hi)
        if not lo < q_new < hi:
            q_new = 0.5 * (lo + hi)
        if abs(q_new - q) <= tol:
            return q_new
        q = q_new
    return q


def max_singular_value(sigma: np.ndarray) -> float:
    """Largest singular value of a symmetric matrix (= largest eigenvalue
    for a covariance)."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise InvalidModelError(f"expected a square matrix, got shape {sigma.shape}")
    if not np.allclose(sigma, sigma.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.max(np.abs(sigma))))):
        raise InvalidModelError("covariance must be symmetric")
    return float(np.max(np.abs(np.linalg.eigvalsh(sigma))))


@dataclass
class AuxiliaryPrior:
    """Ellipsoidal credibility region for the newest clean measurement."""

    mu: np.ndarray
    sigma: np.ndarray
    tau: float
    radius_sq: float | None = None
    _cho: tuple = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.mu = np.asarray(self.mu, dtype=float).reshape(-1)
        self.sigma = np.asarray(self.sigma, dtype=float)
        m = self.mu.size
        if self.sigma.shape != (m, m):
            raise PriorDegenerateError(f"covariance must be {m}x{m}, got {self.sigma.shape}")
        if not np.all(np.isfinite(self.mu)) or not np.all(np.isfinite(self.sigma)):
            raise PriorDegenerateError("prior contains non-finite entries")
        asym = float(np.max(np.abs(self.sigma - self.sigma.T), initial=0.0))
        if asym > 1e-10 * max(1.0, float(np.max(np.abs(self.sigma)))):
            raise PriorDegenerateError("covariance must be symmetric")
        if not 0.0 < self.tau < 1.0:
            raise PriorDegenerateError(f"confidence level must be in (0, 1), got {self.tau}")
        try:
            self._cho = scipy.linalg.cho_factor(self.sigma, lower=True)
        except scipy.linalg.LinAlgError as exc:
            raise PriorDegenerateError("covariance is not positive definite") from exc
        if self.radius_sq is None:
            self.radius_sq = chi2_quantile(m, self.tau)
        if self.radius_sq <= 0:
            raise PriorDegenerateError(f"squared radius must be positive, got {self.radius_sq}")

    @property
    def dim(self) -> int:
        return self.mu.size

    def whiten(self, rows: np.ndarray) -> np.ndarray:
        """Apply the inverse Cholesky factor: rows such that the credibility
        region becomes the Euclidean ball of radius sqrt(radius_sq)."""
        return scipy.linalg.solve_triangular(self._cho[0], rows, lower=True)


def mahalanobis_sq(y: np.ndarray, prior: AuxiliaryPrior) -> float:
    """Squared Mahalanobis distance of y from the prior mean."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != prior.dim:
        raise InvalidModelError(f"y must have {prior.dim} entries, got {y.size}")
    r = y - prior.mu
    z = scipy.linalg.cho_solve(prior._cho, r)
    return float(r @ z)


@dataclass
class PriorConfig:
    """Synthetic-prior recipe: per-channel scales, offset, confidence."""

    sigma_scale: float | np.ndarray = 1.0
    offset_fraction: float = 0.5
    tau: float = 0.99


def synth_prior(y_true: np.ndarray, cfg: PriorConfig, rng: np.random.Generator) -> AuxiliaryPrior:
    """Seeded synthetic prior around the true measurement.

    The mean sits at Mahalanobis distance exactly 3*offset_fraction from
    y_true, along a random unit direction stretched per-channel by the sigma
    scales; the covariance is diagonal with those scales squared.  Raises
    when the requested offset already exceeds the credibility radius, since
    the true measurement would start outside its own prior.
    """
    y_true = np.asarray(y_true, dtype=float).reshape(-1)
    m = y_true.size
    scales = np.asarray(cfg.sigma_scale, dtype=float)
    if scales.ndim == 0:
        scales = np.full(m, float(scales))
    elif scales.shape != (m,):
        raise ConfigurationError(f"sigma_scale must broadcast to {m} channels, got shape {scales.shape}")
    if np.any(scales <= 0) or not np.all(np.isfinite(scales)):
        raise PriorDegenerateError("sigma scales must be positive and finite")
    if cfg.offset_fraction < 0:
        raise ConfigurationError(f"offset_fraction must be nonnegative, got {cfg.offset_fraction}")

    radius_sq = chi2_quantile(m, cfg.tau)
    mahal_sq = 9.0 * cfg.offset_fraction**2
    if mahal_sq > radius_sq:
        raise ConfigurationError(
            f"offset_fraction {cfg.offset_fraction} places the true measurement at squared "
            f"Mahalanobis distance {mahal_sq:.4g}, outside the credibility radius {radius_sq:.4g}"
        )

    v = rng.standard_normal(m)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0:
        v = np.zeros(m)
        v[0] = 1.0
    else:
        v = v / nrm
    mu = y_true + 3.0 * cfg.offset_fraction * scales * v
    sigma = np.diag(scales**2)
    return AuxiliaryPrior(mu=mu, sigma=sigma, tau=cfg.tau, radius_sq=radius_sq)


def prior_from_json(doc: str | dict) -> AuxiliaryPrior:
    """Load a prior from a JSON document with fields mu, tau, and either a
    full sigma matrix or per-channel sigma_scale values."""
    data = json.loads(doc) if isinstance(doc, str) else doc
    try:
        mu = np.asarray(data["mu"], dtype=float)
        tau = float(data["tau"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"prior document must provide mu and tau: {exc}") from exc
    if "sigma" in data:
        sigma = np.asarray(data["sigma"], dtype=float)
    elif "sigma_scale" in data:
        scales = np.asarray(data["sigma_scale"], dtype=float) * np.ones(mu.size)
        sigma = np.diag(scales**2)
    else:
        raise ConfigurationError("prior document needs either sigma or sigma_scale")
    radius_sq = float(data["radius_sq"]) if "radius_sq" in data else None
    return AuxiliaryPrior(mu=mu, sigma=sigma, tau=tau, radius_sq=radius_sq)


def prior_to_json(prior: AuxiliaryPrior) -> str:
    return json.dumps(
        {
            "mu": prior.mu.tolist(),
            "sigma": prior.sigma.tolist(),
            "tau": prior.tau,
            "radius_sq": prior.radius_sq,
        },
        indent=2,
        sort_keys=True,
    )
