"""Asymptotic sampling laws under rerandomized factorial designs.

The limiting law of the (centered) effect estimator is a Gaussian residual
plus one linearly-transformed truncated Gaussian per balance statistic:

    base^{1/2} eps  +  sum_i  coef_i  zeta_i,

where eps is standard Gaussian and zeta_i is a standard Gaussian vector of
dimension d_i conditioned on ||zeta_i||^2 <= cutoff_i (an untruncated
component stands in for plain randomization).  The law is invariant to the
square-root convention used for the coefficients.

Truncated vectors are sampled by spherical decomposition, not rejection:
the squared radius is an inverse-CDF draw from the truncated chi-square,
and the direction is built from independent Rademacher signs and a
Dirichlet(1/2, ..., 1/2) vector realized as normalized squared Gaussians.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .chisq import truncation_variance_factor  # noqa: F401  (re-exported)
from .errors import ValidationError
from .linalg import psd_sqrt, sym_inv_sqrt, sym_inverse


def truncated_gaussian_sample(dim: int, cutoff: float | None,
                              rng: np.random.Generator, size: int) -> np.ndarray:
    """(size, dim) draws of a standard Gaussian conditioned on norm^2 <= cutoff.

    ``cutoff=None`` means no truncation.  Every returned row satisfies the
    norm constraint exactly; the per-coordinate variance is
    :func:`truncation_variance_factor`(dim, cutoff).
    """
    if dim < 1:
        raise ValidationError(f"dimension must be >= 1, got {dim}")
    normals = rng.standard_normal((size, dim))
    if cutoff is None or np.isinf(cutoff):
        return normals
    if cutoff <= 0.0:
        raise ValidationError(f"cutoff must be positive, got {cutoff}")
    half = 0.5 * dim
    mass = special.gammainc(half, 0.5 * cutoff)
    if mass <= 0.0:
        raise ValidationError(
            f"cutoff {cutoff} underflows the chi-square CDF for dim={dim}")
    uniforms = rng.random(size)
    radius_sq = 2.0 * special.gammaincinv(half, uniforms * mass)
    radius_sq = np.minimum(radius_sq, cutoff)  # shave inverse-CDF round-off
    signs = rng.integers(0, 2, size=(size, dim)) * 2.0 - 1.0
    squares = normals ** 2
    fractions = squares / squares.sum(axis=1, keepdims=True)
    return np.sqrt(radius_sq)[:, None] * signs * np.sqrt(fractions)


@dataclass(frozen=True)
class LawComponent:
    """One truncated-Gaussian ingredient of an asymptotic law."""

    coef: np.ndarray
    dim: int
    cutoff: float | None

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.ndim != 2:
            raise ValidationError(f"component coefficient must be 2-D, got {coef.shape}")
        if coef.shape[1] != self.dim:
            raise ValidationError(
                f"coefficient has {coef.shape[1]} columns but dim={self.dim}")
        if self.cutoff is not None and self.cutoff <= 0.0:
            raise ValidationError(f"cutoff must be positive, got {self.cutoff}")
        object.__setattr__(self, "coef", coef)

    @property
    def variance_factor(self) -> float:
        return truncation_variance_factor(self.dim, self.cutoff)


@dataclass(frozen=True)
class AsymptoticLaw:
    """Gaussian base plus independent truncated-Gaussian components."""

    base_cov: np.ndarray
    components: tuple[LawComponent, ...]

    def __post_init__(self):
        base = np.asarray(self.base_cov, dtype=float)
        if base.ndim != 2 or base.shape[0] != base.shape[1]:
            raise ValidationError(f"base covariance must be square, got {base.shape}")
        for comp in self.components:
            if comp.coef.shape[0] != base.shape[0]:
                raise ValidationError(
                    f"component coefficient rows ({comp.coef.shape[0]}) must match "
                    f"the base dimension ({base.shape[0]})")
        object.__setattr__(self, "base_cov", base)
        object.__setattr__(self, "components", tuple(self.components))

    @property
    def dim(self) -> int:
        return self.base_cov.shape[0]

    def covariance(self) -> np.ndarray:
        """Exact covariance: base + sum of v * coef coef'."""
        total = self.base_cov.copy()
        for comp in self.components:
            total += comp.variance_factor * (comp.coef @ comp.coef.T)
        return total


def simulate_law(law: AsymptoticLaw, rng: np.random.Generator,
                 draws: int) -> np.ndarray:
    """(draws, dim) Monte Carlo sample of the law.

    The Gaussian base is drawn first, then each component in declaration
    order, so a fixed generator state reproduces the sample exactly.
    """
    if draws < 1:
        raise ValidationError(f"draws must be >= 1, got {draws}")
    root = psd_sqrt(law.base_cov, name="law base covariance")
    out = rng.standard_normal((draws, law.dim)) @ root.T
    for comp in law.components:
        zeta = truncated_gaussian_sample(comp.dim, comp.cutoff, rng, draws)
        out += zeta @ comp.coef.T
    return out


# ---------------------------------------------------------------------------
# squared-correlation profiles and variance reduction


@dataclass(frozen=True)
class CorrelationProfile:
    """How much of each effect's sampling variance covariates explain.

    ``per_tier[h, f]`` is the share of effect f's variance explained by the
    h-th balance component; rows sum (over components) to ``r_squared``.
    ``canonical[h]`` holds the squared canonical correlations of component
    h, sorted descending.
    """

    r_squared: np.ndarray
    per_tier: np.ndarray
    canonical: np.ndarray

    @property
    def tier_count(self) -> int:
        return self.per_tier.shape[0]


def correlation_profile(total_cov: np.ndarray,
                        explained: Sequence[np.ndarray]) -> CorrelationProfile:
    """Profile from the total effect covariance and per-component explained parts."""
    total = np.asarray(total_cov, dtype=float)
    parts = [np.asarray(w, dtype=float) for w in explained]
    if not parts:
        raise ValidationError("at least one explained component is required")
    diag = np.diag(total)
    if np.any(diag <= 0.0):
        raise ValidationError("total covariance has nonpositive diagonal entries")
    per_tier = np.vstack([np.diag(w) / diag for w in parts])
    isqrt = sym_inv_sqrt(total, name="total effect covariance")
    canonical = np.vstack([
        np.sort(np.linalg.eigvalsh(isqrt @ w @ isqrt))[::-1] for w in parts])
    return CorrelationProfile(r_squared=per_tier.sum(axis=0),
                              per_tier=per_tier, canonical=canonical)


def variance_reduction(profile: CorrelationProfile, dims, cutoffs) -> np.ndarray:
    """Asymptotic per-effect variance reduction relative to plain randomization.

    ``sum_h (1 - v_h) * share_h`` with v the truncation variance factor of
    each component; entries lie in [0, 1) and grow with tighter cutoffs.
    """
    dims = np.atleast_1d(np.asarray(dims, dtype=float))
    cutoffs = list(np.atleast_1d(np.asarray(cutoffs, dtype=object)))
    if len(dims) != profile.tier_count or len(cutoffs) != profile.tier_count:
        raise ValidationError(
            f"profile has {profile.tier_count} components; got {len(dims)} dims "
            f"and {len(cutoffs)} cutoffs")
    out = np.zeros_like(profile.r_squared)
    for h, (dim, cutoff) in enumerate(zip(dims, cutoffs)):
        v = truncation_variance_factor(int(dim), None if cutoff is None else float(cutoff))
        out += (1.0 - v) * profile.per_tier[h]
    return out


def commutation_gap(total_cov: np.ndarray,
                    explained: Sequence[np.ndarray]) -> float:
    """Largest normalized commutator among the standardized explained parts.

    A gap near zero means the components are simultaneously diagonalizable
    in the standardized metric, the regime in which tighter cutoffs are
    guaranteed to shrink quantile thresholds componentwise.
    """
    isqrt = sym_inv_sqrt(np.asarray(total_cov, dtype=float),
                         name="total effect covariance")
    mats = [isqrt @ np.asarray(w, dtype=float) @ isqrt for w in explained]
    gap = 0.0
    for a in range(len(mats)):
        for b in range(a + 1, len(mats)):
            comm = mats[a] @ mats[b] - mats[b] @ mats[a]
            scale = np.linalg.norm(mats[a]) * np.linalg.norm(mats[b])
            if scale > 0.0:
                gap = max(gap, float(np.linalg.norm(comm) / scale))
    return gap


# ---------------------------------------------------------------------------
# quantile thresholds


def validate_contrast(contrast: np.ndarray, dim: int) -> np.ndarray:
    contrast = np.atleast_2d(np.asarray(contrast, dtype=float))
    if contrast.shape[1] != dim:
        raise ValidationError(
            f"contrast has {contrast.shape[1]} columns, expected {dim}")
    if contrast.shape[0] > contrast.shape[1]:
        raise ValidationError("contrast must have at most as many rows as columns")
    singulars = np.linalg.svd(contrast, compute_uv=False)
    if singulars[-1] <= 1e-12 * singulars[0]:
        raise ValidationError("contrast rows must be linearly independent")
    return contrast


def quadratic_form_samples(law: AsymptoticLaw, contrast: np.ndarray,
                           shape: np.ndarray, rng: np.random.Generator,
                           draws: int) -> np.ndarray:
    """Monte Carlo sample of (C phi)' shape^{-1} (C phi) under the law."""
    contrast = validate_contrast(contrast, law.dim)
    kernel = sym_inverse(np.asarray(shape, dtype=float), name="confidence shape")
    phi = simulate_law(law, rng, draws) @ contrast.T
    return np.einsum("ij,jk,ik->i", phi, kernel, phi, optimize=True)


def quantile_thresholds(law: AsymptoticLaw, contrast: np.ndarray,
                        shape: np.ndarray, alphas: Sequence[float],
                        rng: np.random.Generator, draws: int) -> np.ndarray:
    """1-alpha quantiles of the standardized quadratic form, one per alpha.

    All alphas share a single batch of draws, so thresholds are nested:
    smaller alpha can never produce a smaller threshold.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any((alphas <= 0.0) | (alphas >= 1.0)):
        raise ValidationError("alpha levels must lie strictly inside (0, 1)")
    samples = quadratic_form_samples(law, contrast, shape, rng, draws)
    return np.quantile(samples, 1.0 - alphas)


def quantile_threshold(law: AsymptoticLaw, contrast: np.ndarray,
                       shape: np.ndarray, alpha: float,
                       rng: np.random.Generator, draws: int) -> float:
    """1-alpha quantile of the standardized quadratic form under the law."""
    return float(quantile_thresholds(law, contrast, shape, [alpha], rng, draws)[0])
