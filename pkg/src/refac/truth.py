"""Ground-truth sampling moments from complete potential-outcome tables.

Only a simulation can see every potential outcome; these helpers exist so
the simulation lab and the test suite can compare estimators and
asymptotic predictions against exact finite-population quantities.
Experiments on real data use :mod:`refac.estimate` instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .asymptotic import AsymptoticLaw, CorrelationProfile, LawComponent, correlation_profile
from .balance import (BalanceCriterion, CompleteRandomization, EffectTierCriterion,
                      GridTierCriterion, MahalanobisCriterion)
from .design import (FactorialStructure, GroupSizes, coefficient_gram,
                     orthogonalize_covariates, orthogonalize_effects)
from .errors import ValidationError
from .linalg import KroneckerPSD, population_covariance, sym_inv_sqrt, sym_inverse


def _check_tables(x: np.ndarray, potential: np.ndarray,
                  structure: FactorialStructure, sizes: GroupSizes) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    potential = np.asarray(potential, dtype=float)
    sizes.validate_for(structure)
    if potential.ndim != 2 or potential.shape[1] != structure.q_count:
        raise ValidationError(
            f"potential outcomes must be n x {structure.q_count}, got {potential.shape}")
    if potential.shape[0] != x.shape[0]:
        raise ValidationError("covariates and potential outcomes must align")
    if potential.shape[0] != sizes.n:
        raise ValidationError(
            f"population has {potential.shape[0]} units but group sizes sum to {sizes.n}")
    return x, potential


def _effect_cov_from_potentials(potential: np.ndarray, structure: FactorialStructure,
                                sizes: GroupSizes) -> np.ndarray:
    """Exact sampling covariance of the effect estimator for one potential table."""
    g = structure.contrasts
    scale4 = 4.0 ** (1 - structure.k)
    syy = population_covariance(potential)
    s_tau = structure.scale ** 2 * (g @ syy @ g.T)
    weights = np.diag(syy) / sizes.as_array()
    return scale4 * ((g * weights) @ g.T) - s_tau / sizes.n


@dataclass(frozen=True)
class PopulationTruth:
    """Exact finite-population quantities for one potential-outcome table."""

    structure: FactorialStructure
    sizes: GroupSizes
    tau: np.ndarray
    total_cov: np.ndarray
    explained_cov: np.ndarray
    residual_cov: np.ndarray
    cross_cov: np.ndarray          # (F, F * L) stacked, effect-major
    gram: np.ndarray               # effect-side Kronecker factor
    covariate_cov: np.ndarray      # finite-population S_xx
    r_squared: np.ndarray

    @property
    def covariate_count(self) -> int:
        return self.covariate_cov.shape[0]

    def imbalance(self) -> KroneckerPSD:
        return KroneckerPSD(self.gram, self.covariate_cov,
                            name="imbalance covariance")


def population_truth(x: np.ndarray, potential: np.ndarray,
                     structure: FactorialStructure,
                     sizes: GroupSizes) -> PopulationTruth:
    """Exact effect, covariance, and covariate-projection quantities.

    The explained covariance is computed from the projected potential
    outcomes (unit-level linear fits on the covariates); the identity with
    the cross-covariance route is exercised in the tests rather than
    assumed here.
    """
    x, potential = _check_tables(x, potential, structure, sizes)
    g = structure.contrasts
    scale4 = 4.0 ** (1 - structure.k)

    tau = structure.scale * g @ potential.mean(axis=0)
    total = _effect_cov_from_potentials(potential, structure, sizes)

    sxx = population_covariance(x)
    sqx = population_covariance(potential, x)          # (Q, L)
    weights = 1.0 / sizes.as_array()
    cross = scale4 * np.einsum("fq,gq,ql->fgl", g * weights, g, sqx,
                               optimize=True).reshape(structure.f_count, -1)

    centered_x = x - x.mean(axis=0)
    projected = potential.mean(axis=0) + centered_x @ sym_inverse(
        sxx, name="covariate covariance") @ sqx.T
    explained = _effect_cov_from_potentials(projected, structure, sizes)
    residual = _effect_cov_from_potentials(potential - projected, structure, sizes)

    diag = np.diag(total)
    if np.any(diag <= 0.0):
        raise ValidationError("degenerate design: an effect has zero sampling variance")
    return PopulationTruth(
        structure=structure, sizes=sizes, tau=tau, total_cov=total,
        explained_cov=explained, residual_cov=residual, cross_cov=cross,
        gram=coefficient_gram(structure, sizes), covariate_cov=sxx,
        r_squared=np.diag(explained) / diag)


# ---------------------------------------------------------------------------
# per-component explained covariances


def _stacked_cross(structure: FactorialStructure, sizes: GroupSizes,
                   left_rows: np.ndarray, sq_cross: np.ndarray) -> np.ndarray:
    g = structure.contrasts
    weights = 1.0 / sizes.as_array()
    blocks = np.einsum("fq,gq,ql->fgl", g * weights, left_rows, sq_cross,
                       optimize=True)
    return 4.0 ** (1 - structure.k) * blocks.reshape(structure.f_count, -1)


def explained_effect_tiers(x: np.ndarray, potential: np.ndarray,
                           structure: FactorialStructure, sizes: GroupSizes,
                           partition) -> list[np.ndarray]:
    """Per-effect-tier explained covariance blocks (F x F each).

    These add up to the overall explained covariance; the decomposition is
    exact because the orthogonalized tier statistics are uncorrelated.
    """
    x, potential = _check_tables(x, potential, structure, sizes)
    tiered = orthogonalize_effects(structure, sizes, partition)
    sxx = population_covariance(x)
    sqx = population_covariance(potential, x)
    out = []
    for h, (block, s) in enumerate(zip(tiered.gram_blocks, tiered.block_slices)):
        stacked = _stacked_cross(structure, sizes, tiered.coeffs[s], sqx)
        kron = KroneckerPSD(block, sxx, name=f"tier {h + 1} imbalance covariance")
        out.append(stacked @ kron.inv_dense() @ stacked.T)
    return out


def explained_grid(x: np.ndarray, potential: np.ndarray,
                   structure: FactorialStructure, sizes: GroupSizes,
                   effect_partition, covariate_partition, grid) -> list[np.ndarray]:
    """Per-grid-group explained covariance blocks (F x F each)."""
    x, potential = _check_tables(x, potential, structure, sizes)
    covariate_partition.validate(x.shape[1])
    tiered = orthogonalize_effects(structure, sizes, effect_partition)
    e = orthogonalize_covariates(x, covariate_partition)
    grid.validate(len(covariate_partition), len(effect_partition))
    out = []
    for cell in grid.cells:
        total = np.zeros((structure.f_count, structure.f_count))
        for (t, h) in cell:
            idx = list(covariate_partition.tiers[t])
            s = tiered.block_slices[h]
            sqe = population_covariance(potential, e[:, idx])
            see = population_covariance(e[:, idx])
            stacked = _stacked_cross(structure, sizes, tiered.coeffs[s], sqe)
            kron = KroneckerPSD(tiered.gram_blocks[h], see,
                                name=f"cell ({t + 1}, {h + 1}) imbalance covariance")
            total += stacked @ kron.inv_dense() @ stacked.T
        out.append(total)
    return out


def pairwise_explained(truth: PopulationTruth) -> np.ndarray:
    """Squared multiple correlation of each effect with each effect's
    covariate difference-in-means block: entry (f, k) regresses effect f on
    the k-th block of the stacked covariate contrasts."""
    f_count = truth.structure.f_count
    l_count = truth.covariate_count
    sxx_inv = sym_inverse(truth.covariate_cov, name="covariate covariance")
    out = np.empty((f_count, f_count))
    diag = np.diag(truth.total_cov)
    for k in range(f_count):
        block = truth.cross_cov[:, k * l_count:(k + 1) * l_count]
        quad = np.einsum("fl,lm,fm->f", block, sxx_inv, block)
        out[:, k] = quad / (truth.gram[k, k] * diag)
    return out


# ---------------------------------------------------------------------------
# profiles and exact asymptotic laws


def overall_profile(truth: PopulationTruth) -> CorrelationProfile:
    return correlation_profile(truth.total_cov, [truth.explained_cov])


def criterion_profile(x: np.ndarray, potential: np.ndarray,
                      structure: FactorialStructure, sizes: GroupSizes,
                      criterion: BalanceCriterion) -> CorrelationProfile:
    """Correlation profile with one component per balance statistic."""
    truth = population_truth(x, potential, structure, sizes)
    if isinstance(criterion, (CompleteRandomization, MahalanobisCriterion)):
        return overall_profile(truth)
    if isinstance(criterion, EffectTierCriterion):
        parts = explained_effect_tiers(x, potential, structure, sizes,
                                       criterion.partition)
    elif isinstance(criterion, GridTierCriterion):
        parts = explained_grid(x, potential, structure, sizes,
                               criterion.effect_partition,
                               criterion.covariate_partition, criterion.grid)
    else:
        raise ValidationError(f"unknown criterion {criterion!r}")
    return correlation_profile(truth.total_cov, parts)


def law_from_truth(x: np.ndarray, potential: np.ndarray,
                   structure: FactorialStructure, sizes: GroupSizes,
                   criterion: BalanceCriterion) -> AsymptoticLaw:
    """Exact asymptotic law of the centered effect estimator.

    Coefficients use the cross-covariance times inverse-square-root
    convention; the simulated law does not depend on that choice.
    """
    x, potential = _check_tables(x, potential, structure, sizes)
    truth = population_truth(x, potential, structure, sizes)

    if isinstance(criterion, (CompleteRandomization, MahalanobisCriterion)):
        coef = truth.cross_cov @ truth.imbalance().inv_sqrt_dense()
        cutoff = None if isinstance(criterion, CompleteRandomization) else criterion.threshold
        components = [LawComponent(coef=coef, dim=coef.shape[1], cutoff=cutoff)]
    elif isinstance(criterion, EffectTierCriterion):
        tiered = orthogonalize_effects(structure, sizes, criterion.partition)
        sqx = population_covariance(potential, x)
        components = []
        for h, (block, s) in enumerate(zip(tiered.gram_blocks, tiered.block_slices)):
            stacked = _stacked_cross(structure, sizes, tiered.coeffs[s], sqx)
            kron = KroneckerPSD(block, truth.covariate_cov,
                                name=f"tier {h + 1} imbalance covariance")
            coef = stacked @ kron.inv_sqrt_dense()
            components.append(LawComponent(coef=coef, dim=coef.shape[1],
                                           cutoff=criterion.thresholds[h]))
    elif isinstance(criterion, GridTierCriterion):
        tiered = orthogonalize_effects(structure, sizes, criterion.effect_partition)
        e = orthogonalize_covariates(x, criterion.covariate_partition)
        components = []
        for j, cell in enumerate(criterion.grid.cells):
            pieces = []
            for (t, h) in cell:
                idx = list(criterion.covariate_partition.tiers[t])
                s = tiered.block_slices[h]
                sqe = population_covariance(potential, e[:, idx])
                see = population_covariance(e[:, idx])
                stacked = _stacked_cross(structure, sizes, tiered.coeffs[s], sqe)
                kron = KroneckerPSD(tiered.gram_blocks[h], see,
                                    name=f"cell ({t + 1}, {h + 1}) imbalance covariance")
                pieces.append(stacked @ kron.inv_sqrt_dense())
            coef = np.hstack(pieces)
            components.append(LawComponent(coef=coef, dim=coef.shape[1],
                                           cutoff=criterion.thresholds[j]))
    else:
        raise ValidationError(f"unknown criterion {criterion!r}")
    return AsymptoticLaw(base_cov=truth.residual_cov, components=tuple(components))
