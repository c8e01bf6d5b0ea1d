"""Mixture weights over candidate structures, Bayes factors and validation draws."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from dbnmix.dual import DualSolution
from dbnmix.errors import DomainError
from dbnmix.lsem import ParamSet, StructureMask, SupportMap, TrajectoryDataset, build_support_map, embed_params, loss
from dbnmix.sampler import PosteriorChain


@dataclass
class ModelRecord:
    mask: StructureMask
    point_params: ParamSet
    dual: DualSolution
    chain: PosteriorChain

    @property
    def support(self) -> SupportMap:
        return build_support_map(self.mask)


@dataclass
class MixtureEnsemble:
    models: list[ModelRecord]
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.models) < 1:
            raise ValueError("an ensemble needs at least one model")
        if self.weights.shape != (len(self.models),):
            raise ValueError(f"expected {len(self.models)} weights, got shape {self.weights.shape}")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")


def mixture_weights(mean_losses, temperature: float = 1.0) -> np.ndarray:
    """Softmax of ``-mean_losses / temperature``; ``temperature = 1`` is the plain exponential weighting."""
    losses = np.asarray(mean_losses, dtype=float).ravel()
    if losses.size < 1:
        raise ValueError("need at least one loss")
    if not np.all(np.isfinite(losses)):
        raise ValueError("mean losses must be finite")
    if not temperature > 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    logits = -losses / temperature
    w = np.exp(logits - logsumexp(logits))
    return w / w.sum()


def bayes_factor(weights, i: int, j: int) -> float:
    """Posterior odds ``w_i / w_j`` of model ``i`` against model ``j`` (0-based)."""
    weights = np.asarray(weights, dtype=float)
    if weights[j] == 0:
        raise DomainError(f"weight of model {j} is zero")
    return float(weights[i] / weights[j])


def bayes_factor_matrix(weights) -> list[list[float | None]]:
    """All pairwise factors; ``None`` where the denominator weight is zero."""
    weights = np.asarray(weights, dtype=float)
    m = len(weights)
    return [[bayes_factor(weights, i, j) if weights[j] > 0 else None for j in range(m)] for i in range(m)]


def select_models(weights, rho) -> np.ndarray:
    """Inverse CDF: smallest index whose cumulative weight reaches ``rho`` in ``(0, 1]``."""
    cdf = np.cumsum(np.asarray(weights, dtype=float))
    cdf /= cdf[-1]
    last = int(np.flatnonzero(np.asarray(weights) > 0)[-1])
    cdf[last:] = 1.0
    return np.searchsorted(cdf, np.asarray(rho), side="left")


def sample_evaluation(ensemble: MixtureEnsemble, valset: TrajectoryDataset, n_draws: int, seed: int = 0):
    """Validation losses of ``n_draws`` (model, chain sample) pairs drawn from the mixture.

    Returns ``(losses, model_indices)``.
    """
    if n_draws < 1:
        raise ValueError(f"need at least one draw, got {n_draws}")
    for m, rec in enumerate(ensemble.models):
        if len(rec.chain.samples) == 0:
            raise ValueError(f"model {m} has an empty chain")
    rng = np.random.default_rng(seed)
    rho = 1.0 - rng.random(n_draws)
    models = select_models(ensemble.weights, rho)
    maps = [rec.support for rec in ensemble.models]
    out = np.empty(n_draws)
    for r, m in enumerate(models):
        chain = ensemble.models[m].chain.samples
        theta = chain[rng.integers(len(chain))]
        out[r] = loss(valset, embed_params(theta, maps[m]))
    return out, models


def point_estimate_losses(ensemble: MixtureEnsemble, valset: TrajectoryDataset) -> np.ndarray:
    return np.array([loss(valset, rec.point_params) for rec in ensemble.models])


def histogram(values, n_bins: int = 30) -> list[tuple[float, float, int]]:
    """Equal-width bins over ``[min, max]`` with the last bin closed.

    A constant sample gets a unit-width range centred on the value.
    """
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("histogram of an empty sample")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    counts, edges = np.histogram(values, bins=n_bins)
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k])) for k in range(n_bins)]
