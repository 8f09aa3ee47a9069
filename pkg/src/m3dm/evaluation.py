"""Evaluation protocols: k-fold cross-validated L2 and Mahalanobis distance.

The CV protocol shuffles a paired dataset into disjoint folds, trains a
method on the complement of each fold, and reports the mean Euclidean error
of transformed sources against their paired targets, with the source/target
assignment fixed by the dataset's per-sample coins.  The Mahalanobis
protocol measures how close transformed parameters land to a reference
population of the target class, averaged over both transform directions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .core_model import FloatArray
from .latent_world import PairedDataset, eval_swap_flags

# a method transforms batched sources: (p_src (m,k), s_src (m,), s_trg (m,)) -> (m,k)
TransformFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
# a factory builds a method from a training subset
MethodFactory = Callable[[PairedDataset], TransformFn]


@dataclass
class CvReport:
    """Per-fold and grand-mean L2 for one (attribute, method) pair."""

    attribute: str
    method: str
    fold_means: list[float]
    grand_mean: float
    fold_sizes: list[int]
    models: list[TransformFn] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class PopulationStats:
    """Mean and shrinkage-regularized covariance with its Cholesky factor."""

    mean: FloatArray
    cov: FloatArray
    epsilon: float
    count: int
    chol: FloatArray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.chol is None:
            k = len(self.mean)
            try:
                factor = np.linalg.cholesky(self.cov + self.epsilon * np.eye(k))
            except np.linalg.LinAlgError as exc:
                raise ValueError(
                    f"regularized covariance is not positive definite; increase epsilon (={self.epsilon:g})"
                ) from exc
            object.__setattr__(self, "chol", factor)


def source_target_split(
    dataset: PairedDataset,
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """(p_src, s_src, p_trg, s_trg) under the dataset's fixed evaluation coins."""
    swapped = eval_swap_flags(dataset.seed, dataset.ids)
    p_src = np.where(swapped[:, None], dataset.p_neg, dataset.p_pos)
    p_trg = np.where(swapped[:, None], dataset.p_pos, dataset.p_neg)
    s_src = np.where(swapped, dataset.s_neg, dataset.s_pos)
    s_trg = np.where(swapped, dataset.s_pos, dataset.s_neg)
    return p_src, s_src, p_trg, s_trg


def l2_cv(
    dataset: PairedDataset,
    method_factory: MethodFactory,
    folds: int = 5,
    seed: int = 0,
    method_name: str = "",
    keep_models: bool = False,
) -> CvReport:
    """Seeded disjoint-fold cross validation of mean ||p_trg - p_tilde||.

    The dataset size must divide evenly into the folds.  Fold assignment is a
    seeded permutation of row positions; training failures propagate with the
    fold index attached.
    """
    n = len(dataset)
    if folds < 2 or n % folds != 0:
        raise ValueError(f"dataset size {n} does not divide into {folds} folds")
    fold_size = n // folds
    perm = np.random.default_rng(seed).permutation(n)
    fold_means: list[float] = []
    models: list[TransformFn] = []
    for f in range(folds):
        test_rows = perm[f * fold_size : (f + 1) * fold_size]
        train_rows = np.concatenate([perm[: f * fold_size], perm[(f + 1) * fold_size :]])
        try:
            model = method_factory(dataset.subset(train_rows))
        except Exception as exc:
            raise RuntimeError(f"method training failed on fold {f}: {exc}") from exc
        test = dataset.subset(test_rows)
        p_src, s_src, p_trg, s_trg = source_target_split(test)
        transformed = model(p_src, s_src, s_trg)
        fold_means.append(float(np.mean(np.linalg.norm(p_trg - transformed, axis=1))))
        if keep_models:
            models.append(model)
    return CvReport(
        attribute=dataset.attribute,
        method=method_name,
        fold_means=fold_means,
        grand_mean=float(np.mean(fold_means)),
        fold_sizes=[fold_size] * folds,
        models=models,
    )


def population_stats(params: np.ndarray, epsilon: Optional[float] = None) -> PopulationStats:
    """Sample mean and unbiased covariance with trace-scaled shrinkage.

    Default epsilon is 1e-6 * trace(S) / k (and a tiny absolute floor so the
    zero-covariance corner stays factorizable).
    """
    P = np.asarray(params, dtype=np.float64)
    if P.ndim != 2 or len(P) < 2:
        raise ValueError("need at least 2 parameter vectors")
    mean = P.mean(axis=0)
    centered = P - mean
    cov = centered.T @ centered / (len(P) - 1)
    if epsilon is None:
        epsilon = max(1e-6 * float(np.trace(cov)) / P.shape[1], 1e-12)
    return PopulationStats(mean=mean, cov=cov, epsilon=float(epsilon), count=len(P))


def mahalanobis(p: np.ndarray, stats: PopulationStats) -> float | FloatArray:
    """Distance in standard-deviation units, via the cached Cholesky factor.

    Accepts a single vector (k,) or a batch (m, k).
    """
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    diff = (p[None, :] if single else p) - stats.mean[None, :]
    z = scipy.linalg.solve_triangular(stats.chol, diff.T, lower=True)
    dist = np.sqrt(np.sum(z * z, axis=0))
    return float(dist[0]) if single else dist


def mahalanobis_protocol(
    transform: TransformFn,
    test_params: np.ndarray,
    test_scores: np.ndarray,
    test_labels: np.ndarray,
    stats_pos: PopulationStats,
    stats_neg: PopulationStats,
) -> float:
    """Average distance of transformed parameters to the target-class population.

    Each test source is pushed toward the opposite class by mirroring its
    score (s_trg = -s_src); averaging over all test items covers the forward
    and backward transform directions.
    """
    test_params = np.asarray(test_params, dtype=np.float64)
    test_scores = np.asarray(test_scores, dtype=np.float64)
    test_labels = np.asarray(test_labels)
    if stats_pos.count == 0 or stats_neg.count == 0:
        raise ValueError("empty class population")
    transformed = transform(test_params, test_scores, -test_scores)
    to_pos = test_labels < 0  # negatives transform toward the positive class
    dists = np.empty(len(test_params))
    if np.any(to_pos):
        dists[to_pos] = mahalanobis(transformed[to_pos], stats_pos)
    if np.any(~to_pos):
        dists[~to_pos] = mahalanobis(transformed[~to_pos], stats_neg)
    return float(np.mean(dists))
