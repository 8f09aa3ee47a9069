"""Global attribute direction baseline: rank-1 least squares plus a shift.

Given a matrix of parameters P (one column per sample) and a label or score
vector a, the direction minimizing ||P_c - p_hat a^T||_F^2 over the centered
matrix has the closed form p_hat = P_c a / (a^T a).  Application is the
additive shift p + (s_trg - s_src) * alpha * p_hat; the gain alpha can be
refit on paired data so score units never handicap the baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core_model import FloatArray
from .latent_world import PairedDataset, eval_swap_flags


@dataclass(frozen=True)
class GlobalDirection:
    """A fitted attribute direction with its application gain and training mean."""

    p_hat: FloatArray
    attribute: str
    scale_alpha: float
    center: FloatArray
    fingerprint: str = ""

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.p_hat)):
            raise ValueError("p_hat must be finite")


def fit_direction(P: np.ndarray, a: np.ndarray, attribute: str = "", fingerprint: str = "") -> GlobalDirection:
    """Closed-form rank-1 direction from parameters (k, n) and labels/scores (n,)."""
    P = np.asarray(P, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if P.ndim != 2 or a.ndim != 1 or P.shape[1] != a.shape[0]:
        raise ValueError(f"P must be (k, n) and a (n,); got {P.shape} and {a.shape}")
    if P.shape[1] < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(a))):
        raise ValueError("non-finite entries in P or a")
    denom = float(a @ a)
    if denom == 0.0:
        raise ValueError("label vector a is all zeros")
    center = P.mean(axis=1)
    p_hat = (P - center[:, None]) @ a / denom
    return GlobalDirection(
        p_hat=p_hat, attribute=attribute, scale_alpha=1.0, center=center, fingerprint=fingerprint
    )


def apply_direction(direction: GlobalDirection, p_src: np.ndarray, s_src: float, s_trg: float) -> FloatArray:
    """Shift p_src along the direction by the score delta times the fitted gain.

    Accepts a single vector (k,) or a batch (m, k) with per-row scores.
    """
    p_src = np.asarray(p_src, dtype=np.float64)
    if p_src.shape[-1] != direction.p_hat.shape[0]:
        raise ValueError(
            f"parameter dimension {p_src.shape[-1]} does not match direction {direction.p_hat.shape[0]}"
        )
    delta = np.asarray(s_trg, dtype=np.float64) - np.asarray(s_src, dtype=np.float64)
    if p_src.ndim == 1:
        return p_src + float(delta) * direction.scale_alpha * direction.p_hat
    return p_src + delta[:, None] * direction.scale_alpha * direction.p_hat[None, :]


def refit_scale(
    direction: GlobalDirection,
    pairs: Sequence[tuple[np.ndarray, float, np.ndarray, float]],
) -> GlobalDirection:
    """Least-squares gain over (p_src, s_src, p_trg, s_trg) tuples.

    alpha = argmin sum ||p_trg - p_src - alpha (s_trg - s_src) p_hat||^2,
    closed form: sum(ds * dp.p_hat) / (sum(ds^2) * ||p_hat||^2).
    """
    if len(pairs) == 0:
        raise ValueError("need at least one pair")
    num = 0.0
    den = 0.0
    hh = float(direction.p_hat @ direction.p_hat)
    for p_src, s_src, p_trg, s_trg in pairs:
        ds = float(s_trg) - float(s_src)
        dp = np.asarray(p_trg, dtype=np.float64) - np.asarray(p_src, dtype=np.float64)
        num += ds * float(dp @ direction.p_hat)
        den += ds * ds * hh
    if den == 0.0:
        raise ValueError("all score deltas are zero")
    return replace(direction, scale_alpha=num / den)


def fit_baseline(
    train: PairedDataset,
    use_scores: bool = True,
    refit: bool = True,
) -> GlobalDirection:
    """Direction from a paired training set, in the evaluation's conventions.

    Both pair members enter P; ``a`` holds their signed scores (or just the
    score signs when ``use_scores`` is False).  With ``refit``, the gain is
    refit on the training pairs under the dataset's fixed source/target coins.
    """
    P = np.concatenate([train.p_pos, train.p_neg]).T
    scores = np.concatenate([train.s_pos, train.s_neg])
    a = scores if use_scores else np.sign(scores)
    fingerprint = f"seed={train.seed},n={len(train)}"
    direction = fit_direction(P, a, attribute=train.attribute, fingerprint=fingerprint)
    if refit:
        swapped = eval_swap_flags(train.seed, train.ids)
        p_src = np.where(swapped[:, None], train.p_neg, train.p_pos)
        s_src = np.where(swapped, train.s_neg, train.s_pos)
        p_trg = np.where(swapped[:, None], train.p_pos, train.p_neg)
        s_trg = np.where(swapped, train.s_pos, train.s_neg)
        direction = refit_scale(
            direction, list(zip(p_src, s_src, p_trg, s_trg))
        )
    return direction
