"""Ranking loss kernels: positive-class Smooth-AP and the triplet hinge.

All kernels return ``(loss, grad)`` with the gradient taken analytically,
so they can be checked against :func:`grad_check`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

DEFAULT_TAU = 0.01
DEFAULT_MARGIN = 0.2


class TiedScoresError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class ScoreBatch:
    """Similarity of each batch item to the query; label 1 marks the similar set."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64).ravel()
        labels = np.asarray(self.labels).ravel()
        if scores.shape != labels.shape:
            raise ValueError(f"{scores.size} scores but {labels.size} labels")
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        labels = labels.astype(bool)
        if not labels.any():
            raise ValueError("batch needs at least one positive")
        if not np.all(np.isfinite(scores)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.scores.size

    def with_scores(self, scores) -> "ScoreBatch":
        return ScoreBatch(scores, self.labels.astype(int))


@dataclass(frozen=True)
class SmoothApParams:
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass(frozen=True)
class TripletBatch:
    d_ap: float
    d_an: float
    margin: float = DEFAULT_MARGIN

    def __post_init__(self):
        for name in ("d_ap", "d_an", "margin"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def exact_ap(batch: ScoreBatch) -> float:
    """Average precision of the positives under a descending-score ranking."""
    order = np.argsort(-batch.scores, kind="stable")
    ranked = batch.scores[order]
    if np.any(ranked[1:] == ranked[:-1]):
        raise TiedScoresError("tied scores make the ranking ambiguous")
    hits = batch.labels[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, ranks.size + 1) / ranks
    return float(precision.mean())


def smooth_ap_loss(
    batch: ScoreBatch, params: SmoothApParams = SmoothApParams()
) -> tuple[float, np.ndarray]:
    """``1 - AP~`` over the similar class only, and its gradient w.r.t. the scores.

    For each positive ``i`` the hard rank indicator ``[s_j > s_i]`` is
    replaced by ``sigmoid((s_j - s_i) / tau)``::

        AP~ = mean_i (1 + sum_{j in pos, j != i} G_ij) / (1 + sum_{j != i} G_ij)

    Negatives enter only through the denominators, so their mutual order
    never affects the loss.
    """
    s = batch.scores
    pos = batch.labels
    tau = params.tau
    sp = s[pos]
    n_pos = sp.size

    diff = (s[None, :] - sp[:, None]) / tau  # (P, B): row i is positive i
    G = expit(diff)
    dG = G * (1.0 - G) / tau
    self_cols = np.flatnonzero(pos)
    rows = np.arange(n_pos)
    G[rows, self_cols] = 0.0
    dG[rows, self_cols] = 0.0

    num = 1.0 + G[:, pos].sum(axis=1)
    den = 1.0 + G.sum(axis=1)
    ap = float(np.mean(num / den))

    # d(num_i/den_i)/ds_k for k != i; the k == i entry is minus the row sum
    A = dG * (pos[None, :] * den[:, None] - num[:, None]) / (den**2)[:, None]
    d_ap = A.sum(axis=0)
    d_ap[self_cols] -= A.sum(axis=1)
    grad = -d_ap / n_pos
    loss = 1.0 - ap

    if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFiniteError("non-finite value in smooth-AP computation")
    return loss, grad


def triplet_loss(t: TripletBatch) -> tuple[float, tuple[float, float]]:
    arg = t.d_ap - t.d_an + t.margin
    if arg > 0:
        return float(arg), (1.0, -1.0)
    return 0.0, (0.0, 0.0)


def batch_triplet_loss(
    distances, labels, margin: float = DEFAULT_MARGIN
) -> tuple[float, np.ndarray]:
    """Mean hinge over every (anchor, positive, negative) triplet with a similar anchor.

    ``distances`` is a symmetric ``(B, B)`` matrix. Anchors and positives are
    distinct members of the similar set; negatives are the dissimilar items.
    Returns the mean loss and its gradient w.r.t. ``distances``. A batch with
    no valid triplet has loss 0.
    """
    d = np.asarray(distances, dtype=np.float64)
    pos = np.asarray(labels).astype(bool)
    if d.shape != (pos.size, pos.size):
        raise ValueError("distance matrix shape does not match labels")
    P = np.flatnonzero(pos)
    N = np.flatnonzero(~pos)
    grad = np.zeros_like(d)
    if P.size < 2 or N.size == 0:
        return 0.0, grad
    d_ap = d[np.ix_(P, P)]  # (a, p)
    d_an = d[np.ix_(P, N)]  # (a, n)
    arg = d_ap[:, :, None] - d_an[:, None, :] + margin
    valid = ~np.eye(P.size, dtype=bool)[:, :, None] & np.ones_like(arg, dtype=bool)
    active = (arg > 0) & valid
    count = int(valid.sum())
    loss = float(np.where(active, arg, 0.0).sum() / count)
    grad[np.ix_(P, P)] += active.sum(axis=2) / count
    grad[np.ix_(P, N)] -= active.sum(axis=1) / count
    return loss, grad


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0,
    h: float = 1e-5,
) -> float:
    """Largest relative disagreement between ``f``'s gradient and central differences.

    ``f`` maps a vector to ``(value, grad)``. Per coordinate the error is
    ``|analytic - numeric| / max(1e-12, |analytic| + |numeric|)``.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    _, analytic = f(x0.copy())
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    if analytic.shape != x0.shape:
        raise ValueError("gradient shape does not match input")
    numeric = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        fp, _ = f(xp)
        fm, _ = f(xm)
        numeric[i] = (fp - fm) / (2 * h)
    if not (np.all(np.isfinite(numeric)) and np.all(np.isfinite(analytic))):
        raise NonFiniteError("non-finite function or gradient value")
    err = np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(err.max()) if err.size else 0.0
