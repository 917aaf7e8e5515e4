"""Trajectory clustering: DTW distance + k-medoids (PAM) + k selection.

Provinces are partitioned by the shape of their fitted bias trajectories.
The elastic distance is classic dynamic time warping with absolute local
cost and the symmetric match/insert/delete step pattern; medoids are actual
provinces, which keeps cluster representatives interpretable. The number of
clusters is chosen by mean silhouette over a candidate range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .indices import ProvinceIndex


@dataclass(frozen=True)
class TrajectorySet:
    """One fitted time series per province."""

    provinces: ProvinceIndex
    series: np.ndarray  # (N_s, N_t)

    def __post_init__(self):
        series = np.asarray(self.series, dtype=float)
        object.__setattr__(self, "series", series)
        if series.ndim != 2 or series.shape[0] != len(self.provinces):
            raise ValidationError("need one series row per province")
        if not np.all(np.isfinite(series)):
            raise ValidationError("trajectories contain non-finite values")

    def zscored(self) -> "TrajectorySet":
        mu = self.series.mean(axis=1, keepdims=True)
        sd = self.series.std(axis=1, keepdims=True)
        sd[sd == 0] = 1.0
        return TrajectorySet(self.provinces, (self.series - mu) / sd)


@dataclass(frozen=True)
class Clustering:
    k: int
    assignment: np.ndarray          # province position -> cluster id (0..k-1)
    medoids: tuple[int, ...]        # province positions of the representatives
    silhouette: np.ndarray          # per-province score
    mean_silhouette: float
    total_cost: float

    def medoid_ids(self, provinces: ProvinceIndex) -> list[str]:
        return [provinces.ids[m] for m in self.medoids]


def dtw(a, b, band: int | None = None) -> float:
    """Dynamic time warping distance with |x - y| local cost.

    Steps allowed from each cell: match, insert, delete (all weight 1).
    Both endpoints are anchored. ``band`` restricts |i - j| to a
    Sakoe-Chiba window.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise ValidationError("cannot compute DTW of an empty series")
    if band is not None and band < abs(n - m):
        raise ValidationError("band too narrow for the length difference")
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        j_lo, j_hi = 1, m
        if band is not None:
            j_lo, j_hi = max(1, i - band), min(m, i + band)
        for j in range(j_lo, j_hi + 1):
            cost = abs(a[i - 1] - b[j - 1])
            D[i, j] = cost + min(D[i - 1, j - 1], D[i - 1, j], D[i, j - 1])
    return float(D[n, m])


def dtw_distance_matrix(set_: TrajectorySet, band: int | None = None) -> np.ndarray:
    n = set_.series.shape[0]
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = dtw(set_.series[i], set_.series[j], band)
    return D


def _pam(D: np.ndarray, k: int) -> tuple[list[int], float]:
    """PAM BUILD + SWAP on a precomputed distance matrix (deterministic)."""
    n = D.shape[0]
    # BUILD: start from the 1-medoid optimum, then greedy cost reductions
    medoids = [int(np.argmin(D.sum(axis=1)))]
    nearest = D[medoids[0]].copy()
    while len(medoids) < k:
        gains = np.maximum(nearest[None, :] - D, 0.0).sum(axis=1)
        gains[medoids] = -np.inf
        new = int(np.argmax(gains))
        medoids.append(new)
        nearest = np.minimum(nearest, D[new])
    # SWAP: repeatedly apply the best improving (medoid, non-medoid) exchange
    def total_cost(meds):
        return float(D[meds].min(axis=0).sum())

    current = total_cost(medoids)
    improved = True
    while improved:
        improved = False
        best = (0.0, None, None)
        med_set = set(medoids)
        for mi, med in enumerate(medoids):
            others = [m for m in medoids if m != med]
            for cand in range(n):
                if cand in med_set:
                    continue
                cost = total_cost(others + [cand])
                delta = current - cost
                if delta > best[0] + 1e-12:
                    best = (delta, mi, cand)
        if best[1] is not None:
            medoids[best[1]] = best[2]
            current = total_cost(medoids)
            improved = True
    return sorted(medoids), current


def silhouette_scores(D: np.ndarray, assignment: np.ndarray) -> np.ndarray:
    """Per-point silhouette on a distance matrix; singletons score 0."""
    n = D.shape[0]
    labels = np.unique(assignment)
    scores = np.zeros(n)
    for i in range(n):
        own = assignment[i]
        members = np.nonzero(assignment == own)[0]
        if members.size == 1:
            scores[i] = 0.0
            continue
        a = D[i, members[members != i]].mean()
        b = min(
            D[i, assignment == other].mean() for other in labels if other != own
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return scores


def kmedoids_fit(set_: TrajectorySet, k: int, seed=None, band: int | None = None,
                 distances: np.ndarray | None = None) -> Clustering:
    """Partition provinces around ``k`` medoids under DTW distance.

    The PAM build+swap search is deterministic, so the result does not
    depend on ``seed``; the argument is accepted for interface stability.
    """
    n = set_.series.shape[0]
    if not (2 <= k < n):
        raise ValidationError(f"k must lie in [2, {n - 1}], got {k}")
    D = dtw_distance_matrix(set_, band) if distances is None else distances
    medoids, cost = _pam(D, k)
    assignment = np.argmin(D[medoids], axis=0)
    # medoids must belong to their own cluster even under distance ties
    for ci, m in enumerate(medoids):
        assignment[m] = ci
    sil = silhouette_scores(D, assignment)
    return Clustering(
        k=k,
        assignment=assignment,
        medoids=tuple(medoids),
        silhouette=sil,
        mean_silhouette=float(sil.mean()),
        total_cost=cost,
    )


@dataclass(frozen=True)
class KSelection:
    k: int | None
    scores: dict            # k -> mean silhouette
    best: Clustering | None
    degenerate: bool = False


def select_k(
    set_: TrajectorySet, k_range=range(2, 9), seed=None, band: int | None = None
) -> KSelection:
    """Fit every candidate k and keep the best mean silhouette (ties: smaller k)."""
    n = set_.series.shape[0]
    ks = [k for k in k_range if 2 <= k < n]
    if not ks:
        raise ValidationError("k_range contains no feasible cluster counts")
    D = dtw_distance_matrix(set_, band)
    if D.max() == 0.0:
        return KSelection(k=None, scores={}, best=None, degenerate=True)
    scores, fits = {}, {}
    for k in ks:
        fit = kmedoids_fit(set_, k, seed=seed, distances=D)
        scores[k] = fit.mean_silhouette
        fits[k] = fit
    best_k = max(sorted(scores), key=lambda k: scores[k])
    for k in sorted(scores):  # ties resolve to the smallest k
        if scores[k] >= scores[best_k] - 1e-12:
            best_k = k
            break
    return KSelection(k=best_k, scores=scores, best=fits[best_k])
