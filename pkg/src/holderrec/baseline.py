"""Cosine content-similarity baseline with an AUM-diversity variant.

Ranks holders by the cosine between their feature profile and the fund's
feature vector in the shared schema space.  The diversity variant fills
AUM-segment quotas, derived from the training population proportions by
largest-remainder rounding, before re-sorting by similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import AumSegmentation


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|), zero when either vector has zero norm."""
    uv = np.asarray(u, dtype=np.float64).reshape(-1)
    vv = np.asarray(v, dtype=np.float64).reshape(-1)
    if uv.shape != vv.shape:
        raise ValueError(f"cosine_similarity: dims {uv.shape[0]} vs {vv.shape[0]}")
    nu, nv = np.linalg.norm(uv), np.linalg.norm(vv)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(uv @ vv / (nu * nv))


def _similarities(fund_vec: np.ndarray, holder_matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(holder_matrix, axis=1)
    fnorm = np.linalg.norm(fund_vec)
    if fnorm == 0.0:
        return np.zeros(holder_matrix.shape[0])
    sims = holder_matrix @ fund_vec / fnorm
    return np.where(norms > 0, sims / np.where(norms > 0, norms, 1.0), 0.0)


def baseline_recommend(fund_vec, holder_matrix, k: int, exclude=None) -> list:
    """Top-k (holder index, similarity) pairs, similarity descending with
    ties broken by holder index ascending."""
    fund_vec = np.asarray(fund_vec, dtype=np.float64).reshape(-1)
    holder_matrix = np.asarray(holder_matrix, dtype=np.float64)
    if holder_matrix.shape[1] != fund_vec.shape[0]:
        raise ValueError(
            f"baseline_recommend: holder width {holder_matrix.shape[1]} vs fund dim {fund_vec.shape[0]}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    sims = _similarities(fund_vec, holder_matrix)
    excluded = set(exclude) if exclude else ()
    order = np.lexsort((np.arange(len(sims)), -sims))
    out = []
    for idx in order:
        if idx in excluded:
            continue
        out.append((int(idx), float(sims[idx])))
        if len(out) == k:
            break
    return out


@dataclass(frozen=True)
class SegmentQuota:
    """Per-segment target proportions and their integer counts for one k."""

    proportions: tuple
    counts: tuple

    @classmethod
    def from_proportions(cls, proportions, k: int) -> "SegmentQuota":
        props = np.asarray(proportions, dtype=np.float64)
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        if props.min() < 0 or not np.isclose(props.sum(), 1.0):
            raise ValueError("segment proportions must be non-negative and sum to 1")
        exact = props * k
        counts = np.floor(exact).astype(int)
        remainder = k - counts.sum()
        # largest fractional parts get the leftover slots, low index first on ties
        order = np.lexsort((np.arange(len(props)), -(exact - counts)))
        for i in order[:remainder]:
            counts[i] += 1
        return cls(proportions=tuple(props.tolist()), counts=tuple(int(c) for c in counts))

    @classmethod
    def from_segmentation(cls, segmentation: AumSegmentation, k: int) -> "SegmentQuota":
        return cls.from_proportions(segmentation.proportions, k)


def diversity_constrain(ranked, segmentation: AumSegmentation, k: int,
                        quota: SegmentQuota = None) -> list:
    """Filter a full ranking so segments appear in their population
    proportions; under-populated segments backfill from the global ranking.
    The result is re-sorted by similarity descending (ties by index)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if quota is None:
        quota = SegmentQuota.from_segmentation(segmentation, k)
    assignment = segmentation.assignment
    chosen = []
    chosen_set = set()
    remaining = list(quota.counts)
    for idx, score in ranked:
        seg = int(assignment[idx])
        if remaining[seg] > 0:
            chosen.append((idx, score))
            chosen_set.add(idx)
            remaining[seg] -= 1
    # quotas a segment could not fill fall back to the best unused holders
    shortfall = k - len(chosen)
    if shortfall > 0:
        for idx, score in ranked:
            if idx in chosen_set:
                continue
            chosen.append((idx, score))
            shortfall -= 1
            if shortfall == 0:
                break
    chosen.sort(key=lambda pair: (-pair[1], pair[0]))
    return chosen[:k]
