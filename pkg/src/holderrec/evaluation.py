"""Ranking metrics and the temporal evaluation protocol.

A recommender trained at quarter T is scored against the holders actually
invested at T+1: hit rate within the top-K recommendations per fund, with
an optional restriction to newly added holders (those absent at T), which
removes look-ahead credit for re-recommending existing investors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import quarter_key


def hits_at_k(recommended, truth, k: int):
    """|top-k ∩ truth| / min(k, |truth|); None when the truth set is empty
    (such funds are skipped upstream rather than scored as zero)."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    truth = set(truth)
    if not truth:
        return None
    top = list(recommended)[:k]
    return len(set(top) & truth) / min(k, len(truth))


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney estimate: P(pos > neg) with ties counted as half."""
    pos = np.asarray(pos_scores, dtype=np.float64).reshape(-1)
    neg = np.asarray(neg_scores, dtype=np.float64).reshape(-1)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc needs at least one positive and one negative score")
    both = np.concatenate([pos, neg])
    # average ranks over tie groups
    uniq, inverse, counts = np.unique(both, return_inverse=True, return_counts=True)
    upper = np.cumsum(counts)
    avg_rank = upper - (counts - 1) / 2.0
    ranks = avg_rank[inverse]
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


@dataclass(frozen=True)
class GroundTruth:
    """Per-fund sets of holder indices invested during one quarter."""

    quarter: str
    holders_by_fund: dict  # fund index -> frozenset of holder indices

    def funds(self):
        return sorted(self.holders_by_fund)


def newly_added_split(truth_t: GroundTruth, truth_t1: GroundTruth) -> GroundTruth:
    """Restrict T+1 truth to holders absent from the same fund at T."""
    out = {}
    for fund, holders in truth_t1.holders_by_fund.items():
        prev = truth_t.holders_by_fund.get(fund, frozenset())
        out[fund] = frozenset(holders - prev)
    return GroundTruth(quarter=truth_t1.quarter, holders_by_fund=out)


@dataclass
class EvalReport:
    variant: str                 # "all_holders" or "newly_added"
    ks: tuple
    per_fund: dict               # fund index -> {k: hit rate}
    mean_hits: dict              # k -> mean over evaluated funds
    auc: float | None
    funds_evaluated: int
    funds_skipped: int
    recommender: str = "model"

    def to_json_dict(self) -> dict:
        return {
            "recommender": self.recommender,
            "variant": self.variant,
            "ks": list(self.ks),
            "mean_hits": {str(k): self.mean_hits[k] for k in self.ks},
            "auc": self.auc,
            "funds_evaluated": self.funds_evaluated,
            "funds_skipped": self.funds_skipped,
            "per_fund": {str(f): {str(k): v for k, v in hits.items()}
                         for f, hits in sorted(self.per_fund.items())},
        }

    def to_text(self) -> str:
        lines = [
            f"recommender={self.recommender}",
            f"variant={self.variant}",
            f"funds_evaluated={self.funds_evaluated}",
            f"funds_skipped={self.funds_skipped}",
            f"auc={'n/a' if self.auc is None else format(self.auc, '.6f')}",
        ]
        for k in self.ks:
            lines.append(f"mean_hits@{k}={self.mean_hits[k]:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)


def evaluate(recommender, truth: GroundTruth, ks=(50, 100, 200),
             variant: str = "all_holders", prior_truth: GroundTruth = None) -> EvalReport:
    """Score a recommender against next-quarter ground truth.

    ``recommender`` exposes ``train_quarter``, ``rank(fund, k,
    exclude_existing)`` returning holder indices best first, and optionally
    ``auc_value``.  The newly-added variant needs the prior quarter's truth
    and ranks with existing holders excluded.
    """
    if variant not in ("all_holders", "newly_added"):
        raise ValueError(f"unknown variant '{variant}'")
    trained_at = getattr(recommender, "train_quarter", None)
    if trained_at is None:
        raise ValueError("recommender does not declare its training quarter")
    if quarter_key(trained_at) >= quarter_key(truth.quarter):
        raise ValueError(
            f"temporal leak: recommender fitted on {trained_at} cannot be "
            f"evaluated against {truth.quarter}")
    if variant == "newly_added":
        if prior_truth is None:
            raise ValueError("newly_added evaluation needs the prior quarter's truth")
        truth_sets = newly_added_split(prior_truth, truth).holders_by_fund
        exclude = True
    else:
        truth_sets = truth.holders_by_fund
        exclude = False

    ks = tuple(sorted(int(k) for k in ks))
    max_k = ks[-1]
    per_fund = {}
    skipped = 0
    for fund in sorted(truth_sets):
        holders = truth_sets[fund]
        if not holders:
            skipped += 1
            continue
        ranked = recommender.rank(fund, max_k, exclude)
        per_fund[fund] = {k: hits_at_k(ranked, holders, k) for k in ks}
    mean_hits = {}
    for k in ks:
        vals = [per_fund[f][k] for f in per_fund]
        mean_hits[k] = float(np.mean(vals)) if vals else float("nan")
    return EvalReport(
        variant=variant,
        ks=ks,
        per_fund=per_fund,
        mean_hits=mean_hits,
        auc=getattr(recommender, "auc_value", None),
        funds_evaluated=len(per_fund),
        funds_skipped=skipped,
    )
