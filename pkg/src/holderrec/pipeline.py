"""End-to-end plumbing: snapshot -> features -> model, and the query-time
universe used by recommendation and temporal evaluation.

The query universe spans the training quarter's holders plus any holders
that only appear in the next quarter.  Fresh holders are featurized from
their own positions with the frozen schema and scaler and enter the query
graph without edges, so they are embedded purely from their attribute
profile (the inductive path); the graph edges are always the training
quarter's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .baseline import SegmentQuota, baseline_recommend, diversity_constrain
from .evaluation import GroundTruth
from .features import (AumSegmentation, FeatureSchema, QuarterSnapshot,
                       build_schema, featurize, min_max_scale, segment_holders)
from .graph import BipartiteGraph, build_graph
from .predictor import TrainConfig, TrainedModel, train


def graph_from_snapshot(snapshot: QuarterSnapshot) -> BipartiteGraph:
    return build_graph(snapshot.num_holders, snapshot.num_funds, snapshot.edges())


def fit_quarter(snapshot: QuarterSnapshot, config: TrainConfig) -> TrainedModel:
    """Schema, scaling, graph and model, all fitted on one quarter."""
    schema = build_schema([snapshot])
    holder_fm, fund_fm = featurize(snapshot, schema)
    holder_scaled, holder_scaler = min_max_scale(holder_fm)
    fund_scaled, fund_scaler = min_max_scale(fund_fm)
    graph = graph_from_snapshot(snapshot)
    return train(graph, holder_scaled.values, fund_scaled.values, config,
                 schema=schema,
                 scalers={"holder": holder_scaler, "fund": fund_scaler},
                 train_quarter=snapshot.quarter)


@dataclass
class QueryData:
    """Everything needed to rank holders for funds at query time."""

    graph: BipartiteGraph
    holder_feats: np.ndarray
    fund_feats: np.ndarray
    holder_ids: tuple
    fund_ids: tuple
    holder_pos: dict          # holder id -> query index
    fund_pos: dict
    train_quarter: str
    fresh_holders: tuple = ()  # query indices of holders absent at T


def build_query_from(schema: FeatureSchema, scalers: dict, train_quarter: str,
                     snapshot_t: QuarterSnapshot,
                     snapshot_t1: QuarterSnapshot = None) -> QueryData:
    """Assemble the query universe from the training quarter, optionally
    extended with next-quarter-only holders on the inductive path."""
    holder_fm, fund_fm = featurize(snapshot_t, schema)
    holder_feats = scalers["holder"].transform(holder_fm.values)
    fund_feats = scalers["fund"].transform(fund_fm.values)
    holder_ids = list(snapshot_t.holder_ids)
    fresh = []

    if snapshot_t1 is not None:
        fresh_ids = [hid for hid in snapshot_t1.holder_ids
                     if hid not in snapshot_t.holder_index]
        if fresh_ids:
            # attribute values first observed after training have no learned
            # column; the frozen schema simply projects them away
            t1_holder_fm, _ = featurize(snapshot_t1, schema, on_unknown="ignore")
            t1_scaled = scalers["holder"].transform(t1_holder_fm.values)
            rows = [t1_scaled[snapshot_t1.holder_index[hid]] for hid in fresh_ids]
            holder_feats = np.vstack([holder_feats, np.array(rows)])
            fresh = list(range(len(holder_ids), len(holder_ids) + len(fresh_ids)))
            holder_ids += fresh_ids

    graph = build_graph(len(holder_ids), snapshot_t.num_funds, snapshot_t.edges())
    return QueryData(
        graph=graph,
        holder_feats=holder_feats,
        fund_feats=fund_feats,
        holder_ids=tuple(holder_ids),
        fund_ids=tuple(snapshot_t.fund_ids),
        holder_pos={hid: i for i, hid in enumerate(holder_ids)},
        fund_pos=dict(snapshot_t.fund_index),
        train_quarter=train_quarter,
        fresh_holders=tuple(fresh),
    )


def query_for_model(model: TrainedModel, snapshot_t: QuarterSnapshot,
                    snapshot_t1: QuarterSnapshot = None) -> QueryData:
    if model.schema is None or not model.scalers:
        raise ValueError("model carries no fitted schema/scaler; fit it via fit_quarter")
    return build_query_from(model.schema, model.scalers,
                            model.train_quarter or snapshot_t.quarter,
                            snapshot_t, snapshot_t1)


def ground_truth(snapshot: QuarterSnapshot, query: QueryData) -> GroundTruth:
    """Per-fund holder sets of ``snapshot`` mapped into the query index
    space.  Funds unknown to the query (no training-quarter presence) are
    omitted; unknown holders indicate a wrongly built query and raise."""
    sets: dict = {}
    for p in snapshot.positions:
        fund = query.fund_pos.get(p.fund_id)
        if fund is None:
            continue
        holder = query.holder_pos.get(p.holder_id)
        if holder is None:
            raise ValueError(
                f"holder '{p.holder_id}' is missing from the query universe; "
                "build the query with the truth quarter's snapshot")
        sets.setdefault(fund, set()).add(holder)
    return GroundTruth(quarter=snapshot.quarter,
                       holders_by_fund={f: frozenset(s) for f, s in sets.items()})


def extend_segmentation(segmentation: AumSegmentation, query: QueryData,
                        snapshot_t1: QuarterSnapshot = None) -> AumSegmentation:
    """Cover fresh query holders by binning their own AUM into the
    training-quarter segment boundaries."""
    if not query.fresh_holders:
        return segmentation
    assignment = np.concatenate(
        [segmentation.assignment, np.zeros(len(query.fresh_holders), dtype=np.intp)])
    aum_t1 = snapshot_t1.holder_aum() if snapshot_t1 is not None else None
    for qidx in query.fresh_holders:
        hid = query.holder_ids[qidx]
        aum = 0.0
        if aum_t1 is not None and hid in snapshot_t1.holder_index:
            aum = float(aum_t1[snapshot_t1.holder_index[hid]])
        assignment[qidx] = segmentation.segment_of_aum(aum)
    return AumSegmentation(num_segments=segmentation.num_segments,
                           assignment=assignment,
                           boundaries=segmentation.boundaries)


class ModelRecommender:
    """Adapter exposing a trained model to the evaluation protocol.

    Node embeddings are computed once per query universe and reused
    across funds; the per-fund scoring matches recommend_holders exactly.
    """

    def __init__(self, model: TrainedModel, query: QueryData):
        self.model = model
        self.query = query
        self.train_quarter = query.train_quarter
        self.auc_value = model.test_auc
        self._emb = None
        self._orders: dict = {}

    def _embeddings(self):
        if self._emb is None:
            from . import autodiff as ad
            from .sage import encode
            with ad.no_grad():
                self._emb = encode(self.query.graph, self.query.holder_feats,
                                   self.query.fund_feats, self.model.sage,
                                   perm_seed=self.model.config.seed)
        return self._emb

    def _order(self, fund: int) -> np.ndarray:
        cached = self._orders.get(fund)
        if cached is None:
            from . import autodiff as ad
            from .predictor import score_edges
            emb = self._embeddings()
            n = self.query.graph.num_holders
            with ad.no_grad():
                fv = ad.take_rows(emb.fund_emb, [fund] * n)
                logits = ad.value(score_edges(self.model.mlp, emb.holder_emb, fv))
            probs = logits.reshape(-1)  # sigmoid is monotone; logits rank identically
            cached = np.lexsort((np.arange(n), -probs))
            self._orders[fund] = cached
        return cached

    def rank(self, fund: int, k: int, exclude_existing: bool) -> list:
        order = self._order(fund)
        existing = set(self.query.graph.fund_adj[fund]) if exclude_existing else ()
        out = []
        for idx in order:
            if idx in existing:
                continue
            out.append(int(idx))
            if len(out) == k:
                break
        return out


class BaselineRecommender:
    """Cosine content baseline over the same query universe, optionally
    constrained to training-population AUM segment proportions."""

    def __init__(self, query: QueryData, segmentation: AumSegmentation = None,
                 diverse: bool = False, train_segmentation: AumSegmentation = None):
        if diverse and segmentation is None:
            raise ValueError("diverse ranking needs an AUM segmentation")
        self.query = query
        self.segmentation = segmentation
        self.train_segmentation = train_segmentation or segmentation
        self.diverse = diverse
        self.train_quarter = query.train_quarter
        self.auc_value = None

    def rank(self, fund: int, k: int, exclude_existing: bool) -> list:
        n = self.query.graph.num_holders
        exclude = self.query.graph.fund_adj[fund] if exclude_existing else None
        full = baseline_recommend(self.query.fund_feats[fund],
                                  self.query.holder_feats, n, exclude=exclude)
        if self.diverse:
            quota = SegmentQuota.from_segmentation(self.train_segmentation, k)
            full = diversity_constrain(full, self.segmentation, k, quota=quota)
        return [idx for idx, _ in full[:k]]


def baseline_for_query(query: QueryData, snapshot_t: QuarterSnapshot,
                       snapshot_t1: QuarterSnapshot = None, diverse: bool = True,
                       num_segments: int = 4) -> BaselineRecommender:
    if not diverse:
        return BaselineRecommender(query, diverse=False)
    train_seg = segment_holders(snapshot_t, num_segments)
    full_seg = extend_segmentation(train_seg, query, snapshot_t1)
    return BaselineRecommender(query, segmentation=full_seg, diverse=True,
                               train_segmentation=train_seg)
