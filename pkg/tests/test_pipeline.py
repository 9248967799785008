"""Quarter fitting, query-universe assembly, and the recommender adapters."""

import io

import numpy as np
import pytest

import holderrec as hr
from holderrec.synthetic import SyntheticConfig, generate_synthetic, holdings_csv_text


@pytest.fixture(scope="module")
def two_quarters():
    config = SyntheticConfig(num_holders=40, num_funds=10, seed=4,
                             new_holder_fraction=0.15)
    data = generate_synthetic(config)
    snap_t = hr.parse_holdings(io.StringIO(holdings_csv_text(data.positions_t)))[config.quarter]
    snap_t1 = hr.parse_holdings(io.StringIO(holdings_csv_text(data.positions_t1)))[config.next_quarter]
    return config, data, snap_t, snap_t1


@pytest.fixture(scope="module")
def fitted(two_quarters):
    _, _, snap_t, _ = two_quarters
    config = hr.TrainConfig(epochs=5, embedding_dim=8, hidden_dim=8, mlp_hidden=6, seed=2)
    return hr.fit_quarter(snap_t, config)


class TestFitQuarter:
    def test_model_carries_fitted_artifacts(self, fitted, two_quarters):
        _, _, snap_t, _ = two_quarters
        assert fitted.train_quarter == snap_t.quarter
        assert fitted.schema is not None
        assert set(fitted.scalers) == {"holder", "fund"}
        assert len(fitted.training_loss_curve) == 5

    def test_features_are_scaled(self, fitted, two_quarters):
        _, _, snap_t, _ = two_quarters
        query = hr.query_for_model(fitted, snap_t)
        assert query.holder_feats.min() >= 0.0
        assert query.holder_feats.max() <= 1.0


class TestBuildQuery:
    def test_training_quarter_only(self, fitted, two_quarters):
        _, _, snap_t, _ = two_quarters
        query = hr.query_for_model(fitted, snap_t)
        assert query.graph.num_holders == snap_t.num_holders
        assert query.fresh_holders == ()

    def test_union_universe_adds_fresh_holders_without_edges(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        fresh_ids = [hid for hid in snap_t1.holder_index if hid not in snap_t.holder_index]
        assert len(query.fresh_holders) == len(fresh_ids)
        assert query.graph.num_holders == snap_t.num_holders + len(fresh_ids)
        assert query.graph.num_edges == len(snap_t.positions)
        for qidx in query.fresh_holders:
            assert query.graph.holder_adj[qidx] == ()

    def test_fresh_holder_features_come_from_their_own_positions(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        t1_holder_fm, _ = hr.featurize(snap_t1, fitted.schema, on_unknown="ignore")
        scaled = fitted.scalers["holder"].transform(t1_holder_fm.values)
        for qidx in query.fresh_holders:
            hid = query.holder_ids[qidx]
            np.testing.assert_array_equal(query.holder_feats[qidx],
                                          scaled[snap_t1.holder_index[hid]])

    def test_t_holder_indices_preserved(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        for hid, idx in snap_t.holder_index.items():
            assert query.holder_pos[hid] == idx


class TestGroundTruth:
    def test_maps_ids_into_query_space(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        gt = hr.ground_truth(snap_t1, query)
        for fund, holders in gt.holders_by_fund.items():
            for h in holders:
                assert 0 <= h < query.graph.num_holders

    def test_unknown_holder_raises_without_union(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t)  # no T+1 extension
        fresh_exists = any(h not in snap_t.holder_index for h in snap_t1.holder_index)
        if fresh_exists:
            with pytest.raises(ValueError, match="missing from the query universe"):
                hr.ground_truth(snap_t1, query)


class TestRecommenders:
    def test_model_recommender_matches_recommend_holders(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        rec = hr.ModelRecommender(fitted, query)
        direct = hr.recommend_holders(fitted, query.graph, query.holder_feats,
                                      query.fund_feats, 3, 8)
        assert rec.rank(3, 8, exclude_existing=False) == [i for i, _ in direct]

    def test_exclusion_drops_current_investors(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        rec = hr.ModelRecommender(fitted, query)
        existing = set(query.graph.fund_adj[0])
        ranked = rec.rank(0, query.graph.num_holders, exclude_existing=True)
        assert not set(ranked) & existing

    def test_baseline_recommender_diverse_returns_k(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        rec = hr.baseline_for_query(query, snap_t, snap_t1, diverse=True,
                                    num_segments=4)
        assert len(rec.rank(0, 12, exclude_existing=False)) == 12

    def test_end_to_end_evaluation_runs(self, fitted, two_quarters):
        _, _, snap_t, snap_t1 = two_quarters
        query = hr.query_for_model(fitted, snap_t, snap_t1)
        gt_t = hr.ground_truth(snap_t, query)
        gt_t1 = hr.ground_truth(snap_t1, query)
        rec = hr.ModelRecommender(fitted, query)
        all_report = hr.evaluate(rec, gt_t1, ks=(5, 10), variant="all_holders")
        new_report = hr.evaluate(rec, gt_t1, ks=(5, 10), variant="newly_added",
                                 prior_truth=gt_t)
        assert 0.0 <= all_report.mean_hits[5] <= 1.0
        assert all_report.auc == fitted.test_auc
        assert new_report.variant == "newly_added"
