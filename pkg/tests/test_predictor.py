"""Edge scoring, cross-entropy, training determinism, and recommendations."""

import math

import numpy as np
import pytest

import holderrec.autodiff as ad
from holderrec.graph import build_graph
from holderrec.optim import ParamStore
from holderrec.predictor import (MlpPredictor, TrainConfig, bce_loss,
                                 recommend_holders, score_edge, score_edges, train)


def mlp_with(w1, w2):
    store = ParamStore()
    mlp = MlpPredictor(W1=store.add("mlp.W1", w1), W2=store.add("mlp.W2", w2),
                       hidden_dim=np.shape(w2)[1], embedding_dim=np.shape(w1)[1] // 2)
    return mlp


class TestScoreEdge:
    def test_zero_weights_score_half(self):
        mlp = mlp_with(np.zeros((4, 6)), np.zeros((1, 4)))
        logit, prob = score_edge(mlp, np.zeros((1, 3)), np.zeros((1, 3)))
        assert logit == 0.0 and prob == 0.5

    def test_one_dimensional_hand_case(self):
        mlp = mlp_with([[1.0, 1.0]], [[2.0]])
        logit, prob = score_edge(mlp, [[1.0]], [[1.0]])
        assert logit == 4.0
        np.testing.assert_allclose(prob, 1.0 / (1.0 + math.exp(-4.0)))
        np.testing.assert_allclose(prob, 0.9820137900379085)

    def test_negated_output_weights_flip_probability(self):
        rng = np.random.default_rng(0)
        u, v = rng.random((1, 3)), rng.random((1, 3))
        w1 = rng.normal(size=(4, 6))
        _, p_pos = score_edge(mlp_with(w1, [[1.0, -2.0, 0.5, 3.0]]), u, v)
        _, p_neg = score_edge(mlp_with(w1, [[-1.0, 2.0, -0.5, -3.0]]), u, v)
        np.testing.assert_allclose(p_pos + p_neg, 1.0)

    def test_concat_order_is_holder_then_fund(self):
        mlp = mlp_with([[1.0, 0.0]], [[1.0]])
        logit, _ = score_edge(mlp, [[3.0]], [[5.0]])
        assert logit == 3.0

    def test_dimension_mismatch(self):
        mlp = mlp_with(np.zeros((4, 6)), np.zeros((1, 4)))
        with pytest.raises(ad.ShapeError):
            score_edges(mlp, np.zeros((1, 2)), np.zeros((1, 3)))


class TestBceLoss:
    def test_perfect_predictions_vanish(self):
        loss = ad.scalar(bce_loss(np.array([[1.0], [0.0]]), np.array([[1.0], [0.0]])))
        assert 0.0 <= loss <= 1e-11

    def test_uninformative_prediction_is_log_two(self):
        loss = ad.scalar(bce_loss(np.array([[0.5], [0.5]]), np.array([[1.0], [0.0]])))
        np.testing.assert_allclose(loss, math.log(2.0), rtol=1e-12)

    def test_confident_mistake(self):
        loss = ad.scalar(bce_loss(np.array([[0.9]]), np.array([[0.0]])))
        np.testing.assert_allclose(loss, -math.log(0.1), rtol=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(0)
        p = rng.random((20, 1))
        y = (rng.random((20, 1)) < 0.5).astype(float)
        assert ad.scalar(bce_loss(p, y)) >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(ad.ShapeError):
            bce_loss(np.zeros((2, 1)), np.zeros((3, 1)))


def toy_inputs(seed=0, m=12, n=6, dim=4):
    rng = np.random.default_rng(seed)
    mask = rng.random((m, n)) < 0.4
    graph = build_graph(m, n, list(zip(*np.nonzero(mask))))
    return graph, rng.random((m, dim)), rng.random((n, dim))


def toy_config(**kw):
    base = dict(epochs=5, embedding_dim=6, hidden_dim=6, mlp_hidden=4,
                seed=1, test_fraction=0.2)
    base.update(kw)
    return TrainConfig(**base)


class TestTrain:
    def test_zero_epochs_returns_initialized_model(self):
        graph, hf, ff = toy_inputs()
        model = train(graph, hf, ff, toy_config(epochs=0))
        assert model.training_loss_curve == ()
        assert np.isfinite(model.test_auc)

    def test_fixed_seed_reproduces_bitwise(self):
        graph, hf, ff = toy_inputs()
        a = train(graph, hf, ff, toy_config())
        b = train(graph, hf, ff, toy_config())
        assert a.training_loss_curve == b.training_loss_curve
        for name, p in a.store.items():
            assert p.data.tobytes() == b.store[name].data.tobytes()
        assert a.test_auc == b.test_auc

    def test_loss_curve_length_and_decrease(self):
        graph, hf, ff = toy_inputs()
        model = train(graph, hf, ff, toy_config(epochs=40))
        assert len(model.training_loss_curve) == 40
        assert model.training_loss_curve[-1] < model.training_loss_curve[0]

    def test_separate_mode_runs_both_phases(self):
        graph, hf, ff = toy_inputs()
        model = train(graph, hf, ff, toy_config(training_mode="separate", epochs=4))
        assert len(model.training_loss_curve) == 8

    def test_empty_graph_rejected(self):
        graph = build_graph(3, 3, [])
        with pytest.raises(ValueError, match="no edges"):
            train(graph, np.zeros((3, 2)), np.zeros((3, 2)), toy_config())


class TestRecommendHolders:
    def trained(self):
        graph, hf, ff = toy_inputs(seed=3)
        return train(graph, hf, ff, toy_config(epochs=3)), graph, hf, ff

    def test_single_holder_ranks_first(self):
        graph = build_graph(1, 3, [(0, 0), (0, 2)])
        rng = np.random.default_rng(0)
        hf, ff = rng.random((1, 3)), rng.random((3, 3))
        model = train(graph, hf, ff, toy_config(epochs=2, test_fraction=0.5))
        out = recommend_holders(model, graph, hf, ff, fund=1, k=5)
        assert [idx for idx, _ in out] == [0]

    def test_exclude_existing_can_empty_the_list(self):
        model, graph, hf, ff = self.trained()
        fund = max(range(graph.num_funds), key=lambda f: len(graph.fund_adj[f]))
        full = build_graph(graph.num_holders, graph.num_funds,
                           [(h, fund) for h in range(graph.num_holders)]
                           + list(graph.edge_list))
        out = recommend_holders(model, full, hf, ff, fund=fund, k=3,
                                exclude_existing=True)
        assert out == []

    def test_sorted_by_probability_then_index(self):
        model, graph, hf, ff = self.trained()
        out = recommend_holders(model, graph, hf, ff, fund=0, k=graph.num_holders)
        probs = [p for _, p in out]
        assert probs == sorted(probs, reverse=True)
        for (i1, p1), (i2, p2) in zip(out, out[1:]):
            if p1 == p2:
                assert i1 < i2

    def test_no_more_than_k(self):
        model, graph, hf, ff = self.trained()
        assert len(recommend_holders(model, graph, hf, ff, fund=0, k=4)) <= 4

    def test_out_of_range_fund(self):
        model, graph, hf, ff = self.trained()
        with pytest.raises(ValueError, match="fund index"):
            recommend_holders(model, graph, hf, ff, fund=99, k=3)


class TestJointGradient:
    def test_full_loss_gradient_matches_finite_differences(self):
        """Encoder and scorer parameters checked together through the loss."""
        from holderrec.gradcheck import (analytic_gradients, build_case,
                                         finite_difference_gradients,
                                         relative_errors)
        from holderrec.sage import AggregatorKind

        case = build_case(AggregatorKind.GCN, seed=0, num_holders=8, num_funds=4,
                          feature_dim=4, hidden_dim=5, embedding_dim=4, mlp_hidden=6)
        errs = relative_errors(analytic_gradients(case),
                               finite_difference_gradients(case))
        assert errs, "no parameters checked"
        assert max(errs.values()) < 1e-4
