"""Edge scoring and the joint training loop.

A two-matrix MLP turns a concatenated (holder, fund) embedding pair into
a scalar logit; a sigmoid bridges the logit to the probability fed into
binary cross-entropy.  Training updates the encoder and scorer weights
through a single backward pass per epoch, full batch, with negatives
resampled every epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import BipartiteGraph, build_graph, sample_negative_edges, split_edges
from .optim import AdamState, ParamStore, adam_step
from .sage import AggregatorKind, SageModel, create_sage, encode

PROB_CLAMP = 1e-12


@dataclass
class MlpPredictor:
    """Bias-free edge scorer: logit = W2 . relu(W1 . concat(u, v))."""

    W1: object  # (hidden_dim, 2 * embedding_dim)
    W2: object  # (1, hidden_dim)
    hidden_dim: int
    embedding_dim: int


def create_mlp(store: ParamStore, embedding_dim: int, hidden_dim: int, seeds) -> MlpPredictor:
    return MlpPredictor(
        W1=store.register("mlp.W1", hidden_dim, 2 * embedding_dim, next(seeds)),
        W2=store.register("mlp.W2", 1, hidden_dim, next(seeds)),
        hidden_dim=hidden_dim,
        embedding_dim=embedding_dim,
    )


def score_edges(mlp: MlpPredictor, holder_rows, fund_rows):
    """Logits for row-aligned (holder, fund) embedding pairs, shape (n, 1).

    Concatenation order is always (holder, fund).
    """
    pairs = ad.concat_cols(holder_rows, fund_rows)
    hidden = ad.relu(ad.matmul(pairs, ad.transpose(mlp.W1)))
    return ad.matmul(hidden, ad.transpose(mlp.W2))


def score_edge(mlp: MlpPredictor, holder_vec, fund_vec):
    """(logit, probability) for a single embedding pair."""
    logit = float(ad.value(score_edges(mlp, holder_vec, fund_vec))[0, 0])
    prob = float(ad._sigmoid_array(np.array([[logit]]))[0, 0])
    return logit, prob


def bce_loss(probabilities, labels):
    """Mean binary cross-entropy; probabilities are clamped to
    [1e-12, 1 - 1e-12] before the logs so saturated predictions stay finite.
    """
    y = np.asarray(ad.value(labels), dtype=np.float64)
    n = ad.value(probabilities).shape[0]
    if y.shape != ad.value(probabilities).shape:
        raise ad.ShapeError(
            f"bce_loss: probabilities {ad.value(probabilities).shape} vs labels {y.shape}")
    if n < 1:
        raise ValueError("bce_loss needs at least one prediction")
    p = ad.clamp(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)
    one_minus_p = ad.add(ad.mul(p, -1.0), 1.0)
    terms = ad.add(ad.mul(ad.log(p), y), ad.mul(ad.log(one_minus_p), 1.0 - y))
    return ad.mul(ad.sum_all(terms), -1.0 / n)


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    embedding_dim: int = 128
    layers: int = 2
    aggregator: AggregatorKind = AggregatorKind.GCN
    epochs: int = 200
    negative_ratio: float = 1.0
    seed: int = 0
    test_fraction: float = 0.1
    hidden_dim: int = None      # defaults to embedding_dim
    mlp_hidden: int = 64
    training_mode: str = "joint"  # "joint" or "separate"

    def __post_init__(self):
        if isinstance(self.aggregator, str):
            self.aggregator = AggregatorKind.from_name(self.aggregator)
        if self.hidden_dim is None:
            self.hidden_dim = self.embedding_dim

    def validate(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("embedding_dim", "layers", "negative_ratio", "mlp_hidden", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")
        if self.training_mode not in ("joint", "separate"):
            raise ValueError(f"unknown training_mode '{self.training_mode}'")


@dataclass
class TrainedModel:
    sage: SageModel
    mlp: MlpPredictor
    store: ParamStore
    config: TrainConfig
    training_loss_curve: tuple
    test_auc: float
    schema: object = None
    scalers: dict = field(default_factory=dict)
    train_quarter: str = None


def _epoch_batch(graph, train_pos, config, epoch):
    """Positive edges plus freshly corrupted negatives for one epoch."""
    negatives = sample_negative_edges(graph, config.negative_ratio,
                                      seed=config.seed ^ epoch)
    holders = [h for h, _ in train_pos] + [e.holder for e in negatives]
    funds = [f for _, f in train_pos] + [e.fund for e in negatives]
    labels = np.zeros((len(holders), 1))
    labels[:len(train_pos)] = 1.0
    return holders, funds, labels


def _forward_loss(emb, mlp, holders, funds, labels):
    hu = ad.take_rows(emb.holder_emb, holders)
    fv = ad.take_rows(emb.fund_emb, funds)
    probs = ad.sigmoid(score_edges(mlp, hu, fv))
    return bce_loss(probs, labels)


def _dot_loss(emb, holders, funds, labels):
    """Dot-product edge scorer used only by the separate-training mode."""
    hu = ad.take_rows(emb.holder_emb, holders)
    fv = ad.take_rows(emb.fund_emb, funds)
    probs = ad.sigmoid(ad.row_sum(ad.mul(hu, fv)))
    return bce_loss(probs, labels)


def _step(loss, store, adam):
    value = float(loss)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite training loss: {value}")
    store.zero_grads()
    loss.backward()
    adam_step(store, adam)
    return value


def _only(store: ParamStore, prefix: str) -> ParamStore:
    """A view-like store holding the subset of parameters under a prefix."""
    sub = ParamStore()
    for name, p in store.items():
        if name.startswith(prefix):
            sub._params[name] = p
    return sub


def train(graph: BipartiteGraph, holder_feats, fund_feats, config: TrainConfig,
          *, schema=None, scalers=None, train_quarter=None) -> TrainedModel:
    """Train the encoder and edge scorer; deterministic given config.seed.

    Test edges are held out before training and never enter message
    passing; the returned model carries the held-out AUC.
    """
    from .evaluation import auc  # local import to avoid a module cycle

    config.validate()
    if graph.num_edges == 0:
        raise ValueError("cannot train on a graph with no edges")
    hv, fv = ad.value(holder_feats), ad.value(fund_feats)

    split = split_edges(graph, config.test_fraction, config.seed)
    train_graph = build_graph(graph.num_holders, graph.num_funds, split.train_pos)

    seeds = iter(np.random.SeedSequence(config.seed).generate_state(64).tolist())
    store = ParamStore()
    sage = create_sage(store, hv.shape[1], config.hidden_dim, config.embedding_dim,
                       config.layers, config.aggregator, seeds)
    mlp = create_mlp(store, config.embedding_dim, config.mlp_hidden, seeds)

    curve = []
    if config.training_mode == "joint":
        adam = AdamState.for_params(store, config.learning_rate)
        for epoch in range(1, config.epochs + 1):
            holders, funds, labels = _epoch_batch(train_graph, split.train_pos, config, epoch)
            emb = encode(train_graph, hv, fv, sage, perm_seed=config.seed ^ epoch)
            loss = _forward_loss(emb, mlp, holders, funds, labels)
            curve.append(_step(loss, store, adam))
    else:
        # phase 1: encoder alone, scored by embedding dot products
        sage_store = _only(store, "sage.")
        adam = AdamState.for_params(sage_store, config.learning_rate)
        for epoch in range(1, config.epochs + 1):
            holders, funds, labels = _epoch_batch(train_graph, split.train_pos, config, epoch)
            emb = encode(train_graph, hv, fv, sage, perm_seed=config.seed ^ epoch)
            loss = _dot_loss(emb, holders, funds, labels)
            curve.append(_step(loss, sage_store, adam))
        # phase 2: freeze the encoder, train the scorer on fixed embeddings
        with ad.no_grad():
            frozen = encode(train_graph, hv, fv, sage, perm_seed=config.seed)
        mlp_store = _only(store, "mlp.")
        adam = AdamState.for_params(mlp_store, config.learning_rate)
        for epoch in range(1, config.epochs + 1):
            holders, funds, labels = _epoch_batch(train_graph, split.train_pos, config, epoch)
            loss = _forward_loss(frozen, mlp, holders, funds, labels)
            curve.append(_step(loss, mlp_store, adam))

    with ad.no_grad():
        emb = encode(train_graph, hv, fv, sage, perm_seed=config.seed)
        test_h = [h for h, _ in split.test_pos] + [h for h, _ in split.test_neg]
        test_f = [f for _, f in split.test_pos] + [f for _, f in split.test_neg]
        hu = ad.take_rows(emb.holder_emb, test_h)
        fu = ad.take_rows(emb.fund_emb, test_f)
        scores = ad._sigmoid_array(ad.value(score_edges(mlp, hu, fu))).reshape(-1)
    n_test = len(split.test_pos)
    test_auc = auc(scores[:n_test], scores[n_test:])

    return TrainedModel(sage=sage, mlp=mlp, store=store, config=config,
                        training_loss_curve=tuple(curve), test_auc=test_auc,
                        schema=schema, scalers=dict(scalers or {}),
                        train_quarter=train_quarter)


def rank_all_holders(model: TrainedModel, graph: BipartiteGraph,
                     holder_feats, fund_feats, fund: int):
    """Probabilities of every holder linking to one fund, plus the sort
    order (probability descending, holder index ascending on ties)."""
    if not 0 <= fund < graph.num_funds:
        raise ValueError(f"fund index {fund} out of range for {graph.num_funds} funds")
    with ad.no_grad():
        emb = encode(graph, ad.value(holder_feats), ad.value(fund_feats),
                     model.sage, perm_seed=model.config.seed)
        hu = emb.holder_emb
        fv = ad.take_rows(emb.fund_emb, [fund] * graph.num_holders)
        logits = ad.value(score_edges(model.mlp, hu, fv)).reshape(-1)
    probs = ad._sigmoid_array(logits.reshape(1, -1)).reshape(-1)
    order = np.lexsort((np.arange(len(probs)), -probs))
    return probs, order


def recommend_holders(model: TrainedModel, graph: BipartiteGraph, holder_feats,
                      fund_feats, fund: int, k: int,
                      exclude_existing: bool = False) -> list:
    """Top-k (holder index, probability) pairs for one fund."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    probs, order = rank_all_holders(model, graph, holder_feats, fund_feats, fund)
    existing = set(graph.fund_adj[fund]) if exclude_existing else ()
    out = []
    for idx in order:
        if idx in existing:
            continue
        out.append((int(idx), float(probs[idx])))
        if len(out) == k:
            break
    return out
