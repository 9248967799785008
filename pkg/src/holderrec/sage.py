"""Neighborhood-aggregating encoder for the bipartite graph.

Stacked layers compute h_v = act(W . concat(h_v, AGG(neighbors of v)))
with a selectable aggregation: elementwise neighbor mean, max-pool over a
learned transform, inclusive mean (self plus neighbors, no concat), or an
LSTM run over a seeded random permutation of the neighbors.  Holder and
fund nodes share the layer weights; the neighbors of a holder are funds
and vice versa.  Aggregation always spans the full neighborhood.

ReLU joins the layers; the last layer has no activation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import BipartiteGraph
from .optim import ParamStore


class AggregatorKind(enum.Enum):
    MEAN = "mean"
    POOL = "pool"
    GCN = "gcn"
    LSTM = "lstm"

    @classmethod
    def from_name(cls, name: str) -> "AggregatorKind":
        try:
            return cls(name.lower())
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown aggregator '{name}' (choices: {choices})") from None


LSTM_GATES = ("i", "f", "o", "c")


@dataclass
class SageLayer:
    kind: AggregatorKind
    in_dim: int
    out_dim: int
    W: object                 # (out_dim, 2*in_dim), or (out_dim, in_dim) for GCN
    pool_W: object = None     # (in_dim, in_dim), POOL only
    pool_b: object = None     # (1, in_dim), POOL only
    lstm: dict = None         # gate name -> {"W","U","b"} tensors, LSTM only


def make_layer(store: ParamStore, name: str, kind: AggregatorKind,
               in_dim: int, out_dim: int, seeds) -> SageLayer:
    """Register one layer's parameters in the store and return the layer.

    Biases start at zero; weight matrices use the uniform fan-in/out rule.
    """
    w_cols = in_dim if kind is AggregatorKind.GCN else 2 * in_dim
    layer = SageLayer(kind=kind, in_dim=in_dim, out_dim=out_dim,
                      W=store.register(f"{name}.W", out_dim, w_cols, next(seeds)))
    if kind is AggregatorKind.POOL:
        layer.pool_W = store.register(f"{name}.pool_W", in_dim, in_dim, next(seeds))
        layer.pool_b = store.add(f"{name}.pool_b", np.zeros((1, in_dim)))
    elif kind is AggregatorKind.LSTM:
        layer.lstm = {}
        for gate in LSTM_GATES:
            layer.lstm[gate] = {
                "W": store.register(f"{name}.lstm.W{gate}", in_dim, in_dim, next(seeds)),
                "U": store.register(f"{name}.lstm.U{gate}", in_dim, in_dim, next(seeds)),
                "b": store.add(f"{name}.lstm.b{gate}", np.zeros((1, in_dim))),
            }
    return layer


@dataclass
class SageModel:
    layers: tuple
    input_dim: int
    embedding_dim: int

    @property
    def kind(self) -> AggregatorKind:
        return self.layers[0].kind


def create_sage(store: ParamStore, input_dim: int, hidden_dim: int,
                embedding_dim: int, num_layers: int, kind: AggregatorKind,
                seeds) -> SageModel:
    if num_layers < 1:
        raise ValueError(f"num_layers must be >= 1, got {num_layers}")
    dims = [input_dim] + [hidden_dim] * (num_layers - 1) + [embedding_dim]
    layers = tuple(
        make_layer(store, f"sage.l{i}", kind, dims[i], dims[i + 1], seeds)
        for i in range(num_layers))
    return SageModel(layers=layers, input_dim=input_dim, embedding_dim=embedding_dim)


@dataclass
class Embeddings:
    holder_emb: object  # (num_holders, d)
    fund_emb: object    # (num_funds, d)


def _zero_row(dim: int) -> np.ndarray:
    return np.zeros((1, dim))


def _node_aggregate(layer: SageLayer, self_row, neighbor_rows):
    """Combine already-ordered neighbor rows into one (1, in_dim) vector."""
    kind = layer.kind
    if neighbor_rows is None:
        return self_row if kind is AggregatorKind.GCN else _zero_row(layer.in_dim)
    if kind is AggregatorKind.MEAN:
        return ad.row_mean(neighbor_rows)
    if kind is AggregatorKind.POOL:
        z = ad.add(ad.matmul(neighbor_rows, ad.transpose(layer.pool_W)), layer.pool_b)
        return ad.row_max(ad.sigmoid(z))
    if kind is AggregatorKind.GCN:
        return ad.row_mean(ad.concat_rows([self_row, neighbor_rows]))
    g = layer.lstm
    return ad.lstm_chain(neighbor_rows,
                         g["i"]["W"], g["i"]["U"], g["i"]["b"],
                         g["f"]["W"], g["f"]["U"], g["f"]["b"],
                         g["o"]["W"], g["o"]["U"], g["o"]["b"],
                         g["c"]["W"], g["c"]["U"], g["c"]["b"])


def _permuted_neighbors(neighbor_idx, seed_key):
    if len(neighbor_idx) <= 1:
        return list(neighbor_idx)
    rng = np.random.default_rng(seed_key)
    return [neighbor_idx[i] for i in rng.permutation(len(neighbor_idx))]


def aggregate(layer: SageLayer, self_vec, neighbor_vecs, perm_seed=0):
    """Aggregate a node's neighborhood.

    ``neighbor_vecs`` is a (k, in_dim) matrix of neighbor rows (or None /
    empty for an isolated node).  The LSTM variant consumes the rows in a
    permutation drawn from ``perm_seed`` (pass None to keep the given
    order); an empty neighborhood yields a zero vector except for the
    inclusive-mean variant, which falls back to the node's own vector.
    """
    if neighbor_vecs is not None and ad.value(neighbor_vecs).shape[0] == 0:
        neighbor_vecs = None
    if self_vec is not None and ad.value(self_vec).shape[1] != layer.in_dim:
        raise ad.ShapeError(
            f"aggregate: self vector width {ad.value(self_vec).shape[1]} != layer input {layer.in_dim}")
    if neighbor_vecs is not None and ad.value(neighbor_vecs).shape[1] != layer.in_dim:
        raise ad.ShapeError(
            f"aggregate: neighbor width {ad.value(neighbor_vecs).shape[1]} != layer input {layer.in_dim}")
    if layer.kind is AggregatorKind.GCN and self_vec is None:
        raise ValueError("the inclusive-mean aggregator requires the node's own vector")
    if (layer.kind is AggregatorKind.LSTM and neighbor_vecs is not None
            and perm_seed is not None):
        k = ad.value(neighbor_vecs).shape[0]
        order = _permuted_neighbors(list(range(k)), perm_seed)
        neighbor_vecs = ad.take_rows(neighbor_vecs, order)
    return _node_aggregate(layer, self_vec, neighbor_vecs)


_MASK64 = (1 << 64) - 1
_MIX1 = 0x9E3779B97F4A7C15
_MIX2 = 0xBF58476D1CE4E5B9
_MIX3 = 0x94D049BB133111EB
_KEY_NODE = np.uint64(0xA24BAED4963EE407)
_KEY_NBR = np.uint64(0x9FB21C651E98DF25)


def _hash_mix(x: np.ndarray) -> np.ndarray:
    # splitmix64 finalizer; uint64 array arithmetic wraps by construction
    x = x + np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX2)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX3)
    return x ^ (x >> np.uint64(31))


def _mix64(x: int) -> int:
    x = (x + _MIX1) & _MASK64
    x = ((x ^ (x >> 30)) * _MIX2) & _MASK64
    x = ((x ^ (x >> 27)) * _MIX3) & _MASK64
    return x ^ (x >> 31)


def _order_base(perm_seed, layer_index: int, side: int) -> np.uint64:
    seed = hash(perm_seed) & _MASK64
    return np.uint64(_mix64(seed ^ (layer_index * _MIX2) & _MASK64
                            ^ (side * _MIX3) & _MASK64))


def lstm_neighbor_order(perm_seed, layer_index: int, side: int, node: int,
                        neighbors) -> list:
    """The seeded neighbor consumption order the encoder uses for one node.

    Keyed by the node index and neighbor identities only, so the order of
    one node never depends on the rest of the graph or execution order.
    """
    nbr = np.asarray(neighbors, dtype=np.uint64)
    base = _order_base(perm_seed, layer_index, side)
    node_key = np.uint64((node * int(_KEY_NODE)) & _MASK64)
    keys = _hash_mix(base ^ node_key ^ nbr * _KEY_NBR)
    return [int(neighbors[i]) for i in np.argsort(keys, kind="stable")]


def _permuted_flat(flat, lengths, perm_seed, layer_index, side):
    """Within-segment seeded shuffle of the flat adjacency, vectorized."""
    base = _order_base(perm_seed, layer_index, side)
    nodes = np.repeat(np.arange(lengths.size, dtype=np.uint64), lengths)
    keys = _hash_mix(base ^ nodes * _KEY_NODE ^ flat.astype(np.uint64) * _KEY_NBR)
    return flat[np.lexsort((keys, nodes))]


def _side_aggregates(layer, graph, holders_side: bool, self_feats,
                     opposite_feats, perm_seed, layer_index):
    kind = layer.kind
    flat, lengths = graph.flat_adjacency(holders_side)
    if kind is AggregatorKind.LSTM:
        flat = _permuted_flat(flat, lengths, perm_seed, layer_index,
                              0 if holders_side else 1)
        g = layer.lstm
        gathered = ad.take_rows(opposite_feats, flat)
        return ad.lstm_chain_batch(gathered, lengths,
                                   g["i"]["W"], g["i"]["U"], g["i"]["b"],
                                   g["f"]["W"], g["f"]["U"], g["f"]["b"],
                                   g["o"]["W"], g["o"]["U"], g["o"]["b"],
                                   g["c"]["W"], g["c"]["U"], g["c"]["b"])
    if kind is AggregatorKind.POOL:
        transformed = ad.sigmoid(ad.add(
            ad.matmul(opposite_feats, ad.transpose(layer.pool_W)), layer.pool_b))
        return ad.segment_max(ad.take_rows(transformed, flat), lengths)
    gathered = ad.take_rows(opposite_feats, flat)
    if kind is AggregatorKind.MEAN:
        return ad.segment_mean(gathered, lengths)
    # inclusive mean: (self + sum of neighbors) / (degree + 1)
    total = ad.add(self_feats, ad.segment_sum(gathered, lengths))
    return ad.scale_rows(total, 1.0 / (lengths + 1.0))


def apply_layer(graph: BipartiteGraph, layer: SageLayer, holder_h, fund_h,
                is_last: bool, perm_seed=0, layer_index: int = 0):
    """One round of bipartite message passing for both node kinds."""
    agg_h = _side_aggregates(layer, graph, True, holder_h, fund_h,
                             perm_seed, layer_index)
    agg_f = _side_aggregates(layer, graph, False, fund_h, holder_h,
                             perm_seed, layer_index)
    wt = ad.transpose(layer.W)
    if layer.kind is AggregatorKind.GCN:
        zh = ad.matmul(agg_h, wt)
        zf = ad.matmul(agg_f, wt)
    else:
        zh = ad.matmul(ad.concat_cols(holder_h, agg_h), wt)
        zf = ad.matmul(ad.concat_cols(fund_h, agg_f), wt)
    if is_last:
        return zh, zf
    return ad.relu(zh), ad.relu(zf)


def encode(graph: BipartiteGraph, holder_feats, fund_feats,
           model: SageModel, perm_seed=0) -> Embeddings:
    """Embed every node by stacked full-neighborhood aggregation.

    Works inductively: any node present in the graph and feature matrices
    is embedded with the learned weights, seen during training or not.
    """
    hv, fv = ad.value(holder_feats), ad.value(fund_feats)
    if hv.shape[0] != graph.num_holders or fv.shape[0] != graph.num_funds:
        raise ad.ShapeError(
            f"feature rows ({hv.shape[0]}, {fv.shape[0]}) do not match graph "
            f"({graph.num_holders} holders, {graph.num_funds} funds)")
    if hv.shape[1] != model.input_dim or fv.shape[1] != model.input_dim:
        raise ad.ShapeError(
            f"feature width ({hv.shape[1]}, {fv.shape[1]}) != model input dim {model.input_dim}")
    h, f = holder_feats, fund_feats
    last = len(model.layers) - 1
    for li, layer in enumerate(model.layers):
        h, f = apply_layer(graph, layer, h, f, li == last, perm_seed, li)
    return Embeddings(holder_emb=h, fund_emb=f)
