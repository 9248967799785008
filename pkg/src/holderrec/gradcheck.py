"""Finite-difference verification of the joint loss gradient.

Builds a random bipartite graph, runs the full encoder + edge-scorer loss,
and compares the tape's gradients against central differences for every
parameter entry.  Perturbing a parameter of layer k cannot change the
activations of earlier layers, so the sweep caches each stage's input and
recomputes only from the perturbed stage onward; the values are identical
to a full re-evaluation, it is purely a runtime optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graph import build_graph, sample_negative_edges
from .optim import ParamStore
from .predictor import _forward_loss, create_mlp
from .sage import AggregatorKind, Embeddings, apply_layer, create_sage, encode


@dataclass
class GradcheckCase:
    graph: object
    holder_feats: np.ndarray
    fund_feats: np.ndarray
    store: ParamStore
    sage: object
    mlp: object
    holders: list
    funds: list
    labels: np.ndarray
    perm_seed: int


def stencil_margin(case: "GradcheckCase") -> float:
    """Distance from the forward pass to its nearest non-smooth point.

    Central differences assume the loss is differentiable across the
    +-epsilon stencil; a ReLU pre-activation at distance < epsilon from
    zero, or a pooled max decided by a sub-stencil gap, breaks that
    premise.  Returns the smallest such margin so callers can redraw the
    case instead of comparing against an ill-posed estimate.
    """
    margins = [np.inf]
    with ad.no_grad():
        h, f = case.holder_feats, case.fund_feats
        last = len(case.sage.layers) - 1
        for li, layer in enumerate(case.sage.layers):
            if layer.kind is AggregatorKind.POOL:
                for holders_side, opp in ((True, f), (False, h)):
                    flat, lengths = case.graph.flat_adjacency(holders_side)
                    transformed = ad.value(ad.sigmoid(
                        ad.add(ad.matmul(opp, ad.transpose(layer.pool_W)),
                               layer.pool_b)))[flat]
                    start = 0
                    for n in lengths:
                        if n >= 2:
                            block = np.sort(transformed[start:start + n], axis=0)
                            margins.append(float((block[-1] - block[-2]).min()))
                        start += n
            # pre-activation values: apply_layer skips the ReLU when told
            # the layer is last
            zh, zf = apply_layer(case.graph, layer, h, f, True,
                                 case.perm_seed, li)
            zh, zf = ad.value(zh), ad.value(zf)
            if li < last:
                margins.append(float(min(np.abs(zh).min(), np.abs(zf).min())))
                h, f = np.maximum(zh, 0.0), np.maximum(zf, 0.0)
            else:
                h, f = zh, zf
        pairs = np.hstack([h[case.holders], f[case.funds]])
        margins.append(float(np.abs(pairs @ ad.value(case.mlp.W1).T).min()))
    return min(margins)


def build_case(kind: AggregatorKind, seed: int, num_holders: int = 12,
               num_funds: int = 6, feature_dim: int = 8, hidden_dim: int = 16,
               embedding_dim: int = 16, num_layers: int = 2, mlp_hidden: int = 64,
               edge_prob: float = 0.3) -> GradcheckCase:
    rng = np.random.default_rng(seed)
    mask = rng.random((num_holders, num_funds)) < edge_prob
    if not mask.any():
        mask[0, 0] = True
    if mask.all():
        mask[0, 0] = False
    edges = list(zip(*np.nonzero(mask)))
    graph = build_graph(num_holders, num_funds, edges)
    holder_feats = rng.random((num_holders, feature_dim))
    fund_feats = rng.random((num_funds, feature_dim))

    seeds = iter(np.random.SeedSequence((seed, 17)).generate_state(64).tolist())
    store = ParamStore()
    sage = create_sage(store, feature_dim, hidden_dim, embedding_dim,
                       num_layers, kind, seeds)
    mlp = create_mlp(store, embedding_dim, mlp_hidden, seeds)

    negatives = sample_negative_edges(graph, 1.0, seed)
    holders = [h for h, _ in graph.edge_list] + [e.holder for e in negatives]
    funds = [f for _, f in graph.edge_list] + [e.fund for e in negatives]
    labels = np.zeros((len(holders), 1))
    labels[:graph.num_edges] = 1.0
    return GradcheckCase(graph=graph, holder_feats=holder_feats, fund_feats=fund_feats,
                         store=store, sage=sage, mlp=mlp, holders=holders,
                         funds=funds, labels=labels, perm_seed=seed)


def case_loss(case: GradcheckCase):
    emb = encode(case.graph, case.holder_feats, case.fund_feats, case.sage,
                 perm_seed=case.perm_seed)
    return _forward_loss(emb, case.mlp, case.holders, case.funds, case.labels)


def analytic_gradients(case: GradcheckCase) -> dict:
    case.store.zero_grads()
    loss = case_loss(case)
    loss.backward()
    return {name: p.grad.copy() for name, p in case.store.items()}


def _stage_of(name: str, num_layers: int) -> int:
    if name.startswith("sage.l"):
        return int(name[len("sage.l"):].split(".")[0])
    return num_layers  # scorer parameters sit after the last layer


def finite_difference_gradients(case: GradcheckCase, epsilon: float = 1e-5) -> dict:
    num_layers = len(case.sage.layers)
    grads = {}
    with ad.no_grad():
        # inputs to each stage, computed once with unperturbed parameters
        stage_inputs = [(case.holder_feats, case.fund_feats)]
        h, f = case.holder_feats, case.fund_feats
        for li, layer in enumerate(case.sage.layers):
            h, f = apply_layer(case.graph, layer, h, f, li == num_layers - 1,
                               case.perm_seed, li)
            stage_inputs.append((h, f))

        def loss_from(stage: int) -> float:
            h, f = stage_inputs[stage]
            for li in range(stage, num_layers):
                h, f = apply_layer(case.graph, case.sage.layers[li], h, f,
                                   li == num_layers - 1, case.perm_seed, li)
            return ad.scalar(_forward_loss(Embeddings(h, f), case.mlp,
                                           case.holders, case.funds, case.labels))

        for name, p in case.store.items():
            stage = _stage_of(name, num_layers)
            flat = p.data.reshape(-1)
            g = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + epsilon
                f_plus = loss_from(stage)
                flat[i] = orig - epsilon
                f_minus = loss_from(stage)
                flat[i] = orig
                g[i] = (f_plus - f_minus) / (2.0 * epsilon)
            grads[name] = g.reshape(p.data.shape)
    return grads


@dataclass
class GradcheckRow:
    kind: str
    seed: int
    param: str
    max_rel_error: float


@dataclass
class GradcheckReport:
    tolerance: float
    epsilon: float
    rows: list

    @property
    def ok(self) -> bool:
        return all(r.max_rel_error <= self.tolerance for r in self.rows)

    @property
    def worst(self) -> float:
        return max(r.max_rel_error for r in self.rows)


def relative_errors(analytic: dict, estimated: dict) -> dict:
    """Per-parameter max of |fd - analytic| / max(1, |analytic|)."""
    out = {}
    for name, an in analytic.items():
        fd = estimated[name]
        out[name] = float(np.max(np.abs(fd - an) / np.maximum(1.0, np.abs(an))))
    return out


def build_smooth_case(kind: AggregatorKind, seed: int, epsilon: float = 1e-5,
                      attempts: int = 25, **case_kwargs) -> GradcheckCase:
    """A random case whose forward pass stays smooth across the FD stencil.

    Draws deterministically derived fallback seeds until every kink margin
    clears 10x epsilon (a perturbed input entry can scale the stencil).
    """
    margin = 10.0 * epsilon
    for attempt in range(attempts):
        case = build_case(kind, seed + attempt * 100003, **case_kwargs)
        if stencil_margin(case) > margin:
            return case
    raise RuntimeError(
        f"no smooth gradcheck case found for {kind.value} near seed {seed}")


def run_gradcheck(kinds=None, seeds=(0, 1, 2, 3, 4), tolerance: float = 1e-4,
                  epsilon: float = 1e-5, **case_kwargs) -> GradcheckReport:
    kinds = list(kinds) if kinds else list(AggregatorKind)
    rows = []
    for kind in kinds:
        for seed in seeds:
            case = build_smooth_case(kind, seed, epsilon, **case_kwargs)
            analytic = analytic_gradients(case)
            estimated = finite_difference_gradients(case, epsilon)
            for name, err in relative_errors(analytic, estimated).items():
                rows.append(GradcheckRow(kind=kind.value, seed=seed,
                                         param=name, max_rel_error=err))
    return GradcheckReport(tolerance=tolerance, epsilon=epsilon, rows=rows)
