"""Bipartite holder-fund graph: construction, adjacency queries, negative
sampling and train/test edge splitting.

Nodes are dense per-kind integer indices; string identifiers live in the
ingestion layer.  A constructed graph is immutable, so concurrent reads
are safe.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class NodeKind(enum.Enum):
    HOLDER = "holder"
    FUND = "fund"


@dataclass(frozen=True)
class NodeRef:
    kind: NodeKind
    index: int


@dataclass(frozen=True)
class LabeledEdge:
    holder: int
    fund: int
    label: int


@dataclass(frozen=True)
class BipartiteGraph:
    num_holders: int
    num_funds: int
    holder_adj: tuple  # per holder: sorted tuple of fund indices
    fund_adj: tuple    # per fund: sorted tuple of holder indices
    edge_list: tuple   # lexicographically sorted (holder, fund) pairs
    _edges: frozenset = field(repr=False, compare=False)
    # flat concatenated adjacency plus per-node lengths, one pair per side,
    # precomputed for batched neighborhood gathers
    _holder_flat: tuple = field(repr=False, compare=False, default=None)
    _fund_flat: tuple = field(repr=False, compare=False, default=None)

    def flat_adjacency(self, holders_side: bool) -> tuple:
        """(flat opposite-kind indices, per-node lengths) for one side."""
        return self._holder_flat if holders_side else self._fund_flat

    @property
    def num_edges(self) -> int:
        return len(self.edge_list)

    def has_edge(self, holder: int, fund: int) -> bool:
        return (holder, fund) in self._edges

    def degree(self, node: NodeRef) -> int:
        return len(self.neighbors(node))

    def neighbors(self, node: NodeRef) -> tuple:
        """Sorted indices of the opposite-kind nodes adjacent to ``node``."""
        if node.kind is NodeKind.HOLDER:
            if not 0 <= node.index < self.num_holders:
                raise ValueError(
                    f"holder index {node.index} out of range for {self.num_holders} holders")
            return self.holder_adj[node.index]
        if not 0 <= node.index < self.num_funds:
            raise ValueError(
                f"fund index {node.index} out of range for {self.num_funds} funds")
        return self.fund_adj[node.index]


def build_graph(num_holders: int, num_funds: int, edges) -> BipartiteGraph:
    """Build an immutable bipartite graph from (holder, fund) index pairs.

    Duplicate input edges are silently deduplicated; out-of-range indices
    raise a ValueError naming the offending pair.
    """
    if num_holders < 0 or num_funds < 0:
        raise ValueError(f"negative node count ({num_holders}, {num_funds})")
    uniq = set()
    for h, f in edges:
        h, f = int(h), int(f)
        if not (0 <= h < num_holders and 0 <= f < num_funds):
            raise ValueError(
                f"edge ({h}, {f}) out of range for {num_holders} holders and {num_funds} funds")
        uniq.add((h, f))
    edge_list = tuple(sorted(uniq))
    holder_adj = [[] for _ in range(num_holders)]
    fund_adj = [[] for _ in range(num_funds)]
    for h, f in edge_list:
        holder_adj[h].append(f)
        fund_adj[f].append(h)
    holder_adj = tuple(tuple(a) for a in holder_adj)
    fund_adj = tuple(tuple(sorted(a)) for a in fund_adj)

    def flatten(adj):
        lengths = np.array([len(a) for a in adj], dtype=np.intp)
        flat = (np.concatenate([np.asarray(a, dtype=np.intp) for a in adj if a])
                if lengths.sum() else np.zeros(0, dtype=np.intp))
        return flat, lengths

    return BipartiteGraph(
        num_holders=num_holders,
        num_funds=num_funds,
        holder_adj=holder_adj,
        fund_adj=fund_adj,
        edge_list=edge_list,
        _edges=frozenset(edge_list),
        _holder_flat=flatten(holder_adj),
        _fund_flat=flatten(fund_adj),
    )


def neighbors(graph: BipartiteGraph, node: NodeRef) -> tuple:
    return graph.neighbors(node)


_REJECTION_CAP = 100


def _corrupt_fund(graph: BipartiteGraph, holder: int, rng) -> int | None:
    """A fund not adjacent to ``holder``, or None if the holder is saturated.

    Rejection sampling is O(1) expected on sparse graphs; after the cap we
    enumerate the holder's non-edge pool so dense holders still terminate.
    """
    if len(graph.holder_adj[holder]) >= graph.num_funds:
        return None
    for _ in range(_REJECTION_CAP):
        fund = int(rng.integers(graph.num_funds))
        if not graph.has_edge(holder, fund):
            return fund
    adjacent = set(graph.holder_adj[holder])
    pool = [f for f in range(graph.num_funds) if f not in adjacent]
    return pool[int(rng.integers(len(pool)))]


def sample_negative_edges(graph: BipartiteGraph, count_per_positive: float = 1.0,
                          seed: int = 0) -> list[LabeledEdge]:
    """Label-0 edges absent from the graph, one batch per positive edge.

    Each positive (h, f) is corrupted on the fund side.  Returns roughly
    ``count_per_positive * num_edges`` samples (fewer when some holders
    already touch every fund); deterministic for a fixed seed.
    """
    if count_per_positive <= 0:
        raise ValueError(f"count_per_positive must be positive, got {count_per_positive}")
    pool = graph.num_holders * graph.num_funds - graph.num_edges
    if pool <= 0:
        raise ValueError("no negative edges available: the bipartite graph is complete")
    total = int(round(count_per_positive * graph.num_edges))
    rng = np.random.default_rng(seed)
    out = []
    n_pos = graph.num_edges
    for t in range(total):
        holder, _ = graph.edge_list[t % n_pos]
        fund = _corrupt_fund(graph, holder, rng)
        if fund is not None:
            out.append(LabeledEdge(holder, fund, 0))
    return out


@dataclass(frozen=True)
class EdgeSplit:
    train_pos: tuple
    test_pos: tuple
    test_neg: tuple
    seed: int


_ENUMERATION_LIMIT = 200_000


def _sample_nonedges(graph: BipartiteGraph, count: int, rng) -> tuple:
    """``count`` distinct uniform non-edges of the graph."""
    pool = graph.num_holders * graph.num_funds - graph.num_edges
    if pool < count:
        raise ValueError(f"only {pool} non-edges exist, {count} requested")
    if graph.num_holders * graph.num_funds <= _ENUMERATION_LIMIT:
        nonedges = [(h, f) for h in range(graph.num_holders)
                    for f in range(graph.num_funds) if not graph.has_edge(h, f)]
        picked = rng.choice(len(nonedges), size=count, replace=False)
        return tuple(sorted(nonedges[i] for i in picked))
    seen = set()
    while len(seen) < count:
        h = int(rng.integers(graph.num_holders))
        f = int(rng.integers(graph.num_funds))
        if not graph.has_edge(h, f):
            seen.add((h, f))
    return tuple(sorted(seen))


def split_edges(graph: BipartiteGraph, test_fraction: float, seed: int = 0) -> EdgeSplit:
    """Uniform random partition of the positive edges plus matched test
    negatives, all deterministic for a fixed seed."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = graph.num_edges
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n_test >= n:
        raise ValueError(
            f"cannot split {n} edges with test_fraction {test_fraction}: both parts must be non-empty")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    test_pos = tuple(sorted(graph.edge_list[i] for i in perm[:n_test]))
    train_pos = tuple(sorted(graph.edge_list[i] for i in perm[n_test:]))
    test_neg = _sample_nonedges(graph, n_test, rng)
    return EdgeSplit(train_pos=train_pos, test_pos=test_pos, test_neg=test_neg, seed=seed)
