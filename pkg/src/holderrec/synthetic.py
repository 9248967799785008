"""Synthetic two-quarter holdings generator with planted investment styles.

Holders and funds each belong to a style block; same-style pairs connect
far more often than cross-style pairs, and each fund's categorical
attributes are drawn from a style-specific distribution.  The second
quarter keeps a surviving subset of the first quarter's edges, adds new
edges at the block rates, and introduces a batch of fresh holders, which
gives the temporal evaluation its newly-added ground truth.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .features import HOLDINGS_HEADER, Position, quarter_key

CATEGORY_POOL = ("Equity", "Bond", "Commodity", "RealEstate",
                 "MultiAsset", "MoneyMarket", "Alternatives", "Thematic")
STRATEGY_POOL = ("active", "passive", "strategic")
ISSUER_POOL = ("Arrowpoint", "BlueHarbor", "Cresthaven", "Dunmore", "Eastgate",
               "Foxborough", "Glenrock", "Harborview", "Ironbridge", "Juniper")


@dataclass(frozen=True)
class SyntheticConfig:
    num_holders: int = 200
    num_funds: int = 60
    num_styles: int = 4
    within_style_edge_prob: float = 0.25
    cross_style_edge_prob: float = 0.02
    persistence: float = 0.9
    new_holder_fraction: float = 0.1
    seed: int = 0
    attr_fidelity: float = 0.65    # chance a fund attribute matches its style signature
    activity_spread: float = 0.7   # log10 half-width of per-node activity factors
    quarter: str = "2021Q3"
    next_quarter: str = "2021Q4"

    def validate(self):
        if self.num_holders < 1 or self.num_funds < 1:
            raise ValueError("need at least one holder and one fund")
        if self.num_styles < 1:
            raise ValueError("num_styles must be >= 1")
        for name in ("within_style_edge_prob", "cross_style_edge_prob",
                     "persistence", "attr_fidelity"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if not self.within_style_edge_prob > self.cross_style_edge_prob:
            raise ValueError("within_style_edge_prob must exceed cross_style_edge_prob")
        if not 0.0 <= self.new_holder_fraction < 1.0:
            raise ValueError("new_holder_fraction must lie in [0, 1)")
        if self.activity_spread < 0:
            raise ValueError("activity_spread must be >= 0")
        if quarter_key(self.quarter) >= quarter_key(self.next_quarter):
            raise ValueError("next_quarter must come after quarter")


@dataclass
class SyntheticData:
    config: SyntheticConfig
    positions_t: tuple        # quarter-T rows
    positions_t1: tuple       # quarter-T+1 rows
    holder_styles: dict       # holder id -> style index (fresh holders included)
    fund_styles: dict
    fund_attributes: dict     # fund id -> (category, strategy, issuer)


def _holder_id(i: int) -> str:
    return f"H{i:04d}"


def _fund_id(j: int) -> str:
    return f"F{j:03d}"


def _styled_attribute(rng, pool, signature, fidelity):
    if rng.random() < fidelity:
        return signature
    others = [v for v in pool if v != signature]
    return others[int(rng.integers(len(others)))]


def _activity(rng, n, spread):
    """Per-node multiplicative activity factors, mean-normalized to 1 so
    block densities keep their configured expectation."""
    if spread <= 0:
        return np.ones(n)
    raw = 10.0 ** rng.uniform(-spread, spread, size=n)
    return raw / raw.mean()


def _block_probs(holder_styles, fund_styles, config,
                 holder_activity=None, fund_activity=None):
    same = holder_styles[:, None] == fund_styles[None, :]
    probs = np.where(same, config.within_style_edge_prob, config.cross_style_edge_prob)
    if holder_activity is not None:
        probs = probs * np.outer(holder_activity, fund_activity)
    return np.clip(probs, 0.0, 1.0)


def _market_values(rng, n):
    return 10.0 ** rng.uniform(5.0, 9.0, size=n)


def generate_synthetic(config: SyntheticConfig) -> SyntheticData:
    """Two quarters of holdings rows plus the planted style assignments."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    m, n, s = config.num_holders, config.num_funds, config.num_styles

    holder_styles = np.arange(m) % s
    fund_styles = np.arange(n) % s
    fund_attrs = {}
    for j in range(n):
        style = int(fund_styles[j])
        fund_attrs[_fund_id(j)] = (
            _styled_attribute(rng, CATEGORY_POOL, CATEGORY_POOL[style % len(CATEGORY_POOL)],
                              config.attr_fidelity),
            _styled_attribute(rng, STRATEGY_POOL, STRATEGY_POOL[style % len(STRATEGY_POOL)],
                              config.attr_fidelity),
            _styled_attribute(rng, ISSUER_POOL, ISSUER_POOL[style % len(ISSUER_POOL)],
                              config.attr_fidelity),
        )

    holder_act = _activity(rng, m, config.activity_spread)
    fund_act = _activity(rng, n, config.activity_spread)
    probs = _block_probs(holder_styles, fund_styles, config, holder_act, fund_act)
    edges_t = rng.random((m, n)) < probs

    survived = edges_t & (rng.random((m, n)) < config.persistence)
    new_edges = ~edges_t & (rng.random((m, n)) < probs)
    edges_t1 = survived | new_edges

    # fresh holders appear only at T+1, sized so fresh / (m + fresh) ~ fraction
    n_fresh = int(round(config.new_holder_fraction * m / (1.0 - config.new_holder_fraction)))
    fresh_styles = (np.arange(m, m + n_fresh)) % s
    fresh_act = _activity(rng, n_fresh, config.activity_spread)
    fresh_edges = rng.random((n_fresh, n)) < _block_probs(fresh_styles, fund_styles,
                                                          config, fresh_act, fund_act)
    for r in range(n_fresh):
        if not fresh_edges[r].any():
            style_funds = np.flatnonzero(fund_styles == fresh_styles[r])
            pool = style_funds if style_funds.size else np.arange(n)
            fresh_edges[r, pool[int(rng.integers(pool.size))]] = True

    def rows_for(quarter, edge_mask, first_holder=0):
        hs, fs = np.nonzero(edge_mask)
        values = _market_values(rng, hs.size)
        rows = []
        for h, f, mv in zip(hs, fs, values):
            fid = _fund_id(int(f))
            cat, strat, iss = fund_attrs[fid]
            rows.append(Position(quarter, _holder_id(int(h) + first_holder), fid,
                                 float(mv), cat, strat, iss))
        return rows

    positions_t = rows_for(config.quarter, edges_t)
    positions_t1 = rows_for(config.next_quarter, edges_t1)
    positions_t1 += rows_for(config.next_quarter, fresh_edges, first_holder=m)

    holder_style_map = {_holder_id(i): int(holder_styles[i]) for i in range(m)}
    holder_style_map.update(
        {_holder_id(m + r): int(fresh_styles[r]) for r in range(n_fresh)})
    return SyntheticData(
        config=config,
        positions_t=tuple(positions_t),
        positions_t1=tuple(positions_t1),
        holder_styles=holder_style_map,
        fund_styles={_fund_id(j): int(fund_styles[j]) for j in range(n)},
        fund_attributes=fund_attrs,
    )


def write_holdings_csv(positions, stream):
    """Write positions in the holdings CSV contract (round-trips exactly)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HOLDINGS_HEADER)
    for p in positions:
        writer.writerow([p.quarter, p.holder_id, p.fund_id, repr(p.market_value),
                         p.category, p.strategy, p.issuer])


def holdings_csv_text(positions) -> str:
    import io

    buf = io.StringIO()
    write_holdings_csv(positions, buf)
    return buf.getvalue()
