#!/usr/bin/env python3
"""From raw holdings rows to a bipartite graph and scaled node features.

Walks the ingestion path end to end on a hand-sized dataset: parse the
holdings CSV, build the one-hot schema, aggregate money-weighted features
per holder and per fund, min-max scale them, and carve AUM segments.
"""

import io

import numpy as np

import holderrec as hr

CSV = """\
quarter,holder_id,fund_id,market_value,category,strategy,issuer
2021Q3,Atlas Advisors,GROWTH-ETF,120000000,Equity,active,Arrowpoint
2021Q3,Atlas Advisors,BOND-CORE,40000000,Bond,passive,BlueHarbor
2021Q3,Beacon Capital,GROWTH-ETF,90000000,Equity,active,Arrowpoint
2021Q3,Beacon Capital,REIT-PLUS,25000000,RealEstate,strategic,Cresthaven
2021Q3,Citadel Trust,BOND-CORE,310000000,Bond,passive,BlueHarbor
2021Q3,Dunbar Wealth,REIT-PLUS,15000000,RealEstate,strategic,Cresthaven
2021Q3,Dunbar Wealth,GROWTH-ETF,5000000,Equity,active,Arrowpoint
"""

snapshot = hr.parse_holdings(io.StringIO(CSV))["2021Q3"]
print(f"parsed {len(snapshot.positions)} positions, "
      f"{snapshot.num_holders} holders x {snapshot.num_funds} funds")

# --- the bipartite graph ------------------------------------------------
graph = hr.graph_from_snapshot(snapshot)
print(f"\ngraph: {graph.num_edges} edges")
for hid, idx in snapshot.holder_index.items():
    funds = [snapshot.fund_ids[f] for f in graph.holder_adj[idx]]
    print(f"  {hid:15s} -> {', '.join(funds)}")

node = hr.NodeRef(hr.NodeKind.FUND, snapshot.fund_index["GROWTH-ETF"])
investors = [snapshot.holder_ids[h] for h in hr.neighbors(graph, node)]
print(f"GROWTH-ETF investors: {', '.join(investors)}")

# --- negative sampling (label-0 training pairs) -------------------------
negatives = hr.sample_negative_edges(graph, count_per_positive=1.0, seed=7)
print(f"\n{len(negatives)} sampled non-edges, e.g. "
      + ", ".join(f"({snapshot.holder_ids[e.holder]}, {snapshot.fund_ids[e.fund]})"
                  for e in negatives[:3]))

# --- one-hot schema and money-weighted features --------------------------
schema = hr.build_schema([snapshot])
print(f"\nschema: {schema.width} columns")
for family, val in schema.columns:
    print(f"  {family}={val}")

holders, funds = hr.featurize(snapshot, schema)
atlas = holders.values[snapshot.holder_index["Atlas Advisors"]]
print("\nAtlas Advisors raw feature row (money-weighted one-hots):")
for (family, val), x in zip(schema.columns, atlas):
    if x:
        print(f"  {family}={val}: {x:,.0f}")

scaled, scaler = hr.min_max_scale(holders)
print("\nafter min-max scaling, every column lies in [0, 1]:")
print(np.array_str(scaled.values, precision=3, suppress_small=True))

# --- AUM segmentation (quartiles by default; 2 groups here) --------------
segments = hr.segment_holders(snapshot, num_segments=2)
for hid, idx in snapshot.holder_index.items():
    label = ["smaller", "larger"][segments.assignment[idx]]
    print(f"  {hid:15s} AUM segment: {label}")
