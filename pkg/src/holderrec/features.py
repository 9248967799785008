"""Quarterly holdings ingestion and node feature engineering.

The holdings CSV contract: UTF-8, header row exactly
``quarter,holder_id,fund_id,market_value,category,strategy,issuer``,
quarters formatted ``YYYYQn``, market values as decimal literals.

Categorical attributes are one-hot encoded with the invested market value
in place of a binary flag, aggregated per holder and per fund over a
shared column schema, then min-max scaled per column.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

HOLDINGS_HEADER = ("quarter", "holder_id", "fund_id", "market_value",
                   "category", "strategy", "issuer")

ATTRIBUTE_FAMILIES = ("category", "strategy", "issuer")

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


def quarter_key(label: str) -> tuple:
    """(year, quarter) sort key; rejects labels not shaped like 2021Q4."""
    m = _QUARTER_RE.match(label)
    if not m:
        raise ValueError(f"bad quarter label '{label}' (expected YYYYQn)")
    return int(m.group(1)), int(m.group(2))


@dataclass(frozen=True)
class Position:
    quarter: str
    holder_id: str
    fund_id: str
    market_value: float
    category: str
    strategy: str
    issuer: str

    def attributes(self) -> tuple:
        return (("category", self.category), ("strategy", self.strategy),
                ("issuer", self.issuer))


@dataclass
class QuarterSnapshot:
    """One quarter of aggregated positions with frozen id -> index maps.

    Index maps are assigned in first-appearance order of the input rows;
    duplicate (holder, fund) rows are summed into one position.
    """

    quarter: str
    positions: tuple
    holder_index: dict
    fund_index: dict

    @property
    def num_holders(self) -> int:
        return len(self.holder_index)

    @property
    def num_funds(self) -> int:
        return len(self.fund_index)

    @property
    def holder_ids(self) -> tuple:
        return tuple(self.holder_index)

    @property
    def fund_ids(self) -> tuple:
        return tuple(self.fund_index)

    def edges(self) -> list:
        """(holder index, fund index) pairs for every position."""
        return [(self.holder_index[p.holder_id], self.fund_index[p.fund_id])
                for p in self.positions]

    def holder_aum(self) -> np.ndarray:
        """Total market value invested per holder."""
        aum = np.zeros(self.num_holders)
        for p in self.positions:
            aum[self.holder_index[p.holder_id]] += p.market_value
        return aum


def parse_holdings(stream) -> dict:
    """Parse a holdings CSV stream into one QuarterSnapshot per quarter.

    Returns a dict keyed by quarter label in chronological order.
    Malformed rows raise a ValueError carrying the line number.
    """
    reader = csv.reader(stream)
    header = next(reader, None)
    if header != list(HOLDINGS_HEADER):
        raise ValueError(
            f"bad holdings header: expected {','.join(HOLDINGS_HEADER)}, got {header}")
    merged: dict = {}     # quarter -> {(holder, fund): Position}
    holder_maps: dict = {}
    fund_maps: dict = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 7:
            raise ValueError(f"line {lineno}: expected 7 fields, got {len(row)}")
        quarter, holder_id, fund_id, raw_value, category, strategy, issuer = row
        quarter_key(quarter)
        for name, val in (("holder_id", holder_id), ("fund_id", fund_id),
                          ("category", category), ("strategy", strategy),
                          ("issuer", issuer)):
            if not val:
                raise ValueError(f"line {lineno}: empty {name}")
        try:
            market_value = float(raw_value)
        except ValueError:
            raise ValueError(f"line {lineno}: bad market_value '{raw_value}'") from None
        if not np.isfinite(market_value) or market_value < 0:
            raise ValueError(f"line {lineno}: negative market_value {raw_value}")
        bucket = merged.setdefault(quarter, {})
        hmap = holder_maps.setdefault(quarter, {})
        fmap = fund_maps.setdefault(quarter, {})
        if holder_id not in hmap:
            hmap[holder_id] = len(hmap)
        if fund_id not in fmap:
            fmap[fund_id] = len(fmap)
        key = (holder_id, fund_id)
        prev = bucket.get(key)
        if prev is None:
            bucket[key] = Position(quarter, holder_id, fund_id, market_value,
                                   category, strategy, issuer)
        else:
            # duplicate filing rows: sum values, keep first-seen attributes
            bucket[key] = Position(quarter, holder_id, fund_id,
                                   prev.market_value + market_value,
                                   prev.category, prev.strategy, prev.issuer)
    snapshots = {}
    for quarter in sorted(merged, key=quarter_key):
        snapshots[quarter] = QuarterSnapshot(
            quarter=quarter,
            positions=tuple(merged[quarter].values()),
            holder_index=dict(holder_maps[quarter]),
            fund_index=dict(fund_maps[quarter]),
        )
    return snapshots


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered one-hot column descriptors, lexicographic by (family, value)."""

    columns: tuple
    _index: dict = field(repr=False, compare=False, default=None)

    @classmethod
    def from_columns(cls, columns) -> "FeatureSchema":
        cols = tuple(sorted({(str(f), str(v)) for f, v in columns}))
        return cls(columns=cols, _index={c: i for i, c in enumerate(cols)})

    @property
    def width(self) -> int:
        return len(self.columns)

    def column_of(self, family: str, val: str) -> int:
        idx = self._index.get((family, val))
        if idx is None:
            raise ValueError(f"attribute value '{val}' (family '{family}') is not in the schema")
        return idx


def build_schema(snapshots) -> FeatureSchema:
    """One column per distinct (family, value) across all given snapshots."""
    columns = set()
    for snap in snapshots:
        for p in snap.positions:
            for family, val in p.attributes():
                columns.add((family, val))
    if not columns:
        raise ValueError("cannot build a schema from snapshots with no positions")
    return FeatureSchema.from_columns(columns)


@dataclass
class FeatureMatrix:
    node_kind: str  # "holder" or "fund"
    values: np.ndarray
    schema: FeatureSchema


def featurize(snapshot: QuarterSnapshot, schema: FeatureSchema,
              on_unknown: str = "error"):
    """Unscaled holder and fund feature matrices over the shared schema.

    A holder row sums one_hot(position attributes) * market_value over the
    holder's positions; a fund row carries the fund's own attributes
    weighted by the total value invested in it.  Holders or funds present
    in the index maps but without positions get zero rows.

    Attribute values absent from the schema raise by default; pass
    ``on_unknown="ignore"`` to project them away instead, which is how
    later-quarter data flows through a schema frozen at training time (an
    unseen value has no learned column to land in).
    """
    if on_unknown not in ("error", "ignore"):
        raise ValueError(f"on_unknown must be 'error' or 'ignore', got '{on_unknown}'")
    H = np.zeros((snapshot.num_holders, schema.width))
    F = np.zeros((snapshot.num_funds, schema.width))
    for p in snapshot.positions:
        cols = []
        for family, val in p.attributes():
            try:
                cols.append(schema.column_of(family, val))
            except ValueError:
                if on_unknown == "error":
                    raise
        h = snapshot.holder_index[p.holder_id]
        f = snapshot.fund_index[p.fund_id]
        for c in cols:
            H[h, c] += p.market_value
            F[f, c] += p.market_value
    return (FeatureMatrix("holder", H, schema), FeatureMatrix("fund", F, schema))


@dataclass(frozen=True)
class ColumnScaler:
    """Per-column (min, max) fitted on a training matrix."""

    col_min: np.ndarray
    col_max: np.ndarray

    def transform(self, values: np.ndarray, clip: bool = True) -> np.ndarray:
        span = self.col_max - self.col_min
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(span > 0, (values - self.col_min) / np.where(span > 0, span, 1.0), 0.0)
        if clip:
            out = np.clip(out, 0.0, 1.0)
        return out


def min_max_scale(matrix: FeatureMatrix):
    """Scale each column to [0, 1]; constant columns map to 0.

    Returns the scaled matrix plus the fitted ColumnScaler for reuse on
    later quarters (with clipping).
    """
    if matrix.values.shape[0] < 1:
        raise ValueError("min_max_scale needs at least one row")
    scaler = ColumnScaler(col_min=matrix.values.min(axis=0),
                          col_max=matrix.values.max(axis=0))
    scaled = scaler.transform(matrix.values, clip=False)
    return FeatureMatrix(matrix.node_kind, scaled, matrix.schema), scaler


@dataclass
class AumSegmentation:
    """Holders split into quantile groups by total invested market value.

    Lower segment indices hold lower-AUM holders; when sizes cannot be
    equal the lower segments take the extra members.
    """

    num_segments: int
    assignment: np.ndarray   # per-holder segment index
    boundaries: np.ndarray   # AUM cut points, length num_segments - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.num_segments)

    @property
    def proportions(self) -> np.ndarray:
        return self.sizes / max(1, len(self.assignment))

    def segment_of_aum(self, aum: float) -> int:
        """Segment a fresh holder by binning its AUM into the fitted cuts."""
        return int(np.searchsorted(self.boundaries, aum, side="right"))


def segment_holders(snapshot: QuarterSnapshot, num_segments: int = 4) -> AumSegmentation:
    """Quantile AUM segments; ties broken by holder index ascending."""
    m = snapshot.num_holders
    if not 1 <= num_segments <= m:
        raise ValueError(f"num_segments must lie in [1, {m}], got {num_segments}")
    aum = snapshot.holder_aum()
    order = np.lexsort((np.arange(m), aum))  # primary: AUM asc, ties: index asc
    base, extra = divmod(m, num_segments)
    assignment = np.zeros(m, dtype=np.intp)
    boundaries = []
    start = 0
    for s in range(num_segments):
        size = base + (1 if s < extra else 0)
        assignment[order[start:start + size]] = s
        if s > 0:
            boundaries.append(aum[order[start]])
        start += size
    return AumSegmentation(num_segments=num_segments, assignment=assignment,
                           boundaries=np.asarray(boundaries))
