"""In-memory columnar block model.

A data block stores all values of one attribute contiguously (PAX-style
within-block columnar layout). Blocks are value-like: immutable after
creation by convention, cheap to hand between workers.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import SchemaError

INT64 = "int64"
FLOAT64 = "float64"
STRING = "string"

_KINDS = (INT64, FLOAT64, STRING)


@dataclass(frozen=True)
class Attribute:
    """One schema attribute: int64, float64, or fixed-width string."""

    name: str
    kind: str
    width: int = 0  # byte width for STRING, ignored otherwise

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise SchemaError(f"unknown attribute kind {self.kind!r}")
        if self.kind == STRING and self.width <= 0:
            raise SchemaError(f"string attribute {self.name!r} needs width > 0")

    @property
    def dtype(self) -> np.dtype:
        if self.kind == INT64:
            return np.dtype("<i8")
        if self.kind == FLOAT64:
            return np.dtype("<f8")
        return np.dtype(f"S{self.width}")

    @property
    def item_size(self) -> int:
        return self.width if self.kind == STRING else 8

    def coerce(self, value) -> object:
        """Coerce a predicate bound to this attribute's comparison domain."""
        if self.kind == INT64:
            return int(value)
        if self.kind == FLOAT64:
            return float(value)
        if isinstance(value, str):
            value = value.encode("utf-8")
        return np.bytes_(value)


@dataclass(frozen=True)
class Schema:
    attributes: tuple[Attribute, ...]

    def __post_init__(self) -> None:
        if not self.attributes:
            raise SchemaError("schema must have at least one attribute")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("attribute names must be unique")

    @classmethod
    def of(cls, *specs: tuple) -> "Schema":
        """Build a schema from (name, kind[, width]) tuples."""
        return cls(tuple(Attribute(*s) for s in specs))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.attributes)

    def __contains__(self, name: str) -> bool:
        return any(a.name == name for a in self.attributes)

    def attribute(self, name: str) -> Attribute:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {name!r}")

    def ordinal(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise SchemaError(f"unknown attribute {name!r}")

    @property
    def row_width(self) -> int:
        return sum(a.item_size for a in self.attributes)

    def subset(self, names: Iterable[str]) -> "Schema":
        """Sub-schema containing `names`, preserving this schema's order."""
        wanted = set(names)
        missing = wanted - set(self.names)
        if missing:
            raise SchemaError(f"unknown attributes {sorted(missing)}")
        return Schema(tuple(a for a in self.attributes if a.name in wanted))

    def to_json(self) -> list[dict]:
        return [
            {"name": a.name, "kind": a.kind, "width": a.width}
            for a in self.attributes
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "Schema":
        return cls(
            tuple(
                Attribute(d["name"], d["kind"], d.get("width", 0)) for d in data
            )
        )


@dataclass
class SparseClusteredIndex:
    """Page directory over a sorted column: one (first key, start row) per page.

    Entry k covers rows [start_records[k], start_records[k+1]); the last entry
    covers through record_count.
    """

    attribute: str
    page_size_records: int
    first_keys: np.ndarray
    start_records: np.ndarray
    record_count: int

    @classmethod
    def from_sorted_column(
        cls, attribute: str, column: np.ndarray, page_size_records: int
    ) -> "SparseClusteredIndex":
        n = len(column)
        starts = np.arange(0, n, page_size_records, dtype=np.uint64)
        return cls(
            attribute=attribute,
            page_size_records=page_size_records,
            first_keys=column[starts.astype(np.int64)].copy(),
            start_records=starts,
            record_count=n,
        )

    @property
    def entry_count(self) -> int:
        return len(self.start_records)

    def entries(self) -> list[tuple]:
        return list(zip(self.first_keys.tolist(), self.start_records.tolist()))

    def page_bounds(self, page: int) -> tuple[int, int]:
        lo = int(self.start_records[page])
        hi = (
            int(self.start_records[page + 1])
            if page + 1 < self.entry_count
            else self.record_count
        )
        return lo, hi

    def validate(self) -> None:
        if self.record_count == 0:
            if self.entry_count != 0:
                raise SchemaError("empty index must have no entries")
            return
        if self.entry_count == 0:
            raise SchemaError("non-empty index must have entries")
        if int(self.start_records[0]) != 0:
            raise SchemaError("first index entry must start at record 0")
        if np.any(np.diff(self.start_records.astype(np.int64)) <= 0):
            raise SchemaError("index entry starts must be strictly increasing")
        if np.any(self.first_keys[:-1] > self.first_keys[1:]):
            raise SchemaError("index first keys must be non-decreasing")
        if int(self.start_records[-1]) >= self.record_count:
            raise SchemaError("last index entry starts beyond record count")

    def candidate_page_span(self, low, high) -> tuple[int, int]:
        """Row span [lo, hi) of the pages that may hold keys in [low, high].

        Purely directory-based: no column data is consulted, so the span is
        page-granular and may over-approximate.
        """
        if self.record_count == 0 or self.entry_count == 0:
            return 0, 0
        # Rows >= low can start in the last page whose first key is < low.
        p_lo = max(int(np.searchsorted(self.first_keys, low, side="left")) - 1, 0)
        # Rows <= high end within the last page whose first key is <= high.
        p_hi = int(np.searchsorted(self.first_keys, high, side="right")) - 1
        if p_hi < 0:
            return 0, 0
        return self.page_bounds(p_lo)[0], self.page_bounds(p_hi)[1]


@dataclass
class DataBlock:
    """A columnar block: equal-length columns over a fixed schema."""

    block_id: int
    schema: Schema
    columns: dict[str, np.ndarray]
    sort_attribute: Optional[str] = None
    index: Optional[SparseClusteredIndex] = None
    permutation: Optional[np.ndarray] = None

    @property
    def record_count(self) -> int:
        first = self.schema.attributes[0].name
        return len(self.columns[first])

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    def validate(self) -> None:
        if set(self.columns) != set(self.schema.names):
            raise SchemaError("columns do not match schema attributes")
        n = self.record_count
        for name in self.schema.names:
            col = self.columns[name]
            if len(col) != n:
                raise SchemaError(f"column {name!r} has {len(col)} of {n} records")
            expect = self.schema.attribute(name).dtype
            if col.dtype.itemsize != expect.itemsize or col.dtype.kind != expect.kind:
                raise SchemaError(
                    f"column {name!r} dtype {col.dtype} != schema {expect}"
                )
        if self.sort_attribute is not None:
            if self.sort_attribute not in self.schema:
                raise SchemaError(f"sort attribute {self.sort_attribute!r} not in schema")
            col = self.columns[self.sort_attribute]
            if n > 1 and np.any(col[:-1] > col[1:]):
                raise SchemaError(f"column {self.sort_attribute!r} is not sorted")
        if self.index is not None:
            if self.sort_attribute is None or self.index.attribute != self.sort_attribute:
                raise SchemaError("index requires a matching sort attribute")
            self.index.validate()
            if self.index.record_count != n:
                raise SchemaError("index record count does not match block")
            col = self.columns[self.sort_attribute]
            starts = self.index.start_records.astype(np.int64)
            if n and np.any(col[starts] != self.index.first_keys):
                raise SchemaError("index keys are not a subsequence of the column")
        if self.permutation is not None and len(self.permutation) != n:
            raise SchemaError("permutation vector length does not match block")

    def project(self, names: Iterable[str]) -> "DataBlock":
        sub = self.schema.subset(names)
        keep_sort = self.sort_attribute if self.sort_attribute in sub.names else None
        return DataBlock(
            block_id=self.block_id,
            schema=sub,
            columns={n: self.columns[n] for n in sub.names},
            sort_attribute=keep_sort,
            index=self.index if keep_sort and self.index is not None else None,
            permutation=self.permutation,
        )

    def checksum(self) -> int:
        """Order-sensitive checksum of the column payloads (torn-read guard)."""
        crc = 0
        for name in self.schema.names:
            crc = zlib.crc32(self.columns[name].tobytes(), crc)
        return crc


def blocks_equal(a: DataBlock, b: DataBlock) -> bool:
    """Column-wise equality: ids, record counts, names, and values."""
    if a.block_id != b.block_id or a.record_count != b.record_count:
        return False
    if a.schema.names != b.schema.names:
        return False
    return all(np.array_equal(a.columns[n], b.columns[n]) for n in a.schema.names)
