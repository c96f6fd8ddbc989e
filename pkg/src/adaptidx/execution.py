"""Job execution: splits, the record reader, and projection widening.

The record reader is where replica switching happens: a split built over an
indexed replica (normal or pseudo) is served by a sparse-index range lookup
that touches only qualifying rows, while unindexed blocks fall back to a full
scan and are offered to the node's Adaptive Indexer afterwards. Map functions
never see the difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .blocks import DataBlock, Schema
from .blockfile import (
    ReadCounter,
    read_block,
    read_column_range,
    read_header,
    read_permutation,
)
from .errors import SchemaError
from .indexer import (
    BUILD,
    COMPLETE,
    AdaptiveIndexer,
    IndexWork,
    OfferOutcome,
    OfferPolicy,
    OfferState,
    SELECTIVITY,
    apply_permutation,
)
from .registry import BlockReplicaInfo, ReplicaRegistry


class ScanKind(Enum):
    INDEX_SCAN = "index_scan"
    FULL_SCAN = "full_scan"


@dataclass(frozen=True)
class Predicate:
    """Closed range selection low <= value <= high on one attribute."""

    attribute: str
    low: object
    high: object

    def validate(self, schema: Schema) -> None:
        attr = schema.attribute(self.attribute)
        lo, hi = attr.coerce(self.low), attr.coerce(self.high)
        if lo > hi:
            raise SchemaError(f"predicate range is empty: {self.low!r} > {self.high!r}")

    def bounds(self, schema: Schema) -> tuple:
        attr = schema.attribute(self.attribute)
        return attr.coerce(self.low), attr.coerce(self.high)

    def mask(self, column: np.ndarray, schema: Schema) -> np.ndarray:
        lo, hi = self.bounds(schema)
        return (column >= lo) & (column <= hi)


@dataclass
class JobSpec:
    job_id: str
    predicate: Predicate
    projection: tuple[str, ...]
    map_fn: Optional[Callable[[dict], Optional[dict]]] = None
    policy: OfferPolicy = field(default_factory=OfferPolicy)
    collect_output: bool = True

    def validate(self, schema: Schema) -> None:
        self.predicate.validate(schema)
        for name in self.projection:
            if name not in schema:
                raise SchemaError(f"projected attribute {name!r} not in schema")


def invisible_projection_columns(
    job: JobSpec, will_offer: bool, schema: Schema
) -> tuple[str, ...]:
    """Columns to read for a full scan, widened for blocks headed to the indexer.

    Non-offered blocks read the job's projection plus the predicate attribute;
    offered blocks read the whole schema so the index replica comes out
    complete. The map function still receives only the projected attributes.
    """
    if will_offer:
        return schema.names
    needed = set(job.projection) | {job.predicate.attribute}
    return tuple(n for n in schema.names if n in needed)


@dataclass(frozen=True)
class BlockRef:
    block_id: int
    replica: BlockReplicaInfo


@dataclass(frozen=True)
class InputSplit:
    node_id: int
    blocks: tuple[BlockRef, ...]
    scan_kind: ScanKind

    def __post_init__(self) -> None:
        if self.scan_kind == ScanKind.FULL_SCAN and len(self.blocks) != 1:
            raise SchemaError("full-scan splits contain exactly one block")
        if self.scan_kind == ScanKind.INDEX_SCAN and not self.blocks:
            raise SchemaError("index-scan splits contain at least one block")
        for ref in self.blocks:
            if ref.replica.node_id != self.node_id:
                raise SchemaError(
                    f"block {ref.block_id} replica lives on node {ref.replica.node_id}, "
                    f"split is for node {self.node_id}"
                )


@dataclass
class TaskResult:
    node_id: int
    scan_kind: ScanKind
    block_ids: tuple[int, ...]
    wave_index: int = -1
    records_read: int = 0
    records_emitted: int = 0
    bytes_read: int = 0
    blocks_offered: int = 0
    blocks_indexed: int = 0
    blocks_rejected: int = 0
    completions_skipped: int = 0
    remote_column_reads: int = 0
    elapsed: float = 0.0
    failed: bool = False
    error: str = ""
    emitted: list[dict[str, np.ndarray]] = field(default_factory=list)
    emitted_rows: list[dict] = field(default_factory=list)


@dataclass
class TaskContext:
    """Per-node execution context handed to every task of a job."""

    node_id: int
    node_root: Path
    schema: Schema
    registry: ReplicaRegistry
    indexer: Optional[AdaptiveIndexer]
    offer_state: Optional[OfferState]
    will_offer_blocks: Optional[frozenset[int]]  # pre-picked blocks (offer-rate mode)
    projection_mode: str = "invisible"  # or "lazy"


def _emit(
    job: JobSpec,
    result: TaskResult,
    columns: dict[str, np.ndarray],
    schema: Schema,
    count: int,
) -> None:
    """Feed `count` selected rows to the map function and collect its output."""
    proj = [n for n in schema.names if n in set(job.projection)]
    if job.map_fn is None:
        result.records_emitted += count
        if job.collect_output and count:
            result.emitted.append({name: columns[name] for name in proj})
        return
    for i in range(count):
        record = {name: columns[name][i] for name in proj}
        out = job.map_fn(record)
        if out is not None:
            result.records_emitted += 1
            if job.collect_output:
                result.emitted_rows.append(out)


def _refine_row_range(f, header, lo, hi, counter) -> tuple[int, int]:
    """Exact qualifying row span [r_lo, r_hi) on a sorted, indexed block.

    Binary search over the page directory narrows the span to at most two
    boundary pages, which are the only index-column pages fetched.
    """
    idx = header.index
    if idx is None or idx.record_count == 0:
        return 0, 0
    keys = idx.first_keys
    attr = idx.attribute

    q = int(np.searchsorted(keys, lo, side="left"))
    if q == 0:
        r_lo = 0
    else:
        page = q - 1
        p_start, p_end = idx.page_bounds(page)
        vals = read_column_range(f, header, attr, p_start, p_end, counter)
        r_lo = p_start + int(np.searchsorted(vals, lo, side="left"))

    p = int(np.searchsorted(keys, hi, side="right")) - 1
    if p < 0:
        return 0, 0
    p_start, p_end = idx.page_bounds(p)
    vals = read_column_range(f, header, attr, p_start, p_end, counter)
    r_hi = p_start + int(np.searchsorted(vals, hi, side="right"))
    return r_lo, max(r_hi, r_lo)


def _scan_indexed_block(
    ref: BlockRef, job: JobSpec, ctx: TaskContext, result: TaskResult, counter: ReadCounter
) -> None:
    with open(ref.replica.path, "rb") as f:
        header = read_header(f, counter)
        lo, hi = job.predicate.bounds(header.schema)
        r_lo, r_hi = _refine_row_range(f, header, lo, hi, counter)
        count = r_hi - r_lo
        result.records_read += count

        available = set(header.schema.names)
        wanted = [n for n in ctx.schema.names if n in set(job.projection)]
        missing = [n for n in wanted if n not in available]
        columns = {
            name: read_column_range(f, header, name, r_lo, r_hi, counter)
            for name in wanted
            if name in available
        }
        if not missing:
            _emit(job, result, columns, ctx.schema, count)
            return

        # Partial pseudo replica: serve missing attributes from the normal
        # replica, realigned on the fly with the stored permutation vector.
        perm = read_permutation(f, header, counter)

    normal = _normal_replica_for(ctx, ref.block_id)
    raw_missing: dict[str, np.ndarray] = {}
    with open(normal.path, "rb") as nf:
        nheader = read_header(nf, counter)
        for name in missing:
            raw_missing[name] = read_column_range(
                nf, nheader, name, 0, nheader.record_count, counter
            )
    if normal.node_id != ctx.node_id:
        result.remote_column_reads += len(missing)

    for name in missing:
        aligned = apply_permutation(perm, raw_missing[name])
        columns[name] = aligned[r_lo:r_hi]
    columns = {n: columns[n] for n in wanted}
    _emit(job, result, columns, ctx.schema, count)

    # Incremental completion: append the freshly read attributes to the
    # partial replica, but only when the normal replica was local.
    if normal.node_id != ctx.node_id:
        result.completions_skipped += 1
        return
    if ctx.indexer is not None:
        sub = ctx.registry.schema.subset(missing)
        work = IndexWork(
            kind=COMPLETE,
            block_id=ref.block_id,
            attribute=ref.replica.indexed_attribute,
            schema=sub,
            columns={n: raw_missing[n] for n in sub.names},
            checksum=DataBlock(ref.block_id, sub, {n: raw_missing[n] for n in sub.names}).checksum(),
            perm=perm,
        )
        if not ctx.indexer.offer(work):
            result.completions_skipped += 1


def _normal_replica_for(ctx: TaskContext, block_id: int) -> BlockReplicaInfo:
    normals = ctx.registry.normal_replicas(block_id)
    local = [r for r in normals if r.node_id == ctx.node_id]
    if local:
        return local[0]
    return min(normals, key=lambda r: r.node_id)


def _scan_full_block(
    ref: BlockRef, job: JobSpec, ctx: TaskContext, result: TaskResult, counter: ReadCounter
) -> None:
    policy = job.policy
    if policy.mode == SELECTIVITY:
        candidate = True
    else:
        candidate = ctx.will_offer_blocks is not None and ref.block_id in ctx.will_offer_blocks

    if ctx.projection_mode == "lazy":
        read_cols = invisible_projection_columns(job, False, ctx.schema)
    else:
        read_cols = invisible_projection_columns(job, candidate, ctx.schema)

    block = read_block(ref.replica.path, read_cols, counter=counter)
    n = block.record_count
    result.records_read += n

    mask = job.predicate.mask(block.columns[job.predicate.attribute], ctx.schema)
    qualifying = int(mask.sum())
    fraction = qualifying / n if n else 0.0
    selected = {
        name: block.columns[name][mask]
        for name in block.schema.names
        if name in set(job.projection)
    }
    _emit(job, result, selected, ctx.schema, qualifying)

    if not candidate or ctx.indexer is None:
        return
    if policy.mode == SELECTIVITY and ctx.offer_state is not None:
        decision = ctx.offer_state.decide(fraction)
        if decision != OfferOutcome.ACCEPTED:
            return

    # Hand over only after the map function consumed the block; the checksum
    # lets the builder assert nothing mutated in between.
    offer_schema = ctx.schema.subset(read_cols) if len(read_cols) < len(ctx.schema.names) else ctx.schema
    work = IndexWork(
        kind=BUILD,
        block_id=ref.block_id,
        attribute=job.predicate.attribute,
        schema=offer_schema,
        columns={name: block.columns[name] for name in offer_schema.names},
        checksum=DataBlock(ref.block_id, offer_schema, block.columns).checksum(),
    )
    result.blocks_offered += 1
    if ctx.indexer.offer(work):
        result.blocks_indexed += 1
    else:
        result.blocks_rejected += 1


def record_reader_scan(split: InputSplit, job: JobSpec, ctx: TaskContext) -> TaskResult:
    """Execute one map task over its split; returns the task's metrics.

    Index-scan splits do a sparse-index range lookup per block and read only
    the qualifying rows of the projected columns; full-scan splits read the
    whole block (widened per the projection mode), filter, and then offer the
    block for indexing when the policy admits it.
    """
    result = TaskResult(
        node_id=split.node_id,
        scan_kind=split.scan_kind,
        block_ids=tuple(ref.block_id for ref in split.blocks),
    )
    counter = ReadCounter()
    for ref in split.blocks:
        if split.scan_kind == ScanKind.INDEX_SCAN:
            _scan_indexed_block(ref, job, ctx, result, counter)
        else:
            _scan_full_block(ref, job, ctx, result, counter)
    result.bytes_read = counter.bytes_read
    return result
