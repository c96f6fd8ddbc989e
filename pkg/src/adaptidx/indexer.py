"""Adaptive Indexer: builds and persists block indexes as a job side effect.

Per node there is one indexer instance shared by all map tasks: a bounded
build queue feeding an index-builder thread, and a bounded write queue feeding
an index-writer thread. Offering a block never blocks the producing task; a
full queue rejects the block and a later job gets another chance at it.

Index building sorts the target attribute (stable), derives the
old-position -> new-position permutation vector, reorders every other present
column with it, and cuts a sparse page directory over the sorted column.
"""

from __future__ import annotations

import math
import queue
import threading
import uuid
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .blocks import DataBlock, Schema, SparseClusteredIndex
from .blockfile import publish_block_once, pseudo_replica_path, pseudo_temp_path
from .errors import AdaptidxError, SchemaError
from .registry import BlockReplicaInfo, ReplicaKind, ReplicaRegistry

DEFAULT_PAGE_SIZE = 1024
DEFAULT_QUEUE_CAPACITY = 4


def apply_permutation(perm: np.ndarray, column: np.ndarray) -> np.ndarray:
    """Reorder a column so that out[perm[i]] = column[i]."""
    out = np.empty_like(column)
    out[perm.astype(np.int64)] = column
    return out


def invert_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm.astype(np.int64)] = np.arange(len(perm), dtype=perm.dtype)
    return inv


def build_index(
    block: DataBlock, attribute: str, page_size_records: int = DEFAULT_PAGE_SIZE
) -> tuple[DataBlock, np.ndarray, SparseClusteredIndex]:
    """Sort a block on `attribute`; returns (sorted block, perm, sparse index).

    The sort is stable, so equal keys keep their original relative order and
    the permutation vector is deterministic. Works on partial blocks too: any
    column present in the block is realigned.
    """
    if attribute not in block.schema:
        raise SchemaError(f"attribute {attribute!r} not present in block {block.block_id}")
    column = block.columns[attribute]
    order = np.argsort(column, kind="stable")
    perm = np.empty(len(column), dtype="<u8")
    perm[order] = np.arange(len(column), dtype="<u8")
    sorted_columns = {name: block.columns[name].take(order) for name in block.schema.names}
    index = SparseClusteredIndex.from_sorted_column(
        attribute, sorted_columns[attribute], page_size_records
    )
    sorted_block = DataBlock(
        block_id=block.block_id,
        schema=block.schema,
        columns=sorted_columns,
        sort_attribute=attribute,
        index=index,
    )
    return sorted_block, perm, index


# -- offer policies ---------------------------------------------------------

OFFER_RATE = "offer_rate"
SELECTIVITY = "selectivity"


class OfferOutcome(Enum):
    ACCEPTED = "accepted"
    REJECTED_QUOTA = "rejected_quota"
    REJECTED_SELECTIVITY = "rejected_selectivity"
    REJECTED_QUEUE_FULL = "rejected_queue_full"


@dataclass
class OfferPolicy:
    """Which scanned blocks get handed to the Adaptive Indexer.

    offer_rate: at most ceil(rho * blocks in the job), spread evenly over the
    scanned blocks (one out of every 1/rho, generalised to exact quotas).
    selectivity: blocks whose qualifying fraction clears the threshold
    (>= by default; <= when index_low_fraction is set).
    """

    mode: str = OFFER_RATE
    rho: float = 0.1
    selectivity_threshold: float = 0.8
    index_low_fraction: bool = False


class OfferState:
    """Per-job offer bookkeeping, shared by all of the job's map tasks."""

    def __init__(self, policy: OfferPolicy, n_blocks_in_job: int, expected_scans: int):
        self.policy = policy
        self.quota = min(
            math.ceil(policy.rho * n_blocks_in_job),
            max(expected_scans, 0),
        )
        self.expected_scans = max(expected_scans, 1)
        self._scanned = 0
        self._accepted = 0
        self._lock = threading.Lock()

    def decide(self, qualifying_fraction: Optional[float] = None) -> OfferOutcome:
        """Policy decision for the next scanned block (queue not consulted)."""
        if self.policy.mode == SELECTIVITY:
            if qualifying_fraction is None:
                raise AdaptidxError("selectivity policy needs the qualifying fraction")
            ok = (
                qualifying_fraction <= self.policy.selectivity_threshold
                if self.policy.index_low_fraction
                else qualifying_fraction >= self.policy.selectivity_threshold
            )
            return OfferOutcome.ACCEPTED if ok else OfferOutcome.REJECTED_SELECTIVITY
        with self._lock:
            self._scanned += 1
            if self._accepted >= self.quota:
                return OfferOutcome.REJECTED_QUOTA
            s, q, e = self._scanned, self.quota, self.expected_scans
            if (s * q) // e > ((s - 1) * q) // e:
                self._accepted += 1
                return OfferOutcome.ACCEPTED
            return OfferOutcome.REJECTED_QUOTA

    @property
    def accepted(self) -> int:
        with self._lock:
            return self._accepted


# -- pseudo-replica persistence ---------------------------------------------


class WriteResult(Enum):
    WON = "won"
    LOST = "lost"
    FAILED = "failed"


def write_pseudo_replica(
    sorted_block: DataBlock,
    node_root: Path | str,
    node_id: int,
    registry: ReplicaRegistry,
    nonce: Optional[str] = None,
) -> WriteResult:
    """Persist an indexed block as a pseudo replica and register it.

    The replica is written to a temp file and hard-linked into place, so with
    concurrent writers for the same (block, attribute) exactly one wins; the
    loser removes its temp file and reports LOST without touching the
    registry. Storage failures abandon the block silently (FAILED): indexing
    must never jeopardize the job that piggybacked it.
    """
    attribute = sorted_block.sort_attribute
    if attribute is None or sorted_block.index is None:
        raise SchemaError("pseudo replicas require a sorted, indexed block")
    nonce = nonce or uuid.uuid4().hex[:12]
    final = pseudo_replica_path(node_root, sorted_block.block_id, attribute)
    temp = pseudo_temp_path(node_root, sorted_block.block_id, attribute, nonce)
    try:
        won = publish_block_once(sorted_block, final, temp)
    except OSError:
        return WriteResult.FAILED
    if not won:
        return WriteResult.LOST

    partial = set(sorted_block.schema.names) != set(registry.schema.names)
    info = BlockReplicaInfo(
        node_id=node_id,
        kind=ReplicaKind.PARTIAL_PSEUDO if partial else ReplicaKind.PSEUDO,
        indexed_attribute=attribute,
        available_attributes=frozenset(sorted_block.schema.names),
        path=str(final),
        has_permutation_vector=sorted_block.permutation is not None,
    )
    registry.register_index(sorted_block.block_id, info)
    return WriteResult.WON


# -- the per-node indexer pipeline -------------------------------------------

BUILD = "build"
COMPLETE = "complete"


@dataclass
class IndexWork:
    """One unit handed from a map task to a node's Adaptive Indexer."""

    kind: str  # BUILD (sort + index the columns) or COMPLETE (append to a partial)
    block_id: int
    attribute: str
    schema: Schema
    columns: dict[str, np.ndarray]
    checksum: int
    perm: Optional[np.ndarray] = None  # COMPLETE: stored permutation to align with

    def block(self) -> DataBlock:
        return DataBlock(block_id=self.block_id, schema=self.schema, columns=self.columns)


@dataclass
class IndexerStats:
    enqueued: int = 0
    rejected_full: int = 0
    built: int = 0
    written: int = 0
    completed: int = 0
    lost_races: int = 0
    failures: int = 0


class AdaptiveIndexer:
    """One per node: build queue -> builder thread -> write queue -> writer thread."""

    def __init__(
        self,
        node_id: int,
        node_root: Path | str,
        registry: ReplicaRegistry,
        build_capacity: int = DEFAULT_QUEUE_CAPACITY,
        write_capacity: int = DEFAULT_QUEUE_CAPACITY,
        page_size_records: int = DEFAULT_PAGE_SIZE,
    ) -> None:
        self.node_id = node_id
        self.node_root = Path(node_root)
        self.registry = registry
        self.page_size_records = page_size_records
        self.stats = IndexerStats()
        self._build_queue: queue.Queue = queue.Queue(maxsize=build_capacity)
        self._write_queue: queue.Queue = queue.Queue(maxsize=write_capacity)
        self._pending = 0
        self._cond = threading.Condition()
        self._stats_lock = threading.Lock()
        self._closed = False
        self._builder = threading.Thread(
            target=self._build_loop, name=f"index-builder-{node_id}", daemon=True
        )
        self._writer = threading.Thread(
            target=self._write_loop, name=f"index-writer-{node_id}", daemon=True
        )
        self._builder.start()
        self._writer.start()

    # producer side

    def offer(self, work: IndexWork) -> bool:
        """Non-blocking enqueue; False means the build queue was full."""
        with self._cond:
            if self._closed:
                return False
            try:
                self._build_queue.put_nowait(work)
            except queue.Full:
                with self._stats_lock:
                    self.stats.rejected_full += 1
                return False
            self._pending += 1
        with self._stats_lock:
            self.stats.enqueued += 1
        return True

    def drain(self) -> None:
        """Block until every enqueued work item has been fully processed."""
        with self._cond:
            self._cond.wait_for(lambda: self._pending == 0)

    def close(self) -> None:
        with self._cond:
            if self._closed:
                return
            self._closed = True
        self._build_queue.put(None)

    # worker side

    def _finish_one(self) -> None:
        with self._cond:
            self._pending -= 1
            if self._pending == 0:
                self._cond.notify_all()

    def _build_loop(self) -> None:
        while True:
            work = self._build_queue.get()
            if work is None:
                self._write_queue.put(None)
                return
            try:
                built = self._build_one(work)
            except Exception:
                with self._stats_lock:
                    self.stats.failures += 1
                self._finish_one()
                continue
            self._write_queue.put(built)

    def _build_one(self, work: IndexWork) -> tuple[IndexWork, DataBlock]:
        block = work.block()
        if block.checksum() != work.checksum:
            raise AdaptidxError(
                f"block {work.block_id} changed between hand-off and indexing"
            )
        if work.kind == BUILD:
            sorted_block, perm, _ = build_index(block, work.attribute, self.page_size_records)
            if set(block.schema.names) != set(self.registry.schema.names):
                sorted_block.permutation = perm
            with self._stats_lock:
                self.stats.built += 1
            return work, sorted_block
        # COMPLETE: align the new columns with the stored permutation.
        aligned = {
            name: apply_permutation(work.perm, col) for name, col in work.columns.items()
        }
        return work, DataBlock(block_id=work.block_id, schema=work.schema, columns=aligned)

    def _write_loop(self) -> None:
        while True:
            item = self._write_queue.get()
            if item is None:
                return
            work, block = item
            try:
                self._write_one(work, block)
            except Exception:
                with self._stats_lock:
                    self.stats.failures += 1
            finally:
                self._finish_one()

    def _write_one(self, work: IndexWork, block: DataBlock) -> None:
        if work.kind == BUILD:
            result = write_pseudo_replica(block, self.node_root, self.node_id, self.registry)
            with self._stats_lock:
                if result == WriteResult.WON:
                    self.stats.written += 1
                elif result == WriteResult.LOST:
                    self.stats.lost_races += 1
                else:
                    self.stats.failures += 1
        else:
            from .lazy import append_aligned_columns

            changed = append_aligned_columns(
                self.node_root, self.node_id, self.registry, work.block_id,
                work.attribute, block,
            )
            with self._stats_lock:
                if changed:
                    self.stats.completed += 1
