"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import contextlib
import math
import time

import numpy as np
import pytest

from adaptidx.blocks import Schema, blocks_equal
from adaptidx.blockfile import read_block, read_header, write_block
from adaptidx.cluster import Cluster, ClusterConfig
from adaptidx.execution import JobSpec, Predicate, ScanKind, _refine_row_range
from adaptidx.indexer import (
    OFFER_RATE,
    OfferPolicy,
    build_index,
    write_pseudo_replica,
)
from adaptidx.registry import BlockReplicaInfo, ReplicaKind, ReplicaRegistry
from adaptidx.runner import WorkloadRunner, derive_eager_timing
from adaptidx.scheduler import plan_job
from adaptidx.workloads import (
    USERVISITS_SCHEMA,
    gen_synthetic,
    gen_uservisits_like,
    search_word_predicate,
)

from conftest import make_block


@contextlib.contextmanager
def criterion(number: int, title: str):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"\nCRITERION {number:02d} FAIL: {title} ({time.time() - start:.1f}s)", flush=True)
        raise
    print(f"\nCRITERION {number:02d} PASS: {title} ({time.time() - start:.1f}s)", flush=True)


def _canonical(columns: dict[str, np.ndarray], proj: tuple[str, ...]) -> np.ndarray:
    rows = np.stack([columns[n].astype("f8") for n in proj], axis=1)
    return rows[np.lexsort(rows.T[::-1])] if len(rows) else rows


def _emitted(outcome, proj):
    chunks = [c for r in outcome.results for c in r.emitted]
    if not chunks:
        return np.empty((0, len(proj)))
    return _canonical({n: np.concatenate([c[n] for c in chunks]) for n in proj}, proj)


# -- criterion 1 ---------------------------------------------------------------


@pytest.fixture(scope="module")
def million_row_dataset():
    return gen_synthetic(1_000_000, seed=1001)


def test_criterion_01_scan_equivalence(tmp_path, million_row_dataset):
    with criterion(1, "scan equivalence across full, mixed, and indexed runs (exact)"):
        dataset = million_row_dataset
        config = ClusterConfig(
            node_count=4,
            slots_per_node=2,
            replication_factor=2,
            block_records=25_000,  # 40 blocks
            page_size_records=1024,
            build_queue_capacity=64,
            write_queue_capacity=64,
        )
        cluster = Cluster(config, tmp_path / "c1")
        registry = cluster.upload_dataset(dataset)
        assert registry.block_count == 40
        runner = WorkloadRunner(cluster)

        rng = np.random.default_rng(4242)
        predicates = []
        for i in range(20):
            attr = ("a", "b", "c", "d", "e", "f")[i % 6]
            if attr == "a":
                lo = int(rng.integers(1, 10))
                predicates.append(Predicate("a", lo, lo))
            else:
                lo = float(rng.uniform(0.0, 0.85))
                predicates.append(Predicate(attr, lo, lo + float(rng.uniform(0.001, 0.15))))

        proj = ("a", "b", "d")

        def oracle(p: Predicate) -> np.ndarray:
            col = dataset.columns[p.attribute]
            mask = (col >= p.low) & (col <= p.high)
            return _canonical({n: dataset.columns[n][mask] for n in proj}, proj)

        expected = {i: oracle(p) for i, p in enumerate(predicates)}

        def run_all(tag: str):
            for i, p in enumerate(predicates):
                job = JobSpec(f"{tag}{i}", p, proj, policy=OfferPolicy(rho=0.0))
                outcome = runner.run_job(job)
                assert not outcome.metrics.failed, outcome.metrics.error
                assert np.array_equal(_emitted(outcome, proj), expected[i]), (tag, i)
                yield outcome.metrics

        # full scans only
        list(run_all("full"))
        # partially index every predicate attribute, then re-run (mixed)
        for attr in "abcdef":
            runner.run_job(
                JobSpec(f"warm_{attr}", Predicate(attr, 0, 0), proj, policy=OfferPolicy(rho=0.5))
            )
        mixed = list(run_all("mixed"))
        assert any(m.index_scan_tasks and m.full_scan_tasks for m in mixed)
        # converge every attribute, then re-run (fully indexed)
        for attr in "abcdef":
            runner.run_job(
                JobSpec(f"conv_{attr}", Predicate(attr, 0, 0), proj, policy=OfferPolicy(rho=1.0))
            )
        indexed = list(run_all("indexed"))
        assert all(m.full_scan_tasks == 0 for m in indexed)
        cluster.close()


# -- criteria 2 and 3 -----------------------------------------------------------


def _convergence_sequence(tmp_path, rho: float):
    """11 same-attribute jobs at a constant rate on a 40-block dataset."""
    config = ClusterConfig(
        node_count=10,
        slots_per_node=1,
        replication_factor=3,
        block_records=500,
        page_size_records=64,
        build_queue_capacity=1000,  # queue capacity set high
        write_queue_capacity=1000,
        per_byte_cost=1e-6,
        per_block_index_cost=0.012,
    )
    cluster = Cluster(config, tmp_path / f"conv_{rho}")
    cluster.upload_dataset(gen_synthetic(20_000, seed=7))  # 40 blocks
    runner = WorkloadRunner(cluster)
    rows = []
    for j in range(1, 12):
        lo = 0.005 * j
        job = JobSpec(
            f"rho{rho}_j{j}",
            Predicate("b", lo, lo + 0.002),
            cluster.registry.schema.names,  # full projection
            policy=OfferPolicy(mode=OFFER_RATE, rho=rho),
            collect_output=False,
        )
        metrics = runner.run_job(job).metrics
        assert not metrics.failed, metrics.error
        rows.append(metrics)
    cal = runner.calibration
    cluster.close()
    return rows, cal


@pytest.fixture(scope="module")
def convergence_runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("convergence")
    return {rho: _convergence_sequence(base, rho) for rho in (0.1, 0.25, 0.5, 1.0)}


def test_criterion_02_convergence_counting(convergence_runs):
    with criterion(2, "constant-rate sequences converge in exactly ceil(1/rho) jobs (exact)"):
        for rho, (rows, _) in convergence_runs.items():
            n_blocks = rows[0].blocks_total
            quota = math.ceil(rho * n_blocks)
            expected_jobs = math.ceil(1 / rho)
            converged_at = None
            for j, metrics in enumerate(rows, start=1):
                assert metrics.blocks_indexed_after == min(j * quota, n_blocks), (rho, j)
                if metrics.blocks_indexed_after == n_blocks and converged_at is None:
                    converged_at = j
            assert converged_at == expected_jobs, (rho, converged_at)
            # stays complete for the rest of the sequence
            assert all(m.blocks_indexed_after == n_blocks for m in rows[converged_at:])


def test_criterion_03_cost_model_fidelity(convergence_runs):
    with criterion(3, "cost model within one wave's t_idxOverhead of simulation"):
        for rho, (rows, cal) in convergence_runs.items():
            tolerance = cal.t_idx_overhead
            assert tolerance is not None and tolerance > 0
            for metrics in rows:
                assert metrics.predicted_seconds is not None, (rho, metrics.job_id)
                gap = abs(metrics.predicted_seconds - metrics.simulated_seconds)
                assert gap <= tolerance + 1e-12, (rho, metrics.job_id, gap, tolerance)


# -- criterion 4 ----------------------------------------------------------------


def test_criterion_04_eager_progression(tmp_path):
    with criterion(4, "eager indexing converges in 4 jobs from rho=0.1, rate reaching 1"):
        found = derive_eager_timing(tmp_path / "eager", initial_rho=0.1, target_jobs=4)
        rhos = found["rho_sequence"]
        assert found["jobs_to_converge"] == 4
        assert rhos[0] == pytest.approx(0.1)
        assert all(b >= a for a, b in zip(rhos, rhos[1:]))
        assert rhos[3] == pytest.approx(1.0)


# -- criterion 5 ----------------------------------------------------------------


def test_criterion_05_index_permutation_properties(tmp_path):
    with criterion(5, "1000-block index/permutation property suite (exact)"):
        schema = Schema.of(("d", "int64"), ("x", "float64"), ("s", "string", 6))
        rng = np.random.default_rng(555)
        path = tmp_path / "blk"
        for case in range(1000):
            rows = int(rng.integers(1, 10_001))
            block = make_block(schema, rows, seed=int(rng.integers(0, 2**31)))
            sorted_block, perm, index = build_index(block, "d", page_size_records=256)

            col = sorted_block.columns["d"]
            assert np.all(col[:-1] <= col[1:])  # sortedness
            assert np.array_equal(np.sort(perm), np.arange(rows))  # bijectivity
            for name in schema.names:  # per-column alignment via perm
                assert np.array_equal(
                    sorted_block.columns[name][perm.astype(np.int64)],
                    block.columns[name],
                )
            index.validate()

            # sparse range lookup == linear filter, through the real file path
            if case % 5 == 0:
                write_block(sorted_block, path)
                lo = int(rng.integers(-1100, 1100))
                hi = lo + int(rng.integers(0, 800))
                with open(path, "rb") as f:
                    header = read_header(f)
                    r_lo, r_hi = _refine_row_range(f, header, lo, hi, None)
                expected = np.nonzero((col >= lo) & (col <= hi))[0]
                assert np.array_equal(np.arange(r_lo, r_hi), expected)


# -- criterion 6 ----------------------------------------------------------------


def test_criterion_06_writer_race(tmp_path):
    with criterion(6, "100 writer races: exactly one file and one registry entry"):
        import threading

        schema = Schema.of(("d", "int64"), ("x", "float64"))
        registry = ReplicaRegistry(schema, replication_factor=1)
        node_root = tmp_path / "node_0"
        for rep in range(100):
            registry.add_block(
                rep,
                128,
                [BlockReplicaInfo(0, ReplicaKind.NORMAL, None, frozenset(schema.names), "n")],
            )
            block = make_block(schema, 128, seed=rep, block_id=rep)
            sorted_block, _, _ = build_index(block, "d", 32)
            results = []
            barrier = threading.Barrier(2)

            def contend(nonce):
                barrier.wait()
                results.append(
                    write_pseudo_replica(sorted_block, node_root, 0, registry, nonce)
                )

            threads = [
                threading.Thread(target=contend, args=(f"w{rep}_{k}",)) for k in range(2)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

            assert sorted(r.value for r in results) == ["lost", "won"], rep
            replica_dir = node_root / "pseudo" / f"blk_{rep}"
            assert [p.name for p in replica_dir.iterdir()] == ["d"], rep
            entries = [r for r in registry.replicas(rep) if r.indexed_attribute == "d"]
            assert len(entries) == 1, rep


# -- criterion 7 ----------------------------------------------------------------


def test_criterion_07_scheduling_rule_fidelity(tmp_path):
    with criterion(7, "every unindexed block lands on the argmin-index-count node (exact)"):
        config = ClusterConfig(
            node_count=6,
            slots_per_node=2,
            replication_factor=3,
            block_records=500,
            page_size_records=64,
            build_queue_capacity=1000,
            write_queue_capacity=1000,
        )
        cluster = Cluster(config, tmp_path / "c7")
        cluster.upload_dataset(gen_synthetic(24_000, seed=77))  # 48 blocks
        runner = WorkloadRunner(cluster)
        # create an uneven pseudo-replica landscape first
        for j, rho in enumerate((0.3, 0.2), start=1):
            runner.run_job(
                JobSpec(
                    f"seed{j}",
                    Predicate("b", 0.01 * j, 0.01 * j + 0.004),
                    ("b",),
                    policy=OfferPolicy(rho=rho),
                )
            )
        registry = cluster.registry
        job = JobSpec("replay", Predicate("b", 0.5, 0.51), ("b",), policy=OfferPolicy(rho=0.0))
        assignments = plan_job(job, registry, max_blocks_per_split=config.max_blocks_per_split)

        planned: dict[int, int] = {}
        seen_blocks = []
        for a in assignments:
            if a.split.scan_kind != ScanKind.FULL_SCAN:
                for ref in a.split.blocks:
                    assert ref.replica.node_id == a.node_id  # locality
                continue
            block_id = a.split.blocks[0].block_id
            seen_blocks.append(block_id)
            candidates = {r.node_id for r in registry.normal_replicas(block_id)}
            assert a.node_id in candidates  # locality
            scores = {
                n: (registry.pseudo_count(n, "b") + planned.get(n, 0), n)
                for n in candidates
            }
            assert scores[a.node_id] == min(scores.values()), block_id  # argmin + tie-break
            planned[a.node_id] = planned.get(a.node_id, 0) + 1
        assert seen_blocks == sorted(seen_blocks)  # documented greedy order
        assert seen_blocks, "expected unindexed blocks to replay"
        cluster.close()


# -- criterion 8 ----------------------------------------------------------------


def test_criterion_08_io_accounting(tmp_path):
    with criterion(8, "fully-indexed bytes < 5% of full-scan bytes at 0.2% selectivity"):
        rows = 1_048_576  # four 256k-record blocks
        dataset = gen_synthetic(rows, seed=808)
        config = ClusterConfig(
            node_count=2,
            slots_per_node=2,
            replication_factor=2,
            block_records=262_144,
            page_size_records=1024,
            build_queue_capacity=16,
            write_queue_capacity=16,
        )
        cluster = Cluster(config, tmp_path / "c8")
        cluster.upload_dataset(dataset)
        runner = WorkloadRunner(cluster)
        proj = cluster.registry.schema.names  # full projection

        col = dataset.columns["b"]
        lo, hi = 0.4, 0.402
        fraction = ((col >= lo) & (col <= hi)).mean()
        assert 0.0015 < fraction < 0.0025  # ~0.2% qualifying

        full = runner.run_job(
            JobSpec("full", Predicate("b", lo, hi), proj, policy=OfferPolicy(rho=0.0),
                    collect_output=False)
        ).metrics
        runner.run_job(
            JobSpec("conv", Predicate("b", 0.9, 0.9004), proj, policy=OfferPolicy(rho=1.0),
                    collect_output=False)
        )
        indexed = runner.run_job(
            JobSpec("idx", Predicate("b", lo, hi), proj, policy=OfferPolicy(rho=0.0),
                    collect_output=False)
        ).metrics
        assert indexed.full_scan_tasks == 0
        ratio = indexed.bytes_read / full.bytes_read
        assert ratio < 0.05, ratio
        cluster.close()


# -- criterion 9 ----------------------------------------------------------------


def test_criterion_09_invisible_projection_overhead_shape(tmp_path):
    with criterion(9, "offer overhead shrinks as the projected byte share grows"):
        rows = 20_000
        dataset = gen_uservisits_like(rows, seed=909)
        low, high = search_word_predicate(start=120, words=2)
        projections = [
            ("country_code",),  # smallest single attribute: maximum overhead
            ("country_code", "language_code"),
            ("country_code", "language_code", "duration"),
            ("country_code", "language_code", "duration", "source_ip"),
            ("country_code", "language_code", "duration", "source_ip", "user_agent"),
            ("country_code", "language_code", "duration", "source_ip", "user_agent", "dest_url"),
        ]

        def byte_share(proj):
            width = sum(USERVISITS_SCHEMA.attribute(n).item_size for n in proj)
            return width / USERVISITS_SCHEMA.row_width

        overheads = []
        for i, proj in enumerate(projections):
            bytes_by_rate = {}
            for rho in (0.0, 0.25):
                config = ClusterConfig(
                    node_count=2,
                    slots_per_node=2,
                    replication_factor=2,
                    block_records=2_000,
                    page_size_records=256,
                    build_queue_capacity=64,
                    write_queue_capacity=64,
                )
                cluster = Cluster(config, tmp_path / f"c9_{i}_{rho}")
                cluster.upload_dataset(dataset)
                runner = WorkloadRunner(cluster)
                metrics = runner.run_job(
                    JobSpec(
                        f"p{i}",
                        Predicate("search_word", low, high),
                        proj,
                        policy=OfferPolicy(rho=rho),
                        collect_output=False,
                    )
                ).metrics
                assert not metrics.failed, metrics.error
                bytes_by_rate[rho] = metrics.bytes_read
                cluster.close()
            overhead = (bytes_by_rate[0.25] - bytes_by_rate[0.0]) / bytes_by_rate[0.0]
            overheads.append(overhead)

        shares = [byte_share(p) for p in projections]
        assert all(b > a for a, b in zip(shares, shares[1:]))  # shares really grow
        assert all(
            later <= earlier + 1e-12 for earlier, later in zip(overheads, overheads[1:])
        ), overheads
        assert overheads[0] == max(overheads)
        assert overheads[0] > 0


# -- criterion 10 ----------------------------------------------------------------


def test_criterion_10_lazy_projection_equivalence(tmp_path):
    with criterion(10, "completed lazy replicas equal full index builds, vectors dropped"):
        config = ClusterConfig(
            node_count=3,
            slots_per_node=2,
            replication_factor=2,
            block_records=500,
            page_size_records=64,
            build_queue_capacity=64,
            write_queue_capacity=64,
            projection_mode="lazy",
        )
        cluster = Cluster(config, tmp_path / "c10")
        cluster.upload_dataset(gen_synthetic(6_000, seed=1010))
        runner = WorkloadRunner(cluster)
        schema = cluster.registry.schema

        # projections jointly cover the schema; predicate attribute is d
        sequence = [("b",), ("c", "e"), ("a", "f")]
        for j, proj in enumerate(sequence, start=1):
            metrics = runner.run_job(
                JobSpec(
                    f"lazy{j}",
                    Predicate("d", 0.0, 1.0),
                    proj,
                    policy=OfferPolicy(rho=1.0 if j == 1 else 0.0),
                )
            ).metrics
            assert not metrics.failed, metrics.error
        cluster.drain_indexers()

        registry = cluster.registry
        checked = 0
        for block_id in registry.block_ids:
            info = registry.find_index(block_id, "d")
            assert info is not None
            assert info.kind == ReplicaKind.PSEUDO, block_id  # upgraded
            assert not info.has_permutation_vector
            replica = read_block(info.path)
            assert replica.permutation is None  # no vector section left

            normal = registry.normal_replicas(block_id)[0]
            base = read_block(normal.path)
            expected, _, _ = build_index(base, "d", config.page_size_records)
            assert blocks_equal(replica, expected), block_id
            checked += 1
        assert checked == registry.block_count
        cluster.close()
