import numpy as np
import pytest

from adaptidx.blocks import DataBlock, Schema
from adaptidx.cluster import Cluster, ClusterConfig
from adaptidx.workloads import gen_synthetic


@pytest.fixture
def simple_schema() -> Schema:
    return Schema.of(("a", "int64"), ("b", "float64"), ("c", "string", 8), ("d", "int64"))


def make_block(schema: Schema, rows: int, seed: int = 0, block_id: int = 0) -> DataBlock:
    rng = np.random.default_rng(seed)
    columns = {}
    for attr in schema.attributes:
        if attr.kind == "int64":
            columns[attr.name] = rng.integers(-1000, 1000, rows, dtype="<i8")
        elif attr.kind == "float64":
            columns[attr.name] = rng.random(rows).astype("<f8")
        else:
            pool = np.array(
                [f"s{i:03d}".encode().ljust(attr.width, b"x")[: attr.width] for i in range(97)],
                dtype=f"S{attr.width}",
            )
            columns[attr.name] = pool[rng.integers(0, len(pool), rows)]
    return DataBlock(block_id=block_id, schema=schema, columns=columns)


@pytest.fixture
def block_factory():
    return make_block


def make_cluster(
    root,
    nodes: int = 4,
    slots: int = 2,
    replication: int = 2,
    block_records: int = 1000,
    page_size: int = 128,
    **overrides,
) -> Cluster:
    config = ClusterConfig(
        node_count=nodes,
        slots_per_node=slots,
        replication_factor=replication,
        block_records=block_records,
        page_size_records=page_size,
        build_queue_capacity=overrides.pop("build_queue_capacity", 64),
        write_queue_capacity=overrides.pop("write_queue_capacity", 64),
        **overrides,
    )
    return Cluster(config, root)


@pytest.fixture
def small_cluster(tmp_path):
    cluster = make_cluster(tmp_path / "cluster")
    cluster.upload_dataset(gen_synthetic(10_000, seed=11))
    yield cluster
    cluster.close()
