"""Adaptive block-level clustered indexing on a simulated MapReduce-style cluster.

Selective map-only jobs leave sorted, sparse-indexed copies of the blocks
they scan behind as pseudo replicas; later jobs on the same attribute serve
those blocks with index scans, and the index converges to cover the whole
dataset over a job sequence.
"""

from .blocks import Attribute, DataBlock, Schema, SparseClusteredIndex
from .blockfile import read_block, write_block, pseudo_replica_path
from .cluster import Cluster, ClusterConfig
from .execution import JobSpec, Predicate, ScanKind
from .indexer import AdaptiveIndexer, OfferPolicy, build_index
from .policy import CostModelParams, compute_rho, n_fsw, predict_T_job
from .registry import BlockReplicaInfo, ReplicaKind, ReplicaRegistry
from .runner import WorkloadRunner, write_reports
from .scheduler import plan_job
from .workloads import Dataset, gen_synthetic, gen_uservisits_like

__version__ = "0.1.0"

__all__ = [
    "AdaptiveIndexer",
    "Attribute",
    "BlockReplicaInfo",
    "Cluster",
    "ClusterConfig",
    "CostModelParams",
    "DataBlock",
    "Dataset",
    "JobSpec",
    "OfferPolicy",
    "Predicate",
    "ReplicaKind",
    "ReplicaRegistry",
    "ScanKind",
    "Schema",
    "SparseClusteredIndex",
    "WorkloadRunner",
    "build_index",
    "compute_rho",
    "gen_synthetic",
    "gen_uservisits_like",
    "n_fsw",
    "plan_job",
    "predict_T_job",
    "pseudo_replica_path",
    "read_block",
    "write_block",
    "write_reports",
]
