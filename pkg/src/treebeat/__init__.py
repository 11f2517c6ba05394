"""Heartbeat-scheduled parallel binary-tree traversal.

A library plus benchmark CLI implementing one traversal seven ways: from
the recursive reference, through fork/join and defunctionalized-parallel
forms, down the serial refactoring chain (CPS, defunctionalization,
iterative stack machine), and finally the heartbeat traversal that promotes
latent parallelism at a fixed rate.
"""

from .tree import TreeKind, TreeSpec, ValueMode, generate, oracle_sum
from .scheduler import HeartbeatClock, WorkerPool
from .traversal import Variant, run_variant

__all__ = [
    "TreeKind",
    "TreeSpec",
    "ValueMode",
    "generate",
    "oracle_sum",
    "HeartbeatClock",
    "WorkerPool",
    "Variant",
    "run_variant",
]
