"""Distributed property-graph database with refinable timestamps.

Gatekeepers stamp every transaction with a coarse vector timestamp; shards
execute in that order and ask a timeline oracle to refine genuinely
concurrent pairs on demand, giving strict serializability without a
central sequencer on the fast path.
"""

from .graphstate import InvalidOperation, Op
from .timestamps import Order, VectorTimestamp

__all__ = ["InvalidOperation", "Op", "Order", "VectorTimestamp"]
__version__ = "0.1.0"
