"""Compute-cycle model for the vector unit executing embedding reductions."""

from __future__ import annotations

from dataclasses import dataclass

from .config import EmbeddingLayer, Reduce


@dataclass(frozen=True)
class VectorOpCount:
    """Vector-wide operations issued: reductions/scales and result writebacks."""

    elementwise_ops: int
    writebacks: int

    def __post_init__(self):
        if self.elementwise_ops < 0 or self.writebacks < 0:
            raise ValueError("operation counts must be non-negative")

    @property
    def total(self) -> int:
        return self.elementwise_ops + self.writebacks


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def embedding_compute_cycles(layer: EmbeddingLayer, batch_size: int, lanes: int) -> int:
    """Cycles to reduce one batch of embedding lookups on a V-lane unit.

    Per (sample, table): (L_e - 1) reduction ops plus one writeback, each
    taking ceil(d / V) cycles, so L_e * ceil(d / V) in total. MEAN pays one
    extra scale op of ceil(d / V).
    """
    if lanes < 1:
        raise ValueError("vector lanes must be >= 1")
    if batch_size < 0:
        raise ValueError("batch_size must be >= 0")
    slice_cycles = _ceil_div(layer.dim, lanes)
    per_pair = layer.lookups_per_sample * slice_cycles
    if layer.reduce is Reduce.MEAN:
        per_pair += slice_cycles
    return batch_size * layer.num_tables * per_pair


def embedding_vector_ops(layer: EmbeddingLayer, batch_size: int) -> VectorOpCount:
    """Count vector-wide operations for one batch (for energy accounting)."""
    if batch_size < 0:
        raise ValueError("batch_size must be >= 0")
    pairs = batch_size * layer.num_tables
    elementwise = pairs * (layer.lookups_per_sample - 1)
    if layer.reduce is Reduce.MEAN:
        elementwise += pairs
    return VectorOpCount(elementwise_ops=elementwise, writebacks=pairs)
