"""Analytical timing for dense matmul layers on a weight-stationary array."""

from __future__ import annotations

from dataclasses import dataclass

from .config import HardwareConfig, MatmulLayer


@dataclass(frozen=True)
class MatmulTiming:
    compute_cycles: float
    transfer_cycles: float
    total_cycles: float
    bytes_moved: int
    macs: int


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def matmul_compute_cycles(m: int, n: int, k: int, sa_rows: int, sa_cols: int) -> int:
    """Cycles to stream an M x K by K x N matmul through an R x C array.

    The K and N dimensions fold over the array; each fold costs the
    pipelined pass 2R + C + M - 2 (fill, stream M rows, drain).
    """
    if min(m, n, k, sa_rows, sa_cols) < 1:
        raise ValueError("matmul dimensions and array shape must be >= 1")
    folds = _ceil_div(k, sa_rows) * _ceil_div(n, sa_cols)
    return folds * (2 * sa_rows + sa_cols + m - 2)


def tile_transfer_cycles(d_bytes: int, bandwidth: float, latency: int) -> float:
    """Cycles to move d_bytes over a channel: d/B + L, exactly."""
    if d_bytes < 0:
        raise ValueError("transfer size must be >= 0")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if d_bytes == 0:
        return float(latency)
    return d_bytes / bandwidth + latency


def matmul_layer_timing(layer: MatmulLayer, hw: HardwareConfig, batch_size: int) -> MatmulTiming:
    """Time one matmul layer for a whole batch.

    The batch folds into the row dimension: M' = batch_size * m. Weights,
    activations and outputs all cross the off-chip channel once:
    (M'K + NK + M'N) * dtype_bytes.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    m_eff = batch_size * layer.m
    compute = float(
        matmul_compute_cycles(m_eff, layer.n, layer.k, hw.sa_rows, hw.sa_cols)
    )
    bytes_moved = (m_eff * layer.k + layer.n * layer.k + m_eff * layer.n) * hw.dtype_bytes
    transfer = tile_transfer_cycles(
        bytes_moved, hw.offchip.bandwidth_bytes_per_cycle, hw.offchip.latency_cycles
    )
    if hw.overlap_compute_memory:
        total = max(compute, transfer)
    else:
        total = compute + transfer
    macs = m_eff * layer.n * layer.k
    return MatmulTiming(compute, transfer, total, bytes_moved, macs)
