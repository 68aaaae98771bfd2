"""Parametric timing for the access streams the classifier produces.

A stream of n requests at granularity G costs n*G/B + L cycles: a pure
bandwidth term plus the channel latency charged once per stream (the memory
system is assumed deeply pipelined). Random-access inefficiency is absorbed
by configuring an effective bandwidth below peak.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class OffchipTiming:
    cycles: float
    accesses: int
    bytes_moved: int


def offchip_time(
    n_accesses: int, granularity_bytes: int, bandwidth: float, latency: int
) -> float:
    """Cycles for n off-chip accesses of granularity_bytes each; 0 if n == 0."""
    if n_accesses < 0:
        raise ValueError("access count must be >= 0")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if n_accesses == 0:
        return 0.0
    return n_accesses * granularity_bytes / bandwidth + latency


def onchip_time(
    n_accesses: int, granularity_bytes: int, bandwidth: float, latency: int
) -> float:
    """Same formula as offchip_time with on-chip channel parameters."""
    return offchip_time(n_accesses, granularity_bytes, bandwidth, latency)


def stream_timing(
    n_accesses: int, granularity_bytes: int, bandwidth: float, latency: int
) -> OffchipTiming:
    return OffchipTiming(
        cycles=offchip_time(n_accesses, granularity_bytes, bandwidth, latency),
        accesses=n_accesses,
        bytes_moved=n_accesses * granularity_bytes,
    )
