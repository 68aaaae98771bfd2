"""Whole-simulation orchestration: per batch, per layer, assemble the report."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .config import (
    EmbeddingLayer,
    HardwareConfig,
    MatmulLayer,
    PolicyKind,
    WorkloadConfig,
    hardware_to_dict,
    workload_to_dict,
)
from .errors import ConfigError, RatioUndefinedError, TraceLengthError
from .matrix_model import matmul_layer_timing
from .offchip_mem import offchip_time, onchip_time
from .onchip_mem import BatchCounts, profile_hot_vectors, simulate_onchip
from .trace import IndexTrace, expand_trace, translate_addresses
from .vector_model import embedding_compute_cycles, embedding_vector_ops

_ZERO_COUNTS = BatchCounts(0, 0, 0, 0)


@dataclass(frozen=True)
class EnergyTable:
    """Per-operation energy costs in picojoules."""

    pj_per_onchip_access: float = 0.0
    pj_per_offchip_access: float = 0.0
    pj_per_mac: float = 0.0
    pj_per_vector_op: float = 0.0

    def __post_init__(self):
        for name in (
            "pj_per_onchip_access",
            "pj_per_offchip_access",
            "pj_per_mac",
            "pj_per_vector_op",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative")


_ENERGY_KEYS = {
    "pj_per_onchip_access",
    "pj_per_offchip_access",
    "pj_per_mac",
    "pj_per_vector_op",
}


def parse_energy_table(text: str) -> EnergyTable:
    """Parse an energy table from YAML; omitted entries default to 0."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("energy table: expected a mapping")
    for key in raw:
        if key not in _ENERGY_KEYS:
            raise ConfigError(f"{key}: unknown energy table key")
    values = {}
    for key in _ENERGY_KEYS:
        value = raw.get(key, 0)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        values[key] = float(value)
    return EnergyTable(**values)


def energy_table_to_dict(table: EnergyTable) -> dict:
    return {
        "pj_per_onchip_access": table.pj_per_onchip_access,
        "pj_per_offchip_access": table.pj_per_offchip_access,
        "pj_per_mac": table.pj_per_mac,
        "pj_per_vector_op": table.pj_per_vector_op,
    }


@dataclass(frozen=True)
class OperationCounts:
    onchip_accesses: int = 0
    offchip_accesses: int = 0
    macs: int = 0
    vector_ops: int = 0


@dataclass(frozen=True)
class BatchStats:
    batch_id: int
    compute_cycles: float
    onchip_cycles: float
    offchip_cycles: float
    total_cycles: float
    onchip_hits: int
    onchip_misses: int
    offchip_accesses: int
    onchip_access_ratio: float | None


@dataclass(frozen=True)
class AggregateStats:
    compute_cycles: float
    onchip_cycles: float
    offchip_cycles: float
    total_cycles: float
    onchip_hits: int
    onchip_misses: int
    offchip_accesses: int
    onchip_access_ratio: float | None


@dataclass(frozen=True)
class SimReport:
    per_batch: tuple[BatchStats, ...]
    aggregate: AggregateStats
    wall_time_seconds: float
    counts: OperationCounts
    config_fingerprint: str
    energy_pj: float | None = None


def access_ratio(hits: int, misses: int) -> float:
    """hits / (hits + misses); undefined for an empty stream."""
    total = hits + misses
    if total <= 0:
        raise RatioUndefinedError("access ratio undefined for zero accesses")
    return hits / total


def _ratio_or_none(hits: int, misses: int) -> float | None:
    try:
        return access_ratio(hits, misses)
    except RatioUndefinedError:
        return None


def estimate_energy(counts: OperationCounts, table: EnergyTable) -> float:
    """Total energy in pJ from operation counts and per-operation costs."""
    return (
        counts.onchip_accesses * table.pj_per_onchip_access
        + counts.offchip_accesses * table.pj_per_offchip_access
        + counts.macs * table.pj_per_mac
        + counts.vector_ops * table.pj_per_vector_op
    )


@dataclass
class _CoreResult:
    """Per-core classification results for one embedding layer."""

    local: dict[int, BatchCounts]
    glob: dict[int, BatchCounts] | None
    compute_cycles: int


def _classify_core_stream(stream, hw: HardwareConfig, pin_local, pin_global):
    """Run the local (and optional global) classifier over one core's stream."""
    local = simulate_onchip(stream, hw.onchip_policy, hw.local_mem, pin_set=pin_local)
    glob = None
    if hw.global_mem is not None:
        glob = simulate_onchip(
            local.offchip_sequence, hw.global_policy, hw.global_mem, pin_set=pin_global
        )
    return local, glob


def _merge_batch_counts(target: dict[int, BatchCounts], part: dict[int, BatchCounts]):
    for b, counts in part.items():
        prev = target.get(b)
        if prev is None:
            target[b] = counts
        else:
            target[b] = BatchCounts(
                prev.hits + counts.hits,
                prev.misses + counts.misses,
                prev.onchip_accesses + counts.onchip_accesses,
                prev.offchip_accesses + counts.offchip_accesses,
            )


def _simulate_embedding_layer(
    layer: EmbeddingLayer,
    hw: HardwareConfig,
    wl: WorkloadConfig,
    sub_trace: IndexTrace,
) -> list[_CoreResult]:
    full = expand_trace(sub_trace, layer, wl.batch_size, wl.num_batches)
    stream = translate_addresses(
        full, layer, hw.dtype_bytes, hw.local_mem.granularity_bytes
    )

    pin_local = None
    if hw.onchip_policy.kind is PolicyKind.PINNING:
        pin_local = profile_hot_vectors(
            full, layer, hw.local_mem.capacity_bytes, hw.dtype_bytes
        )
    pin_global = None
    if hw.global_mem is not None and hw.global_policy.kind is PolicyKind.PINNING:
        pin_global = profile_hot_vectors(
            full, layer, hw.global_mem.capacity_bytes, hw.dtype_bytes
        )

    results = []
    for core in range(hw.num_cores):
        positions = np.flatnonzero(stream.sample_ids % hw.num_cores == core)
        core_stream = stream.take(positions)
        local_counts: dict[int, BatchCounts] = {}
        global_counts: dict[int, BatchCounts] | None = (
            {} if hw.global_mem is not None else None
        )
        if hw.reset_state_per_batch:
            # fresh on-chip state per batch: one classifier run per segment
            bounds = np.searchsorted(
                core_stream.batch_ids, np.arange(wl.num_batches + 1)
            )
            for b in range(wl.num_batches):
                segment = core_stream.take(
                    np.arange(bounds[b], bounds[b + 1], dtype=np.int64)
                )
                local, glob = _classify_core_stream(segment, hw, pin_local, pin_global)
                _merge_batch_counts(local_counts, local.per_batch)
                if glob is not None:
                    _merge_batch_counts(global_counts, glob.per_batch)
        else:
            local, glob = _classify_core_stream(core_stream, hw, pin_local, pin_global)
            local_counts = dict(local.per_batch)
            if glob is not None:
                global_counts = dict(glob.per_batch)

        samples_on_core = len(range(core, wl.batch_size, hw.num_cores))
        compute = embedding_compute_cycles(layer, samples_on_core, hw.vector_lanes)
        results.append(_CoreResult(local_counts, global_counts, compute))
    return results


def _combine(compute: float, memory: float, overlap: bool) -> float:
    return max(compute, memory) if overlap else compute + memory


def run_simulation(
    hw: HardwareConfig,
    wl: WorkloadConfig,
    trace: IndexTrace,
    energy: EnergyTable | None = None,
) -> SimReport:
    """Simulate the workload batch by batch, layer by layer.

    Embedding layers consume the source trace sequentially, each with its own
    address space and on-chip state. Samples split round-robin across cores;
    a batch's embedding layer finishes when its slowest core does. On-chip
    cache state persists across batches unless hw.reset_state_per_batch.
    """
    per_layer_need = [
        wl.batch_size * wl.num_batches * layer.lookups_per_sample
        for layer in wl.layers
        if isinstance(layer, EmbeddingLayer)
    ]
    total_need = sum(per_layer_need)
    if len(trace) < total_need:
        raise TraceLengthError(total_need, len(trace))

    gran = hw.local_mem.granularity_bytes
    matmul_timings: dict[int, object] = {}
    embedding_results: dict[int, list[_CoreResult]] = {}
    offset = 0
    for idx, layer in enumerate(wl.layers):
        if isinstance(layer, MatmulLayer):
            matmul_timings[idx] = matmul_layer_timing(layer, hw, wl.batch_size)
        else:
            need = wl.batch_size * wl.num_batches * layer.lookups_per_sample
            sub = IndexTrace(
                trace.indices[offset : offset + need], trace.rows, trace.seed
            )
            offset += need
            embedding_results[idx] = _simulate_embedding_layer(layer, hw, wl, sub)

    per_batch: list[BatchStats] = []
    total_onchip_accesses = 0
    for b in range(wl.num_batches):
        compute_cycles = 0.0
        onchip_cycles = 0.0
        offchip_cycles = 0.0
        total_cycles = 0.0
        hits = 0
        misses = 0
        offchip_accesses = 0
        for idx, layer in enumerate(wl.layers):
            if isinstance(layer, MatmulLayer):
                timing = matmul_timings[idx]
                compute_cycles += timing.compute_cycles
                offchip_cycles += timing.transfer_cycles
                total_cycles += timing.total_cycles
                continue

            core_times = []
            for result in embedding_results[idx]:
                local = result.local.get(b, _ZERO_COUNTS)
                mem_time = onchip_time(
                    local.onchip_accesses,
                    gran,
                    hw.local_mem.bandwidth_bytes_per_cycle,
                    hw.local_mem.latency_cycles,
                )
                if result.glob is None:
                    final = local
                else:
                    glob = result.glob.get(b, _ZERO_COUNTS)
                    mem_time += onchip_time(
                        glob.onchip_accesses,
                        gran,
                        hw.global_mem.bandwidth_bytes_per_cycle,
                        hw.global_mem.latency_cycles,
                    )
                    final = glob
                off_time = offchip_time(
                    final.offchip_accesses,
                    gran,
                    hw.offchip.bandwidth_bytes_per_cycle,
                    hw.offchip.latency_cycles,
                )
                core_time = _combine(
                    result.compute_cycles,
                    mem_time + off_time,
                    hw.overlap_compute_memory,
                )
                core_times.append((core_time, result.compute_cycles, mem_time, off_time))

                hits += local.hits + (glob.hits if result.glob is not None else 0)
                misses += final.misses
                offchip_accesses += final.offchip_accesses
                total_onchip_accesses += local.onchip_accesses + (
                    glob.onchip_accesses if result.glob is not None else 0
                )

            # the slowest core sets the layer's time and supplies its breakdown
            critical = max(range(len(core_times)), key=lambda i: core_times[i][0])
            layer_time, crit_compute, crit_mem, crit_off = core_times[critical]
            total_cycles += layer_time
            compute_cycles += crit_compute
            onchip_cycles += crit_mem
            offchip_cycles += crit_off

        per_batch.append(
            BatchStats(
                batch_id=b,
                compute_cycles=compute_cycles,
                onchip_cycles=onchip_cycles,
                offchip_cycles=offchip_cycles,
                total_cycles=total_cycles,
                onchip_hits=hits,
                onchip_misses=misses,
                offchip_accesses=offchip_accesses,
                onchip_access_ratio=_ratio_or_none(hits, misses),
            )
        )

    agg_hits = sum(s.onchip_hits for s in per_batch)
    agg_misses = sum(s.onchip_misses for s in per_batch)
    aggregate = AggregateStats(
        compute_cycles=sum(s.compute_cycles for s in per_batch),
        onchip_cycles=sum(s.onchip_cycles for s in per_batch),
        offchip_cycles=sum(s.offchip_cycles for s in per_batch),
        total_cycles=sum(s.total_cycles for s in per_batch),
        onchip_hits=agg_hits,
        onchip_misses=agg_misses,
        offchip_accesses=sum(s.offchip_accesses for s in per_batch),
        onchip_access_ratio=_ratio_or_none(agg_hits, agg_misses),
    )

    macs = sum(
        t.macs for t in matmul_timings.values()
    ) * wl.num_batches
    vector_ops = sum(
        embedding_vector_ops(wl.layers[idx], wl.batch_size).total
        for idx in embedding_results
    ) * wl.num_batches
    counts = OperationCounts(
        onchip_accesses=total_onchip_accesses,
        offchip_accesses=aggregate.offchip_accesses,
        macs=macs,
        vector_ops=vector_ops,
    )

    energy_pj = estimate_energy(counts, energy) if energy is not None else None
    wall_time = aggregate.total_cycles / (hw.clock_ghz * 1e9)

    return SimReport(
        per_batch=tuple(per_batch),
        aggregate=aggregate,
        wall_time_seconds=wall_time,
        counts=counts,
        config_fingerprint=config_fingerprint(hw, wl, trace, energy),
        energy_pj=energy_pj,
    )


def config_fingerprint(
    hw: HardwareConfig,
    wl: WorkloadConfig,
    trace: IndexTrace,
    energy: EnergyTable | None,
) -> str:
    """Stable hash over every simulation input."""
    trace_digest = hashlib.sha256(trace.indices.astype("<i8").tobytes()).hexdigest()
    payload = {
        "hardware": hardware_to_dict(hw),
        "workload": workload_to_dict(wl),
        "trace": {
            "rows": trace.rows,
            "seed": trace.seed,
            "count": len(trace),
            "sha256": trace_digest,
        },
        "energy": energy_table_to_dict(energy) if energy is not None else None,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("ascii")).hexdigest()


def _stats_to_dict(stats) -> dict:
    out = {
        "compute_cycles": stats.compute_cycles,
        "onchip_cycles": stats.onchip_cycles,
        "offchip_cycles": stats.offchip_cycles,
        "total_cycles": stats.total_cycles,
        "onchip_hits": stats.onchip_hits,
        "onchip_misses": stats.onchip_misses,
        "offchip_accesses": stats.offchip_accesses,
        "onchip_access_ratio": stats.onchip_access_ratio,
    }
    if isinstance(stats, BatchStats):
        out["batch_id"] = stats.batch_id
    return out


def report_to_dict(report: SimReport) -> dict:
    return {
        "per_batch": [_stats_to_dict(s) for s in report.per_batch],
        "aggregate": _stats_to_dict(report.aggregate),
        "wall_time_seconds": report.wall_time_seconds,
        "counts": {
            "onchip_accesses": report.counts.onchip_accesses,
            "offchip_accesses": report.counts.offchip_accesses,
            "macs": report.counts.macs,
            "vector_ops": report.counts.vector_ops,
        },
        "config_fingerprint": report.config_fingerprint,
        "energy_pj": report.energy_pj,
    }


def report_to_json(report: SimReport) -> str:
    """Deterministic JSON serialization: sorted keys, fixed layout."""
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"


CSV_HEADER = (
    "batch,compute_cycles,onchip_cycles,offchip_cycles,total_cycles,"
    "hits,misses,offchip_accesses,ratio"
)


def report_to_csv(report: SimReport) -> str:
    """Per-batch CSV; the ratio column is empty when undefined."""
    rows = [CSV_HEADER]
    for s in report.per_batch:
        ratio = "" if s.onchip_access_ratio is None else repr(s.onchip_access_ratio)
        rows.append(
            f"{s.batch_id},{s.compute_cycles!r},{s.onchip_cycles!r},"
            f"{s.offchip_cycles!r},{s.total_cycles!r},{s.onchip_hits},"
            f"{s.onchip_misses},{s.offchip_accesses},{ratio}"
        )
    return "\n".join(rows) + "\n"


def report_from_json(text: str) -> SimReport:
    """Rebuild a report from its JSON serialization."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid report JSON: {exc}") from exc
    try:
        per_batch = tuple(
            BatchStats(
                batch_id=entry["batch_id"],
                compute_cycles=entry["compute_cycles"],
                onchip_cycles=entry["onchip_cycles"],
                offchip_cycles=entry["offchip_cycles"],
                total_cycles=entry["total_cycles"],
                onchip_hits=entry["onchip_hits"],
                onchip_misses=entry["onchip_misses"],
                offchip_accesses=entry["offchip_accesses"],
                onchip_access_ratio=entry["onchip_access_ratio"],
            )
            for entry in raw["per_batch"]
        )
        agg = raw["aggregate"]
        aggregate = AggregateStats(
            compute_cycles=agg["compute_cycles"],
            onchip_cycles=agg["onchip_cycles"],
            offchip_cycles=agg["offchip_cycles"],
            total_cycles=agg["total_cycles"],
            onchip_hits=agg["onchip_hits"],
            onchip_misses=agg["onchip_misses"],
            offchip_accesses=agg["offchip_accesses"],
            onchip_access_ratio=agg["onchip_access_ratio"],
        )
        counts_raw = raw["counts"]
        counts = OperationCounts(
            onchip_accesses=counts_raw["onchip_accesses"],
            offchip_accesses=counts_raw["offchip_accesses"],
            macs=counts_raw["macs"],
            vector_ops=counts_raw["vector_ops"],
        )
        return SimReport(
            per_batch=per_batch,
            aggregate=aggregate,
            wall_time_seconds=raw["wall_time_seconds"],
            counts=counts,
            config_fingerprint=raw["config_fingerprint"],
            energy_pj=raw.get("energy_pj"),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"report JSON missing field: {exc}") from exc
