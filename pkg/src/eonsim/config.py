"""Hardware and workload configuration: types, YAML parsing, validation."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

import yaml

from .errors import ConfigError


class PolicyKind(enum.Enum):
    SPM = "SPM"
    LRU = "LRU"
    SRRIP = "SRRIP"
    PINNING = "PINNING"


class Reduce(enum.Enum):
    SUM = "SUM"
    MEAN = "MEAN"
    MAX = "MAX"


@dataclass(frozen=True)
class MemLevelConfig:
    """One level of the memory system.

    Bandwidth is in bytes per core clock cycle, latency in cycles,
    granularity is the access quantum in bytes (power of two).
    """

    capacity_bytes: int
    latency_cycles: int
    bandwidth_bytes_per_cycle: float
    granularity_bytes: int


@dataclass(frozen=True)
class PolicyConfig:
    """On-chip management policy for embedding vectors.

    associativity and line_size_bytes apply to LRU and SRRIP only;
    rrpv_bits applies to SRRIP only.
    """

    kind: PolicyKind
    associativity: int | None = None
    line_size_bytes: int | None = None
    rrpv_bits: int | None = None


@dataclass(frozen=True)
class MatmulLayer:
    m: int
    n: int
    k: int


@dataclass(frozen=True)
class EmbeddingLayer:
    num_tables: int
    rows_per_table: int
    dim: int
    lookups_per_sample: int
    reduce: Reduce


Layer = MatmulLayer | EmbeddingLayer


@dataclass(frozen=True)
class HardwareConfig:
    clock_ghz: float
    num_cores: int
    sa_rows: int
    sa_cols: int
    vector_lanes: int
    dtype_bytes: int
    local_mem: MemLevelConfig
    offchip: MemLevelConfig
    onchip_policy: PolicyConfig
    global_mem: MemLevelConfig | None = None
    global_policy: PolicyConfig | None = None
    overlap_compute_memory: bool = True
    reset_state_per_batch: bool = False


@dataclass(frozen=True)
class WorkloadConfig:
    batch_size: int
    num_batches: int
    layers: tuple[Layer, ...]


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _as_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    return value


def _check_keys(mapping: dict, allowed: set[str], path: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"{_join(path, str(key))}: unknown key")


def _get(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{_join(path, key)}: missing required key")
    return mapping[key]


def _as_int(value, path: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}")
    return value


def _as_number(value, path: str, positive: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be positive")
    return float(value)


def _as_bool(value, path: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean, got {value!r}")
    return value


def _as_pow2(value, path: str) -> int:
    value = _as_int(value, path, minimum=1)
    if value & (value - 1):
        raise ConfigError(f"{path}: must be a power of two, got {value}")
    return value


def _parse_mem_level(raw, path: str) -> MemLevelConfig:
    raw = _as_mapping(raw, path)
    allowed = {
        "capacity_bytes",
        "latency_cycles",
        "bandwidth_bytes_per_cycle",
        "granularity_bytes",
    }
    _check_keys(raw, allowed, path)
    capacity = _as_int(_get(raw, "capacity_bytes", path), _join(path, "capacity_bytes"), 1)
    latency = _as_int(_get(raw, "latency_cycles", path), _join(path, "latency_cycles"), 0)
    bandwidth = _as_number(
        _get(raw, "bandwidth_bytes_per_cycle", path),
        _join(path, "bandwidth_bytes_per_cycle"),
    )
    granularity = _as_pow2(
        _get(raw, "granularity_bytes", path), _join(path, "granularity_bytes")
    )
    if granularity > capacity:
        raise ConfigError(
            f"{_join(path, 'granularity_bytes')}: exceeds capacity_bytes ({capacity})"
        )
    if capacity % granularity:
        raise ConfigError(
            f"{_join(path, 'capacity_bytes')}: not a multiple of granularity_bytes"
        )
    return MemLevelConfig(capacity, latency, bandwidth, granularity)


def _parse_policy(raw, path: str, backing: MemLevelConfig, line_must_match: int) -> PolicyConfig:
    raw = _as_mapping(raw, path)
    kind_raw = _get(raw, "kind", path)
    if not isinstance(kind_raw, str):
        raise ConfigError(f"{_join(path, 'kind')}: expected a string")
    try:
        kind = PolicyKind(kind_raw.upper())
    except ValueError:
        names = ", ".join(k.value for k in PolicyKind)
        raise ConfigError(
            f"{_join(path, 'kind')}: unknown policy {kind_raw!r} (one of {names})"
        ) from None

    if kind in (PolicyKind.LRU, PolicyKind.SRRIP):
        allowed = {"kind", "associativity", "line_size_bytes"}
        if kind is PolicyKind.SRRIP:
            allowed.add("rrpv_bits")
        _check_keys(raw, allowed, path)
        assoc = _as_int(_get(raw, "associativity", path), _join(path, "associativity"), 1)
        line = _as_pow2(_get(raw, "line_size_bytes", path), _join(path, "line_size_bytes"))
        if line != line_must_match:
            raise ConfigError(
                f"{_join(path, 'line_size_bytes')}: must equal "
                f"local_mem.granularity_bytes ({line_must_match})"
            )
        if backing.capacity_bytes // (line * assoc) < 1:
            raise ConfigError(
                f"{_join(path, 'associativity')}: capacity_bytes "
                f"{backing.capacity_bytes} yields zero sets at "
                f"line {line} x {assoc} ways"
            )
        rrpv = None
        if kind is PolicyKind.SRRIP:
            rrpv = raw.get("rrpv_bits", 2)
            rrpv = _as_int(rrpv, _join(path, "rrpv_bits"), 1)
        return PolicyConfig(kind, assoc, line, rrpv)

    _check_keys(raw, {"kind"}, path)
    return PolicyConfig(kind)


_HW_KEYS = {
    "clock_ghz",
    "num_cores",
    "sa_rows",
    "sa_cols",
    "vector_lanes",
    "dtype_bytes",
    "local_mem",
    "offchip",
    "onchip_policy",
    "global_mem",
    "global_policy",
    "overlap_compute_memory",
    "reset_state_per_batch",
}


def parse_hardware_config(text: str) -> HardwareConfig:
    """Parse a hardware description from YAML text."""
    raw = _load_yaml(text)
    raw = _as_mapping(raw, "")
    _check_keys(raw, _HW_KEYS, "")

    clock = _as_number(_get(raw, "clock_ghz", ""), "clock_ghz")
    cores = _as_int(_get(raw, "num_cores", ""), "num_cores", 1)
    sa_rows = _as_int(_get(raw, "sa_rows", ""), "sa_rows", 1)
    sa_cols = _as_int(_get(raw, "sa_cols", ""), "sa_cols", 1)
    lanes = _as_int(_get(raw, "vector_lanes", ""), "vector_lanes", 1)
    dtype = _as_int(_get(raw, "dtype_bytes", ""), "dtype_bytes", 1)
    local = _parse_mem_level(_get(raw, "local_mem", ""), "local_mem")
    offchip = _parse_mem_level(_get(raw, "offchip", ""), "offchip")
    policy = _parse_policy(
        _get(raw, "onchip_policy", ""), "onchip_policy", local, local.granularity_bytes
    )

    global_mem = None
    global_policy = None
    if raw.get("global_mem") is not None:
        global_mem = _parse_mem_level(raw["global_mem"], "global_mem")
        if global_mem.granularity_bytes != local.granularity_bytes:
            raise ConfigError(
                "global_mem.granularity_bytes: must equal "
                f"local_mem.granularity_bytes ({local.granularity_bytes})"
            )
        if raw.get("global_policy") is None:
            raise ConfigError("global_policy: required when global_mem is set")
        global_policy = _parse_policy(
            raw["global_policy"], "global_policy", global_mem, local.granularity_bytes
        )
    elif raw.get("global_policy") is not None:
        raise ConfigError("global_policy: set but global_mem is absent")

    overlap = _as_bool(raw.get("overlap_compute_memory", True), "overlap_compute_memory")
    reset = _as_bool(raw.get("reset_state_per_batch", False), "reset_state_per_batch")

    return HardwareConfig(
        clock_ghz=clock,
        num_cores=cores,
        sa_rows=sa_rows,
        sa_cols=sa_cols,
        vector_lanes=lanes,
        dtype_bytes=dtype,
        local_mem=local,
        offchip=offchip,
        onchip_policy=policy,
        global_mem=global_mem,
        global_policy=global_policy,
        overlap_compute_memory=overlap,
        reset_state_per_batch=reset,
    )


_MNK_RE = re.compile(r"^\s*M\s*=\s*(\d+)\s+N\s*=\s*(\d+)\s+K\s*=\s*(\d+)\s*$")


def _parse_layer(raw, path: str) -> Layer:
    if isinstance(raw, str):
        match = _MNK_RE.match(raw)
        if not match:
            raise ConfigError(
                f"{path}: matmul shorthand must look like 'M=256 N=128 K=128', got {raw!r}"
            )
        m, n, k = (int(g) for g in match.groups())
        if min(m, n, k) < 1:
            raise ConfigError(f"{path}: matmul dimensions must be >= 1")
        return MatmulLayer(m, n, k)

    raw = _as_mapping(raw, path)
    kind = _get(raw, "kind", path)
    if kind == "matmul":
        _check_keys(raw, {"kind", "m", "n", "k"}, path)
        return MatmulLayer(
            _as_int(_get(raw, "m", path), _join(path, "m"), 1),
            _as_int(_get(raw, "n", path), _join(path, "n"), 1),
            _as_int(_get(raw, "k", path), _join(path, "k"), 1),
        )
    if kind == "embedding":
        allowed = {"kind", "num_tables", "rows_per_table", "dim", "lookups_per_sample", "reduce"}
        _check_keys(raw, allowed, path)
        reduce_raw = _get(raw, "reduce", path)
        if not isinstance(reduce_raw, str):
            raise ConfigError(f"{_join(path, 'reduce')}: expected a string")
        try:
            reduce = Reduce(reduce_raw.upper())
        except ValueError:
            raise ConfigError(
                f"{_join(path, 'reduce')}: unknown reduction {reduce_raw!r} "
                "(one of SUM, MEAN, MAX)"
            ) from None
        return EmbeddingLayer(
            _as_int(_get(raw, "num_tables", path), _join(path, "num_tables"), 1),
            _as_int(_get(raw, "rows_per_table", path), _join(path, "rows_per_table"), 1),
            _as_int(_get(raw, "dim", path), _join(path, "dim"), 1),
            _as_int(
                _get(raw, "lookups_per_sample", path),
                _join(path, "lookups_per_sample"),
                1,
            ),
            reduce,
        )
    raise ConfigError(f"{_join(path, 'kind')}: unknown layer kind {kind!r}")


def parse_workload_config(text: str) -> WorkloadConfig:
    """Parse a workload description from YAML text."""
    raw = _load_yaml(text)
    raw = _as_mapping(raw, "")
    _check_keys(raw, {"batch_size", "num_batches", "layers"}, "")
    batch_size = _as_int(_get(raw, "batch_size", ""), "batch_size", 1)
    num_batches = _as_int(_get(raw, "num_batches", ""), "num_batches", 1)
    layers_raw = _get(raw, "layers", "")
    if not isinstance(layers_raw, list) or not layers_raw:
        raise ConfigError("layers: expected a non-empty list")
    layers = tuple(
        _parse_layer(entry, f"layers[{i}]") for i, entry in enumerate(layers_raw)
    )
    return WorkloadConfig(batch_size, num_batches, layers)


def _load_yaml(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc


def _mem_level_to_dict(mem: MemLevelConfig) -> dict:
    return {
        "capacity_bytes": mem.capacity_bytes,
        "latency_cycles": mem.latency_cycles,
        "bandwidth_bytes_per_cycle": mem.bandwidth_bytes_per_cycle,
        "granularity_bytes": mem.granularity_bytes,
    }


def _policy_to_dict(policy: PolicyConfig) -> dict:
    out = {"kind": policy.kind.value}
    if policy.associativity is not None:
        out["associativity"] = policy.associativity
    if policy.line_size_bytes is not None:
        out["line_size_bytes"] = policy.line_size_bytes
    if policy.rrpv_bits is not None:
        out["rrpv_bits"] = policy.rrpv_bits
    return out


def hardware_to_dict(hw: HardwareConfig) -> dict:
    out = {
        "clock_ghz": hw.clock_ghz,
        "num_cores": hw.num_cores,
        "sa_rows": hw.sa_rows,
        "sa_cols": hw.sa_cols,
        "vector_lanes": hw.vector_lanes,
        "dtype_bytes": hw.dtype_bytes,
        "local_mem": _mem_level_to_dict(hw.local_mem),
        "offchip": _mem_level_to_dict(hw.offchip),
        "onchip_policy": _policy_to_dict(hw.onchip_policy),
        "overlap_compute_memory": hw.overlap_compute_memory,
        "reset_state_per_batch": hw.reset_state_per_batch,
    }
    if hw.global_mem is not None:
        out["global_mem"] = _mem_level_to_dict(hw.global_mem)
        out["global_policy"] = _policy_to_dict(hw.global_policy)
    return out


def _layer_to_dict(layer: Layer) -> dict:
    if isinstance(layer, MatmulLayer):
        return {"kind": "matmul", "m": layer.m, "n": layer.n, "k": layer.k}
    return {
        "kind": "embedding",
        "num_tables": layer.num_tables,
        "rows_per_table": layer.rows_per_table,
        "dim": layer.dim,
        "lookups_per_sample": layer.lookups_per_sample,
        "reduce": layer.reduce.value,
    }


def workload_to_dict(wl: WorkloadConfig) -> dict:
    return {
        "batch_size": wl.batch_size,
        "num_batches": wl.num_batches,
        "layers": [_layer_to_dict(layer) for layer in wl.layers],
    }


def hardware_to_yaml(hw: HardwareConfig) -> str:
    """Serialize back to YAML; parse(hardware_to_yaml(hw)) == hw."""
    return yaml.safe_dump(hardware_to_dict(hw), sort_keys=False)


def workload_to_yaml(wl: WorkloadConfig) -> str:
    """Serialize back to YAML; parse(workload_to_yaml(wl)) == wl."""
    return yaml.safe_dump(workload_to_dict(wl), sort_keys=False)
