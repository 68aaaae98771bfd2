"""Embedding lookup traces and their lowering to byte-address streams.

An index-level trace is a flat sequence of table row indices. Expansion
assigns them to (batch, sample, table, lookup) positions and derives a
per-table index stream; translation turns those into granularity-aligned
read requests against a flat address space.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .config import EmbeddingLayer
from .errors import ConfigError, TraceError, TraceLengthError

TRACE_MAGIC = b"EONT"
_MASK64 = (1 << 64) - 1


class AccessKind(Enum):
    READ = "R"
    WRITE = "W"


@dataclass(frozen=True)
class MemoryAccess:
    """A single sized memory request."""

    address: int
    size_bytes: int
    kind: AccessKind
    batch_id: int
    table_id: int
    vector_index: int

    @property
    def tag(self) -> tuple[int, int]:
        """Identity of the embedding vector this request belongs to."""
        return (self.table_id, self.vector_index)


@dataclass(eq=False)
class MemoryAccessStream:
    """Columnar batch of uniform-size memory requests, in program order."""

    addresses: np.ndarray
    batch_ids: np.ndarray
    sample_ids: np.ndarray
    table_ids: np.ndarray
    vector_indices: np.ndarray
    size_bytes: int
    kind: AccessKind = AccessKind.READ

    def __post_init__(self):
        self.addresses = np.asarray(self.addresses, dtype=np.int64)
        self.batch_ids = np.asarray(self.batch_ids, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        self.table_ids = np.asarray(self.table_ids, dtype=np.int64)
        self.vector_indices = np.asarray(self.vector_indices, dtype=np.int64)
        n = len(self.addresses)
        for name in ("batch_ids", "sample_ids", "table_ids", "vector_indices"):
            if len(getattr(self, name)) != n:
                raise TraceError(f"stream column {name} has mismatched length")

    def __len__(self) -> int:
        return len(self.addresses)

    def __getitem__(self, i: int) -> MemoryAccess:
        return MemoryAccess(
            address=int(self.addresses[i]),
            size_bytes=self.size_bytes,
            kind=self.kind,
            batch_id=int(self.batch_ids[i]),
            table_id=int(self.table_ids[i]),
            vector_index=int(self.vector_indices[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def take(self, positions: np.ndarray) -> "MemoryAccessStream":
        """Sub-stream at the given positions, order preserved."""
        return MemoryAccessStream(
            self.addresses[positions],
            self.batch_ids[positions],
            self.sample_ids[positions],
            self.table_ids[positions],
            self.vector_indices[positions],
            self.size_bytes,
            self.kind,
        )

    @classmethod
    def from_accesses(cls, accesses) -> "MemoryAccessStream":
        accesses = list(accesses)
        if not accesses:
            return cls(
                np.empty(0, np.int64),
                np.empty(0, np.int64),
                np.empty(0, np.int64),
                np.empty(0, np.int64),
                np.empty(0, np.int64),
                size_bytes=1,
            )
        size = accesses[0].size_bytes
        kind = accesses[0].kind
        for a in accesses:
            if a.size_bytes != size or a.kind != kind:
                raise TraceError("stream requires uniform request size and kind")
        return cls(
            np.array([a.address for a in accesses], np.int64),
            np.array([a.batch_id for a in accesses], np.int64),
            np.zeros(len(accesses), np.int64),
            np.array([a.table_id for a in accesses], np.int64),
            np.array([a.vector_index for a in accesses], np.int64),
            size_bytes=size,
            kind=kind,
        )


@dataclass(eq=False)
class IndexTrace:
    """Flat sequence of row indices drawn from [0, rows)."""

    indices: np.ndarray
    rows: int
    seed: int | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1:
            raise TraceError("trace indices must be one-dimensional")
        if self.rows < 0:
            raise TraceError(f"rows must be >= 0, got {self.rows}")
        if len(self.indices):
            lo = int(self.indices.min())
            hi = int(self.indices.max())
            if lo < 0 or hi >= self.rows:
                raise TraceError(
                    f"index out of range: found {lo if lo < 0 else hi}, rows={self.rows}"
                )

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(eq=False)
class FullTrace:
    """Index trace expanded over (batch, sample, table, lookup), batch-major."""

    batch_ids: np.ndarray
    sample_ids: np.ndarray
    table_ids: np.ndarray
    vector_indices: np.ndarray
    num_batches: int
    batch_size: int
    num_tables: int
    lookups_per_sample: int
    rows_per_table: int

    def __len__(self) -> int:
        return len(self.vector_indices)


def gen_zipfian_trace(rows: int, count: int, s: float, seed: int) -> IndexTrace:
    """Sample `count` indices from a Zipf(s) distribution over [0, rows).

    Rank r (1-based) has probability proportional to r**-s; rank r maps to
    index r - 1, so index 0 is the most popular. s = 0 is uniform.
    Deterministic for a fixed (rows, count, s, seed).
    """
    if rows < 1:
        raise TraceError(f"rows must be >= 1, got {rows}")
    if count < 1:
        raise TraceError(f"count must be >= 1, got {count}")
    if s < 0:
        raise TraceError(f"zipf exponent must be >= 0, got {s}")
    ranks = np.arange(1, rows + 1, dtype=np.float64)
    weights = ranks ** (-float(s))
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    rng = np.random.default_rng(seed)
    u = rng.random(count)
    idx = np.searchsorted(cdf, u, side="right")
    np.clip(idx, 0, rows - 1, out=idx)
    return IndexTrace(idx.astype(np.int64), rows, seed)


def load_trace(path: str | Path) -> IndexTrace:
    """Load a trace file, sniffing binary vs text by the leading magic."""
    data = Path(path).read_bytes()
    if len(data) == 0:
        return IndexTrace(np.empty(0, np.int64), 0)
    if data[:4] == TRACE_MAGIC:
        return _load_binary(data, path)
    return _load_text(data, path)


def _load_binary(data: bytes, path) -> IndexTrace:
    if len(data) < 20:
        raise TraceError(f"{path}: truncated binary trace header")
    rows, count = struct.unpack_from("<QQ", data, 4)
    expected = 20 + 4 * count
    if len(data) != expected:
        raise TraceError(
            f"{path}: binary trace length {len(data)} != expected {expected} bytes"
        )
    indices = np.frombuffer(data, dtype="<u4", offset=20, count=count).astype(np.int64)
    if count and rows == 0:
        raise TraceError(f"{path}: rows=0 but trace has {count} indices")
    if count and int(indices.max()) >= rows:
        bad = int(indices.max())
        raise TraceError(f"{path}: index {bad} out of range for rows={rows}")
    return IndexTrace(indices, int(rows))


def _load_text(data: bytes, path) -> IndexTrace:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceError(f"{path}: not valid UTF-8 text: {exc}") from exc
    rows = None
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if rows is None:
            if not line.startswith("rows="):
                raise TraceError(f"{path}:{lineno}: expected header 'rows=<N>'")
            try:
                rows = int(line[5:])
            except ValueError:
                raise TraceError(f"{path}:{lineno}: bad row count {line[5:]!r}") from None
            if rows < 0:
                raise TraceError(f"{path}:{lineno}: rows must be >= 0")
            continue
        try:
            value = int(line)
        except ValueError:
            raise TraceError(f"{path}:{lineno}: expected a decimal index, got {line!r}") from None
        if value < 0 or value >= rows:
            raise TraceError(f"{path}:{lineno}: index {value} out of range for rows={rows}")
        values.append(value)
    if rows is None:
        raise TraceError(f"{path}: missing 'rows=<N>' header")
    return IndexTrace(np.array(values, dtype=np.int64), rows)


def save_trace(trace: IndexTrace, path: str | Path, fmt: str = "text") -> None:
    """Write a trace file atomically (temp file + rename) in the given format."""
    if fmt == "text":
        payload = _trace_text_bytes(trace)
    elif fmt == "binary":
        payload = _trace_binary_bytes(trace)
    else:
        raise TraceError(f"unknown trace format {fmt!r} (text or binary)")
    atomic_write_bytes(path, payload)


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _trace_text_bytes(trace: IndexTrace) -> bytes:
    lines = [f"rows={trace.rows}"]
    lines.extend(str(int(i)) for i in trace.indices)
    return ("\n".join(lines) + "\n").encode("ascii")


def _trace_binary_bytes(trace: IndexTrace) -> bytes:
    if len(trace.indices) and int(trace.indices.max()) >= 1 << 32:
        raise TraceError("binary format stores 32-bit indices; trace exceeds that")
    header = TRACE_MAGIC + struct.pack("<QQ", trace.rows, len(trace.indices))
    return header + trace.indices.astype("<u4").tobytes()


def _hash64(seed: int, table_id: int, salt: int) -> int:
    packed = struct.pack("<QQQ", seed & _MASK64, table_id & _MASK64, salt & _MASK64)
    digest = hashlib.blake2b(packed, digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _affine_params(seed: int, table_id: int, rows: int) -> tuple[int, int]:
    # Table 0 replays the source indices unchanged; other tables get a
    # deterministic affine bijection on [0, rows).
    if table_id == 0:
        return 1, 0
    a = (_hash64(seed, table_id, 0) % rows) | 1
    while math.gcd(a, rows) != 1:
        a += 2
    b = _hash64(seed, table_id, 1) % rows
    return a, b


def expand_trace(
    src: IndexTrace,
    layer: EmbeddingLayer,
    batch_size: int,
    num_batches: int,
) -> FullTrace:
    """Assign source indices to (batch, sample, table, lookup) positions.

    Consumes batch_size * num_batches * lookups_per_sample indices from the
    front of `src`, one group of lookups_per_sample per sample. Every table
    sees the same group through its own affine index bijection, so each
    table's per-index frequency multiset matches the consumed prefix.
    """
    if src.rows != layer.rows_per_table:
        raise TraceError(
            f"trace rows={src.rows} does not match layer rows_per_table={layer.rows_per_table}"
        )
    lps = layer.lookups_per_sample
    need = batch_size * num_batches * lps
    if len(src) < need:
        raise TraceLengthError(need, len(src))
    consumed = src.indices[:need]
    rows = layer.rows_per_table
    tables = layer.num_tables
    seed = src.seed if src.seed is not None else 0

    params = [_affine_params(seed, t, rows) for t in range(tables)]
    a_col = np.array([p[0] for p in params], dtype=np.int64)[:, None]
    b_col = np.array([p[1] for p in params], dtype=np.int64)[:, None]
    if rows <= 1 << 31:
        remapped = (consumed[None, :] * a_col + b_col) % rows
    else:
        # Avoid 64-bit overflow in a * i for very tall tables.
        remapped = np.array(
            [[(a * int(i) + b) % rows for i in consumed] for (a, b) in params],
            dtype=np.int64,
        )

    groups = batch_size * num_batches
    vec = remapped.reshape(tables, groups, lps).transpose(1, 0, 2).reshape(-1)

    per_batch = batch_size * tables * lps
    batch_ids = np.repeat(np.arange(num_batches, dtype=np.int64), per_batch)
    sample_ids = np.tile(
        np.repeat(np.arange(batch_size, dtype=np.int64), tables * lps), num_batches
    )
    table_ids = np.tile(np.repeat(np.arange(tables, dtype=np.int64), lps), groups)

    return FullTrace(
        batch_ids=batch_ids,
        sample_ids=sample_ids,
        table_ids=table_ids,
        vector_indices=np.ascontiguousarray(vec),
        num_batches=num_batches,
        batch_size=batch_size,
        num_tables=tables,
        lookups_per_sample=lps,
        rows_per_table=rows,
    )


def translate_addresses(
    full: FullTrace,
    layer: EmbeddingLayer,
    dtype_bytes: int,
    granularity_bytes: int,
) -> MemoryAccessStream:
    """Lower an expanded trace to granularity-aligned read requests.

    Tables are laid out back to back: table t starts at t * rows * vb where
    vb = dim * dtype_bytes. A lookup of vector (t, i) issues
    ceil(vb / granularity) consecutive aligned reads starting at the largest
    aligned address <= the vector's byte offset.
    """
    vb = layer.dim * dtype_bytes
    gran = granularity_bytes
    span = layer.num_tables * layer.rows_per_table * vb
    if span >= 1 << 63:
        raise ConfigError(
            "offchip address space exceeds the 63-bit addressing bound: "
            f"num_tables * rows_per_table * dim * dtype_bytes = {span}"
        )
    per_lookup = -(-vb // gran)
    base = (full.table_ids * layer.rows_per_table + full.vector_indices) * vb
    start = (base // gran) * gran
    offsets = (np.arange(per_lookup, dtype=np.int64) * gran)[None, :]
    addresses = (start[:, None] + offsets).reshape(-1)
    return MemoryAccessStream(
        addresses=addresses,
        batch_ids=np.repeat(full.batch_ids, per_lookup),
        sample_ids=np.repeat(full.sample_ids, per_lookup),
        table_ids=np.repeat(full.table_ids, per_lookup),
        vector_indices=np.repeat(full.vector_indices, per_lookup),
        size_bytes=gran,
        kind=AccessKind.READ,
    )
