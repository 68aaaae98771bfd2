"""Hit/miss classification of access streams under on-chip management policies.

simulate_onchip is the production classifier. ref_cache_sim is a separate,
deliberately naive replay of the same policy definitions (plain per-set way
lists, linear scans) used to cross-validate the cache models; the two share
no simulation code.
"""

from __future__ import annotations

import logging
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .config import EmbeddingLayer, MemLevelConfig, PolicyConfig, PolicyKind
from .errors import ConfigError, TraceError
from .trace import FullTrace, IndexTrace, MemoryAccessStream, save_trace

_LOG = logging.getLogger(__name__)

# (table_id, vector_index) pairs pack into one int64 key for bulk lookups.
_TAG_SHIFT = 40
_TAG_MASK = (1 << _TAG_SHIFT) - 1


@dataclass(frozen=True)
class BatchCounts:
    hits: int
    misses: int
    onchip_accesses: int
    offchip_accesses: int


@dataclass(eq=False)
class ClassifiedAccesses:
    """Outcome of classifying one access stream.

    offchip_sequence preserves program order; its length equals misses for
    LRU/SRRIP/PINNING and the full stream length for SPM.
    """

    hits: int
    misses: int
    onchip_accesses: int
    offchip_sequence: MemoryAccessStream
    per_batch: dict[int, BatchCounts]

    @property
    def total(self) -> int:
        return self.hits + self.misses


def num_cache_sets(policy: PolicyConfig, capacity_bytes: int) -> int:
    """Set count for a cache policy: capacity / (line_size * associativity)."""
    sets = capacity_bytes // (policy.line_size_bytes * policy.associativity)
    if sets < 1:
        raise ConfigError(
            f"onchip_policy: capacity {capacity_bytes} holds zero sets at "
            f"line {policy.line_size_bytes} x {policy.associativity} ways"
        )
    return sets


class LruCache:
    """Set-associative LRU. Set index = line mod num_sets; MRU insertion."""

    def __init__(self, num_sets: int, associativity: int):
        self.num_sets = num_sets
        self.associativity = associativity
        # line -> None per set, ordered LRU first / MRU last
        self.sets = [OrderedDict() for _ in range(num_sets)]

    def replay(self, lines) -> bytearray:
        """Classify line ids in order; returns 1 per hit, 0 per miss."""
        out = bytearray(len(lines))
        num_sets = self.num_sets
        assoc = self.associativity
        sets = self.sets
        pos = 0
        for ln in lines:
            ways = sets[ln % num_sets]
            if ln in ways:
                ways.move_to_end(ln)
                out[pos] = 1
            else:
                if len(ways) >= assoc:
                    ways.popitem(last=False)
                ways[ln] = None
            pos += 1
        return out


class SrripCache:
    """Set-associative SRRIP, hit-priority variant.

    Insertion rrpv = 2^M - 2, hit sets rrpv = 0. Eviction takes the lowest
    way with rrpv == 2^M - 1, aging every way until one qualifies. Invalid
    ways fill in ascending order before any eviction.
    """

    def __init__(self, num_sets: int, associativity: int, rrpv_bits: int):
        if rrpv_bits < 1:
            raise ConfigError(f"onchip_policy.rrpv_bits: must be >= 1, got {rrpv_bits}")
        self.num_sets = num_sets
        self.associativity = associativity
        self.max_rrpv = (1 << rrpv_bits) - 1
        self.insert_rrpv = self.max_rrpv - 1
        self.tag_way = [dict() for _ in range(num_sets)]
        self.way_tag = [[-1] * associativity for _ in range(num_sets)]
        self.rrpv = [[0] * associativity for _ in range(num_sets)]
        self.filled = [0] * num_sets

    def replay(self, lines) -> bytearray:
        out = bytearray(len(lines))
        num_sets = self.num_sets
        assoc = self.associativity
        max_rrpv = self.max_rrpv
        insert_rrpv = self.insert_rrpv
        tag_way = self.tag_way
        way_tag = self.way_tag
        rrpv = self.rrpv
        filled = self.filled
        pos = 0
        for ln in lines:
            s = ln % num_sets
            tw = tag_way[s]
            way = tw.get(ln)
            if way is not None:
                rrpv[s][way] = 0
                out[pos] = 1
            else:
                rr = rrpv[s]
                if filled[s] < assoc:
                    way = filled[s]
                    filled[s] = way + 1
                else:
                    # age all ways just enough for one to reach max_rrpv
                    delta = max_rrpv - max(rr)
                    if delta > 0:
                        for i in range(assoc):
                            rr[i] += delta
                    way = rr.index(max_rrpv)
                    del tw[way_tag[s][way]]
                tw[ln] = way
                way_tag[s][way] = ln
                rr[way] = insert_rrpv
            pos += 1
        return out


def _coerce_stream(accesses) -> MemoryAccessStream:
    if isinstance(accesses, MemoryAccessStream):
        return accesses
    return MemoryAccessStream.from_accesses(accesses)


def _pack_tags(table_ids: np.ndarray, vector_indices: np.ndarray) -> np.ndarray:
    if len(vector_indices):
        if int(vector_indices.max()) >= 1 << _TAG_SHIFT:
            raise ConfigError(
                f"vector index exceeds the {1 << _TAG_SHIFT} tag-packing bound"
            )
        if int(table_ids.max()) >= 1 << (63 - _TAG_SHIFT):
            raise ConfigError("table id exceeds the tag-packing bound")
    return (table_ids << _TAG_SHIFT) | vector_indices


def _per_batch_counts(
    stream: MemoryAccessStream,
    hit_mask: np.ndarray,
    kind: PolicyKind,
) -> dict[int, BatchCounts]:
    if len(stream) == 0:
        return {}
    batches = stream.batch_ids
    width = int(batches.max()) + 1
    total = np.bincount(batches, minlength=width)
    hits = np.bincount(batches[hit_mask], minlength=width)
    misses = total - hits
    out = {}
    for b in np.flatnonzero(total):
        h = int(hits[b])
        m = int(misses[b])
        if kind is PolicyKind.SPM:
            onchip, offchip = 2 * (h + m), h + m
        elif kind is PolicyKind.PINNING:
            onchip, offchip = h, m
        else:
            onchip, offchip = h + m, m
        out[int(b)] = BatchCounts(h, m, onchip, offchip)
    return out


def simulate_onchip(
    accesses,
    policy: PolicyConfig,
    local_mem: MemLevelConfig,
    pin_set=None,
) -> ClassifiedAccesses:
    """Classify an access stream under the configured policy.

    The stream must be granularity-aligned with request size equal to the
    cache line size for LRU/SRRIP. PINNING requires the pin_set produced by
    profile_hot_vectors. State lives only for the duration of the call; to
    persist cache contents across calls, pass one concatenated stream.
    """
    stream = _coerce_stream(accesses)
    n = len(stream)
    kind = policy.kind

    if kind is PolicyKind.SPM:
        hit_mask = np.zeros(n, dtype=bool)
        classified = ClassifiedAccesses(
            hits=0,
            misses=n,
            onchip_accesses=2 * n,
            offchip_sequence=stream,
            per_batch=_per_batch_counts(stream, hit_mask, kind),
        )
        return classified

    if kind is PolicyKind.PINNING:
        if pin_set is None:
            raise ConfigError("onchip_policy: PINNING requires a pin set")
        keys = _pack_tags(stream.table_ids, stream.vector_indices)
        pin_keys = np.array(
            sorted((t << _TAG_SHIFT) | v for t, v in pin_set), dtype=np.int64
        )
        hit_mask = np.isin(keys, pin_keys) if len(pin_keys) else np.zeros(n, dtype=bool)
        hits = int(hit_mask.sum())
        return ClassifiedAccesses(
            hits=hits,
            misses=n - hits,
            onchip_accesses=hits,
            offchip_sequence=stream.take(np.flatnonzero(~hit_mask)),
            per_batch=_per_batch_counts(stream, hit_mask, kind),
        )

    line = policy.line_size_bytes
    if n and stream.size_bytes != line:
        raise ConfigError(
            f"onchip_policy.line_size_bytes: request size {stream.size_bytes} "
            f"does not match line size {line}"
        )
    if n and int(stream.addresses.min()) < 0:
        raise TraceError("negative address in access stream")
    sets = num_cache_sets(policy, local_mem.capacity_bytes)
    lines = (stream.addresses // line).tolist()
    if kind is PolicyKind.LRU:
        cache = LruCache(sets, policy.associativity)
    else:
        cache = SrripCache(sets, policy.associativity, policy.rrpv_bits or 2)
    outcome = cache.replay(lines)
    hit_mask = np.frombuffer(outcome, dtype=np.uint8).astype(bool)
    hits = int(hit_mask.sum())
    return ClassifiedAccesses(
        hits=hits,
        misses=n - hits,
        onchip_accesses=n,
        offchip_sequence=stream.take(np.flatnonzero(~hit_mask)),
        per_batch=_per_batch_counts(stream, hit_mask, kind),
    )


def profile_hot_vectors(
    full: FullTrace,
    layer: EmbeddingLayer,
    capacity_bytes: int,
    dtype_bytes: int,
) -> frozenset:
    """Pick the k most frequently looked-up vectors, k = capacity / vector bytes.

    Ties break toward ascending (table_id, vector_index).
    """
    if len(full) == 0:
        raise TraceError("cannot profile an empty trace")
    vector_bytes = layer.dim * dtype_bytes
    k = capacity_bytes // vector_bytes
    if k == 0:
        _LOG.warning(
            "pin capacity %d bytes is below one vector (%d bytes); pin set is empty",
            capacity_bytes,
            vector_bytes,
        )
        return frozenset()
    keys = _pack_tags(full.table_ids, full.vector_indices)
    uniq, counts = np.unique(keys, return_counts=True)
    # uniq is ascending, so a stable sort on -count keeps ties lexicographic
    order = np.argsort(-counts, kind="stable")
    top = uniq[order[:k]]
    return frozenset((int(key) >> _TAG_SHIFT, int(key) & _TAG_MASK) for key in top)


def ref_cache_sim(accesses, policy: PolicyConfig, local_mem: MemLevelConfig):
    """Naive reference replay of LRU/SRRIP; returns (hits, misses).

    Kept intentionally simple and structurally unlike the production
    classifier: per-set python lists, linear scans, literal +1 aging rounds.
    """
    stream = _coerce_stream(accesses)
    kind = policy.kind
    if kind not in (PolicyKind.LRU, PolicyKind.SRRIP):
        raise ConfigError(f"ref_cache_sim supports LRU and SRRIP, not {kind.value}")
    line = policy.line_size_bytes
    assoc = policy.associativity
    num_sets = local_mem.capacity_bytes // (line * assoc)
    if num_sets < 1:
        raise ConfigError("ref_cache_sim: zero sets")
    lines = (stream.addresses // line).tolist()

    hits = 0
    if kind is PolicyKind.LRU:
        sets = [[] for _ in range(num_sets)]
        for ln in lines:
            ways = sets[ln % num_sets]
            if ln in ways:
                ways.remove(ln)
                ways.append(ln)
                hits += 1
            else:
                if len(ways) == assoc:
                    ways.pop(0)
                ways.append(ln)
        return hits, len(lines) - hits

    max_rrpv = (1 << (policy.rrpv_bits or 2)) - 1
    tags = [[None] * assoc for _ in range(num_sets)]
    rrpvs = [[max_rrpv] * assoc for _ in range(num_sets)]
    for ln in lines:
        s = ln % num_sets
        t = tags[s]
        r = rrpvs[s]
        if ln in t:
            way = t.index(ln)
            r[way] = 0
            hits += 1
            continue
        if None in t:
            way = t.index(None)
        else:
            while max_rrpv not in r:
                for i in range(assoc):
                    r[i] += 1
            way = r.index(max_rrpv)
        t[way] = ln
        r[way] = max_rrpv - 1
    return hits, len(lines) - hits


def dump_offchip_sequence(classified: ClassifiedAccesses, path) -> None:
    """Write the off-chip line-id sequence in the binary trace format."""
    seq = classified.offchip_sequence
    lines = seq.addresses // seq.size_bytes
    rows = int(lines.max()) + 1 if len(lines) else 0
    save_trace(IndexTrace(lines, rows), path, fmt="binary")
