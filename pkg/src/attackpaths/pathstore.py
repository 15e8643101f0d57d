"""Binary persistence for finalized paths.

All integers are little-endian two's complement; floats are IEEE 754 doubles.
Record layouts:

* fact: int32 fact ID, one value byte (0 or 1) -- 5 bytes
* entity: int32 entity ID, int32 fact count, facts -- 8 + 5n bytes
* connection: int32 connection ID, then entity1 / link / entity2 each either
  a full entity record or an int32 -1 marker, then int32 environment-fact
  count and that many fact records.  Connection-level environment facts are
  the deltas applied during that connection's assessment.
* path: int32 path ID, int32 connection count, connections, int32
  environment-fact count and records (the full environment state at
  finalization).

Each worker ``w`` owns ``Final paths-{w}.tmp`` plus ``Index-{w}.tmp`` (one
int64 write position per path, path ``n`` at byte ``n * 8``) and one sort
file per sort key holding ``(value, int64 position)`` records in descending
value order, ties broken by ascending position.  Merging concatenates the
final-path files in worker order, rewrites index entries with per-worker
offsets, and builds each merged sort file lazily: the per-worker streams are
k-way merged on highest value and only the offset-adjusted int64 position is
written.
"""

from __future__ import annotations

import heapq
import io
import json
import struct
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Iterator, Optional

from .model import Network
from .traversal import RunSummary, TraversalPath

FACT_RECORD_SIZE = 5
NULL_MARKER_SIZE = 4
MIN_ENTITY_SIZE = 8
INT_SORT_RECORD_SIZE = 12
DOUBLE_SORT_RECORD_SIZE = 16

_I32 = struct.Struct("<i")
_I64 = struct.Struct("<q")
_F64 = struct.Struct("<d")

FINAL_PATHS_TITLE = "Final paths"
INDEX_TITLE = "Index"
OFFSETS_TITLE = "Offsets"
SUMMARY_TITLE = "summary"


class FormatError(Exception):
    pass


class SortKey(Enum):
    ID = ("ID", "i")
    AVAILABILITY = ("Availability", "d")
    CONFIDENTIALITY = ("Confidentiality", "d")
    INTEGRITY = ("Integrity", "d")
    TOTAL_RUN_TIME = ("Total run time", "d")
    TRAVERSABILITY_CHANCE = ("Traversability chance", "d")

    def __init__(self, title: str, kind: str):
        self.title = title
        self.kind = kind

    @property
    def record_size(self) -> int:
        return INT_SORT_RECORD_SIZE if self.kind == "i" else DOUBLE_SORT_RECORD_SIZE

    def pack_value(self, value) -> bytes:
        return _I32.pack(int(value)) if self.kind == "i" else _F64.pack(float(value))

    def unpack_value(self, buf: bytes):
        return (_I32 if self.kind == "i" else _F64).unpack(buf)[0]


def worker_file(directory, title: str, worker: int) -> Path:
    return Path(directory) / f"{title}-{worker}.tmp"


def merged_file(directory, title: str) -> Path:
    return Path(directory) / title


@dataclass(frozen=True)
class MetricVector:
    id: int
    availability: float
    confidentiality: float
    integrity: float
    total_run_time: float
    traversability_chance: float

    def value_for(self, key: SortKey):
        return {
            SortKey.ID: self.id,
            SortKey.AVAILABILITY: self.availability,
            SortKey.CONFIDENTIALITY: self.confidentiality,
            SortKey.INTEGRITY: self.integrity,
            SortKey.TOTAL_RUN_TIME: self.total_run_time,
            SortKey.TRAVERSABILITY_CHANCE: self.traversability_chance,
        }[key]


class MetricsError(Exception):
    pass


def compute_metrics(path: TraversalPath, net: Network) -> MetricVector:
    """Metrics recorded per finalized path.

    ``traversability_chance`` multiplies each crossed link's numeric
    ``traversal_chance`` custom property (1.0 when absent).  The three impact
    metrics accumulate triggered rules' impact annotations as
    ``1 - prod(1 - impact)``.  ``total_run_time`` is milliseconds from
    traversal start to finalization.
    """
    chance = 1.0
    for conn in path.connections:
        if conn.link is None:
            continue
        link = net.links_by_id[conn.link.base_id]
        for cp in link.custom_properties:
            if cp.key == "traversal_chance":
                try:
                    p = float(cp.value)
                except ValueError:
                    raise MetricsError(
                        f"link {link.id}: traversal_chance {cp.value!r} is not a number"
                    ) from None
                if not (0.0 <= p <= 1.0):
                    raise MetricsError(f"link {link.id}: traversal_chance {p} outside [0, 1]")
                chance *= p

    remaining = {"availability": 1.0, "confidentiality": 1.0, "integrity": 1.0}
    for conn in path.connections:
        for rid in conn.triggered_rules:
            rule = net.rules_by_id.get(rid)
            if rule is None:
                continue
            for name in remaining:
                impact = getattr(rule.impacts, name)
                if not (0.0 <= impact <= 1.0):
                    raise MetricsError(f"rule {rid} {name} impact {impact} outside [0, 1]")
                remaining[name] *= 1.0 - impact

    finished = path.finalized_at if path.finalized_at is not None else time.perf_counter()
    return MetricVector(
        id=path.id,
        availability=1.0 - remaining["availability"],
        confidentiality=1.0 - remaining["confidentiality"],
        integrity=1.0 - remaining["integrity"],
        total_run_time=(finished - path.started_at) * 1000.0,
        traversability_chance=chance,
    )


# ---------------------------------------------------------------------------
# Neutral record form used by the codec

@dataclass(frozen=True)
class EntityRecord:
    id: int
    facts: tuple[tuple[int, bool], ...]


@dataclass(frozen=True)
class ConnectionRecord:
    id: int
    entity1: Optional[EntityRecord]
    link: Optional[EntityRecord]
    entity2: Optional[EntityRecord]
    env_facts: tuple[tuple[int, bool], ...] = ()


@dataclass(frozen=True)
class PathRecord:
    id: int
    connections: tuple[ConnectionRecord, ...] = ()
    env_facts: tuple[tuple[int, bool], ...] = ()


def path_to_record(path: TraversalPath) -> PathRecord:
    def ent(v):
        if v is None:
            return None
        return EntityRecord(v.base_id, tuple(v.values.items()))

    return PathRecord(
        id=path.id,
        connections=tuple(
            ConnectionRecord(
                id=c.id,
                entity1=ent(c.entity1),
                link=ent(c.link),
                entity2=ent(c.entity2),
                env_facts=tuple(c.env_changes.items()),
            )
            for c in path.connections
        ),
        env_facts=tuple(path.env_facts.items()),
    )


def canonical_form(record: PathRecord) -> tuple:
    """Scheduling-independent identity of a path: the ordered connection
    fingerprints with IDs stripped.  Two runs enumerate the same paths exactly
    when their canonical multisets match."""
    def ent(e):
        return (e.id, tuple(sorted(e.facts))) if e is not None else None

    return (
        tuple(
            (ent(c.entity1), ent(c.link), ent(c.entity2), tuple(sorted(c.env_facts)))
            for c in record.connections
        ),
        tuple(sorted(record.env_facts)),
    )


# ---------------------------------------------------------------------------
# Codec

def encode_fact(fact_id: int, value: bool) -> bytes:
    return _I32.pack(fact_id) + (b"\x01" if value else b"\x00")


def encode_entity(entity: EntityRecord) -> bytes:
    out = [_I32.pack(entity.id), _I32.pack(len(entity.facts))]
    out += [encode_fact(fid, val) for fid, val in entity.facts]
    return b"".join(out)


def encode_connection(conn: ConnectionRecord) -> bytes:
    out = [_I32.pack(conn.id)]
    for ent in (conn.entity1, conn.link, conn.entity2):
        out.append(_I32.pack(-1) if ent is None else encode_entity(ent))
    out.append(_I32.pack(len(conn.env_facts)))
    out += [encode_fact(fid, val) for fid, val in conn.env_facts]
    return b"".join(out)


def encode_path(path: PathRecord) -> bytes:
    out = [_I32.pack(path.id), _I32.pack(len(path.connections))]
    out += [encode_connection(c) for c in path.connections]
    out.append(_I32.pack(len(path.env_facts)))
    out += [encode_fact(fid, val) for fid, val in path.env_facts]
    return b"".join(out)


def _read(stream: BinaryIO, n: int) -> bytes:
    buf = stream.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated record: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_i32(stream: BinaryIO) -> int:
    return _I32.unpack(_read(stream, 4))[0]


def decode_fact(stream: BinaryIO) -> tuple[int, bool]:
    fid = _read_i32(stream)
    raw = _read(stream, 1)[0]
    if raw not in (0, 1):
        raise FormatError(f"fact {fid}: value byte {raw} is not 0 or 1")
    return fid, bool(raw)


def _decode_entity_after_id(stream: BinaryIO, ident: int) -> EntityRecord:
    count = _read_i32(stream)
    if count < 0:
        raise FormatError(f"entity {ident}: negative fact count {count}")
    return EntityRecord(ident, tuple(decode_fact(stream) for _ in range(count)))


def decode_entity(stream: BinaryIO) -> EntityRecord:
    return _decode_entity_after_id(stream, _read_i32(stream))


def _decode_optional_entity(stream: BinaryIO) -> Optional[EntityRecord]:
    ident = _read_i32(stream)
    if ident == -1:
        return None
    if ident < 0:
        raise FormatError(f"invalid entity marker {ident}")
    return _decode_entity_after_id(stream, ident)


def decode_connection(stream: BinaryIO) -> ConnectionRecord:
    cid = _read_i32(stream)
    entity1 = _decode_optional_entity(stream)
    link = _decode_optional_entity(stream)
    entity2 = _decode_optional_entity(stream)
    count = _read_i32(stream)
    if count < 0:
        raise FormatError(f"connection {cid}: negative environment-fact count")
    env = tuple(decode_fact(stream) for _ in range(count))
    return ConnectionRecord(cid, entity1, link, entity2, env)


def decode_path(stream: BinaryIO) -> PathRecord:
    pid = _read_i32(stream)
    count = _read_i32(stream)
    if count < 0:
        raise FormatError(f"path {pid}: negative connection count")
    conns = tuple(decode_connection(stream) for _ in range(count))
    ecount = _read_i32(stream)
    if ecount < 0:
        raise FormatError(f"path {pid}: negative environment-fact count")
    env = tuple(decode_fact(stream) for _ in range(ecount))
    return PathRecord(pid, conns, env)


def decode_path_bytes(buf: bytes) -> PathRecord:
    return decode_path(io.BytesIO(buf))


# ---------------------------------------------------------------------------
# Per-worker files

class PathWriter:
    """Owns one worker's final-path and index files.  Append-only; exactly
    one writer may ever touch a file."""

    def __init__(self, directory, worker: int):
        self.directory = Path(directory)
        self.worker = worker
        self.paths_file = open(worker_file(directory, FINAL_PATHS_TITLE, worker), "wb")
        self.index_file = open(worker_file(directory, INDEX_TITLE, worker), "wb")
        self.count = 0

    def append(self, path: TraversalPath) -> int:
        return self.append_record(path_to_record(path))

    def append_record(self, record: PathRecord) -> int:
        pos = self.paths_file.tell()
        self.index_file.write(_I64.pack(pos))
        self.paths_file.write(encode_path(record))
        self.count += 1
        return pos

    def close(self):
        self.paths_file.close()
        self.index_file.close()


def read_worker_paths(directory, worker: int) -> Iterator[PathRecord]:
    index = worker_file(directory, INDEX_TITLE, worker)
    finals = worker_file(directory, FINAL_PATHS_TITLE, worker)
    with open(finals, "rb") as fh:
        size = index.stat().st_size
        with open(index, "rb") as ih:
            for _ in range(size // 8):
                pos = _I64.unpack(_read(ih, 8))[0]
                fh.seek(pos)
                yield decode_path(fh)


def write_sort_file(directory, worker: int, key: SortKey, rows: list[tuple[object, int]]) -> Path:
    """Write one worker's sort file: (value, position) rows ordered by value
    descending, ties by position ascending."""
    ordered = sorted(rows, key=lambda r: (-r[0], r[1]) if key.kind == "i" else (-float(r[0]), r[1]))
    target = worker_file(directory, key.title, worker)
    with open(target, "wb") as fh:
        for value, pos in ordered:
            fh.write(key.pack_value(value))
            fh.write(_I64.pack(pos))
    return target


def write_all_sort_files(directory, worker: int, metrics: list[tuple[MetricVector, int]]) -> None:
    for key in SortKey:
        write_sort_file(directory, worker, key, [(m.value_for(key), pos) for m, pos in metrics])


def read_sort_file(path: Path, key: SortKey) -> list[tuple[object, int]]:
    out = []
    width = key.record_size
    with open(path, "rb") as fh:
        while True:
            buf = fh.read(width)
            if not buf:
                break
            if len(buf) != width:
                raise FormatError(f"{path.name}: truncated sort record")
            out.append((key.unpack_value(buf[: width - 8]), _I64.unpack(buf[width - 8 :])[0]))
    return out


# ---------------------------------------------------------------------------
# Merging

def merge_final_and_index(directory, workers: list[int]) -> list[int]:
    """Concatenate worker final-path files in worker order and rewrite the
    index with per-worker byte offsets applied.  Returns the offset table
    (also persisted to the ``Offsets`` file for later invocations)."""
    directory = Path(directory)
    offsets: list[int] = []
    running = 0
    with open(merged_file(directory, FINAL_PATHS_TITLE), "wb") as out_paths, open(
        merged_file(directory, INDEX_TITLE), "wb"
    ) as out_index:
        for w in workers:
            offsets.append(running)
            src = worker_file(directory, FINAL_PATHS_TITLE, w)
            with open(src, "rb") as fh:
                while True:
                    chunk = fh.read(1 << 20)
                    if not chunk:
                        break
                    out_paths.write(chunk)
            with open(worker_file(directory, INDEX_TITLE, w), "rb") as ih:
                while True:
                    buf = ih.read(8)
                    if not buf:
                        break
                    out_index.write(_I64.pack(_I64.unpack(buf)[0] + running))
            running += src.stat().st_size
    with open(merged_file(directory, OFFSETS_TITLE), "w", encoding="utf-8") as fh:
        json.dump({"workers": workers, "offsets": offsets}, fh)
    # A fresh merge invalidates any previously merged sort files.
    for key in SortKey:
        merged_file(directory, key.title).unlink(missing_ok=True)
    return offsets


def read_offsets(directory) -> tuple[list[int], list[int]]:
    with open(merged_file(directory, OFFSETS_TITLE), "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return list(doc["workers"]), list(doc["offsets"])


def merge_sort_files(directory, key: SortKey, workers: list[int], offsets: list[int]) -> Path:
    """Build the merged sort file for one key by k-way merging the worker
    sort files on highest value (ties by adjusted position ascending).  Only
    the offset-adjusted int64 positions are written."""
    directory = Path(directory)
    target = merged_file(directory, key.title)
    streams = []
    width = key.record_size
    try:
        for w, off in zip(workers, offsets):
            streams.append((open(worker_file(directory, key.title, w), "rb"), off))
        heap: list[tuple] = []

        def push(idx):
            fh, off = streams[idx]
            buf = fh.read(width)
            if not buf:
                return
            if len(buf) != width:
                raise FormatError(f"worker {workers[idx]}: truncated sort record")
            value = key.unpack_value(buf[: width - 8])
            pos = _I64.unpack(buf[width - 8 :])[0] + off
            heapq.heappush(heap, (-value if key.kind == "d" else -int(value), pos, idx))

        for i in range(len(streams)):
            push(i)
        with open(target, "wb") as out:
            while heap:
                _, pos, idx = heapq.heappop(heap)
                out.write(_I64.pack(pos))
                push(idx)
    finally:
        for fh, _ in streams:
            fh.close()
    return target


# ---------------------------------------------------------------------------
# Merged-store access

class MergedStore:
    """Read access to a merged run directory."""

    def __init__(self, directory):
        self.directory = Path(directory)

    @property
    def count(self) -> int:
        return merged_file(self.directory, INDEX_TITLE).stat().st_size // 8

    def read_path(self, n: int) -> PathRecord:
        with open(merged_file(self.directory, INDEX_TITLE), "rb") as ih:
            ih.seek(n * 8)
            pos = _I64.unpack(_read(ih, 8))[0]
        return self.read_path_at(pos)

    def read_path_at(self, pos: int) -> PathRecord:
        with open(merged_file(self.directory, FINAL_PATHS_TITLE), "rb") as fh:
            fh.seek(pos)
            return decode_path(fh)

    def iter_paths(self) -> Iterator[PathRecord]:
        count = self.count
        with open(merged_file(self.directory, FINAL_PATHS_TITLE), "rb") as fh:
            for _ in range(count):
                yield decode_path(fh)

    def ensure_sorted(self, key: SortKey) -> Path:
        """Merged sort files are built on first use and reused afterwards."""
        target = merged_file(self.directory, key.title)
        if not target.exists():
            workers, offsets = read_offsets(self.directory)
            merge_sort_files(self.directory, key, workers, offsets)
        return target

    def sorted_positions(self, key: SortKey, k: Optional[int] = None) -> list[int]:
        target = self.ensure_sorted(key)
        out = []
        with open(target, "rb") as fh:
            while k is None or len(out) < k:
                buf = fh.read(8)
                if not buf:
                    break
                out.append(_I64.unpack(buf)[0])
        return out

    def query_sorted(self, key: SortKey, k: int) -> list[tuple[int, PathRecord]]:
        """Top-k paths by the key, best first, as (position, record) pairs."""
        return [(pos, self.read_path_at(pos)) for pos in self.sorted_positions(key, k)]

    def metric_values(self, key: SortKey) -> dict[int, object]:
        """Adjusted position -> sort value, joined from the worker sort files."""
        workers, offsets = read_offsets(self.directory)
        out: dict[int, object] = {}
        for w, off in zip(workers, offsets):
            for value, pos in read_sort_file(worker_file(self.directory, key.title, w), key):
                out[pos + off] = value
        return out


def write_run_summary(directory, summary: RunSummary) -> Path:
    target = merged_file(directory, SUMMARY_TITLE)
    with open(target, "w", encoding="utf-8") as fh:
        json.dump(summary.to_dict(), fh, indent=2)
        fh.write("\n")
    return target


def read_run_summary(directory) -> RunSummary:
    with open(merged_file(directory, SUMMARY_TITLE), "r", encoding="utf-8") as fh:
        return RunSummary.from_dict(json.load(fh))
