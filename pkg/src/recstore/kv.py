"""In-process ordered key-value engine.

Keys and values are byte strings ordered by unsigned lexicographic
comparison.  Transactions read from an MVCC snapshot taken at their read
version and are validated optimistically at commit: a commit fails with
:class:`NotCommitted` when any transaction that committed after the read
version wrote into one of its read-conflict ranges.  Commits are serialized
inside the engine, so the committed history is strictly serializable in
commit-version order.
"""
from __future__ import annotations

import bisect
import enum
import os
import struct
import threading
import time
import weakref
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from sortedcontainers import SortedDict, SortedList

KEY_SIZE_LIMIT = 10_000
VALUE_SIZE_LIMIT = 100_000
TRANSACTION_SIZE_LIMIT = 10_000_000
DEFAULT_TIME_BUDGET_MS = 5_000

VERSION_BYTES = 10
STAMP_BYTES = 12


class KVError(Exception):
    retryable = False


class NotCommitted(KVError):
    """Commit rejected because a read-conflict range was written concurrently."""

    retryable = True

    def __init__(self, read_version: int, conflicting_version: int, bound: int):
        super().__init__(
            f"transaction with read version {read_version} conflicts with commit {conflicting_version}"
        )
        self.read_version = read_version
        self.conflicting_version = conflicting_version
        # Last commit version at the time the conflict check ran.
        self.bound = bound


class TransactionTimedOut(KVError):
    retryable = True


class KeyTooLarge(KVError):
    pass


class ValueTooLarge(KVError):
    pass


class TransactionTooLarge(KVError):
    pass


class InvalidMutation(KVError):
    pass


class TransactionClosed(KVError):
    pass


class MutationType(enum.Enum):
    ADD = "add"
    MIN = "min"
    MAX = "max"
    SET_VERSIONSTAMPED_KEY = "set_versionstamped_key"
    SET_VERSIONSTAMPED_VALUE = "set_versionstamped_value"


def version_bytes(version: int) -> bytes:
    """10-byte commit stamp: 8-byte big-endian counter and two zero bytes."""
    return version.to_bytes(8, "big") + b"\x00\x00"


def version_from_bytes(stamp: bytes) -> int:
    return int.from_bytes(stamp[:8], "big")


def strinc(key: bytes) -> bytes:
    """Smallest key greater than every key having ``key`` as prefix."""
    stripped = key.rstrip(b"\xff")
    if not stripped:
        raise ValueError("key must contain a byte other than 0xff")
    return stripped[:-1] + bytes([stripped[-1] + 1])


def key_after(key: bytes) -> bytes:
    return key + b"\x00"


def apply_atomic(kind: MutationType, existing: Optional[bytes], operand: bytes) -> bytes:
    if kind is MutationType.ADD:
        n = len(operand)
        base = (existing or b"")[:n].ljust(n, b"\x00")
        total = int.from_bytes(base, "little") + int.from_bytes(operand, "little")
        return (total % (1 << (8 * n))).to_bytes(n, "little")
    if kind is MutationType.MIN:
        return operand if existing is None else min(existing, operand)
    if kind is MutationType.MAX:
        return operand if existing is None else max(existing, operand)
    raise InvalidMutation(f"{kind} is not a read-modify-write mutation")


def coalesce(ranges: Iterable[tuple[bytes, bytes]]) -> list[tuple[bytes, bytes]]:
    merged: list[list[bytes]] = []
    for begin, end in sorted(r for r in ranges if r[0] < r[1]):
        if merged and begin <= merged[-1][1]:
            if end > merged[-1][1]:
                merged[-1][1] = end
        else:
            merged.append([begin, end])
    return [(b, e) for b, e in merged]


def ranges_intersect(a: list[tuple[bytes, bytes]], b: list[tuple[bytes, bytes]]) -> bool:
    """Both inputs must be coalesced (sorted, disjoint)."""
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i][1] <= b[j][0]:
            i += 1
        elif b[j][1] <= a[i][0]:
            j += 1
        else:
            return True
    return False


@dataclass
class CommitRecord:
    version: int
    read_version: int
    read_ranges: list
    write_ranges: list
    ops: list


@dataclass
class _Stamped:
    kind: MutationType
    key: bytes
    value: bytes
    offset: int
    counter: int


class Transaction:
    """A single-task unit of work against an :class:`Engine`.

    Writes are buffered until :meth:`commit`.  Reads see the snapshot at
    ``read_version`` overlaid with this transaction's own writes.
    """

    def __init__(self, engine: "Engine", read_version: int, time_budget_ms: Optional[float]):
        self.engine = engine
        self.read_version = read_version
        self.time_budget_ms = DEFAULT_TIME_BUDGET_MS if time_budget_ms is None else time_budget_ms
        self.started_at = time.monotonic()
        self._writes: SortedDict = SortedDict()
        self._cleared: list[tuple[bytes, bytes]] = []
        self._stamped: list[_Stamped] = []
        self._stamp_counter = 0
        self._read_conflicts: list[tuple[bytes, bytes]] = []
        self._write_conflicts: list[tuple[bytes, bytes]] = []
        self.bytes_written = 0
        self.committed_version: Optional[int] = None
        self._closed = False
        # Free-form per-transaction scratch space for layers (e.g. local versions).
        self.local: dict = {}

    # -- bookkeeping -------------------------------------------------------
    def _check(self) -> None:
        if self._closed:
            raise TransactionClosed("transaction already committed or cancelled")
        elapsed_ms = (time.monotonic() - self.started_at) * 1000.0
        if elapsed_ms > self.time_budget_ms:
            raise TransactionTimedOut(
                f"transaction exceeded its {self.time_budget_ms} ms time budget"
            )

    def _note_write(self, size: int) -> None:
        self.bytes_written += size
        if self.bytes_written > TRANSACTION_SIZE_LIMIT:
            raise TransactionTooLarge("transaction exceeds 10,000,000 bytes")

    @staticmethod
    def _check_key(key: bytes) -> None:
        if len(key) > KEY_SIZE_LIMIT:
            raise KeyTooLarge(f"key of {len(key)} bytes exceeds {KEY_SIZE_LIMIT}")

    @staticmethod
    def _check_value(value: bytes) -> None:
        if len(value) > VALUE_SIZE_LIMIT:
            raise ValueTooLarge(f"value of {len(value)} bytes exceeds {VALUE_SIZE_LIMIT}")

    def _in_cleared(self, key: bytes) -> bool:
        i = bisect.bisect_right(self._cleared, (key, b"\xff" * (KEY_SIZE_LIMIT + 1))) - 1
        return i >= 0 and self._cleared[i][0] <= key < self._cleared[i][1]

    def _overlay(self, key: bytes, base: Optional[bytes]) -> Optional[bytes]:
        op = self._writes.get(key)
        if op is None:
            return None if self._in_cleared(key) else base
        tag, payload = op
        if tag == "set":
            return payload
        if tag == "clear":
            return None
        value = base
        for kind, operand in payload:
            value = apply_atomic(kind, value, operand)
        return value

    def elapsed_ms(self) -> float:
        return (time.monotonic() - self.started_at) * 1000.0

    # -- reads -------------------------------------------------------------
    def get(self, key: bytes, snapshot: bool = False) -> Optional[bytes]:
        self._check()
        op = self._writes.get(key)
        if op is not None and op[0] != "atomic":
            return op[1] if op[0] == "set" else None
        if op is None and self._in_cleared(key):
            return None
        if not snapshot:
            self._read_conflicts.append((key, key_after(key)))
        return self._overlay(key, self.engine._snapshot_get(key, self.read_version))

    def get_range(
        self,
        begin: bytes,
        end: bytes,
        limit: int = 0,
        reverse: bool = False,
        snapshot: bool = False,
    ) -> list[tuple[bytes, bytes]]:
        self._check()
        if begin >= end:
            return []
        base = self._base_rows(begin, end, reverse, max(16, min(limit * 2, 4096)) if limit else 4096)
        local = self._writes.irange(begin, end, inclusive=(True, False), reverse=reverse)
        out: list[tuple[bytes, bytes]] = []
        b = next(base, None)
        lk = next(local, None)
        while b is not None or lk is not None:
            if lk is None or (b is not None and b[0] != lk and (b[0] < lk) != reverse):
                key, committed = b
                b = next(base, None)
            elif b is not None and b[0] == lk:
                key, committed = b
                b = next(base, None)
                lk = next(local, None)
            else:
                key, committed = lk, None
                lk = next(local, None)
            value = self._overlay(key, committed)
            if value is None:
                continue
            out.append((key, value))
            if limit and len(out) >= limit:
                break
        if not snapshot:
            if limit and len(out) >= limit:
                last = out[-1][0]
                conflict = (last, end) if reverse else (begin, key_after(last))
            else:
                conflict = (begin, end)
            self._read_conflicts.append(conflict)
        return out

    def _base_rows(self, begin: bytes, end: bytes, reverse: bool, chunk: int):
        # Committed rows, fetched lazily in growing chunks so limited reads stay cheap.
        while True:
            rows = self.engine._snapshot_range(begin, end, self.read_version, reverse, chunk)
            yield from rows
            if len(rows) < chunk:
                return
            if reverse:
                end = rows[-1][0]
            else:
                begin = key_after(rows[-1][0])
            chunk = min(chunk * 2, 65536)

    # -- writes ------------------------------------------------------------
    def set(self, key: bytes, value: bytes) -> None:
        self._check()
        self._check_key(key)
        self._check_value(value)
        self._note_write(len(key) + len(value))
        self._writes[key] = ("set", bytes(value))
        self._drop_stamped_values(key, key_after(key))
        self._write_conflicts.append((key, key_after(key)))

    def clear(self, key: bytes) -> None:
        self._check()
        self._check_key(key)
        self._note_write(len(key))
        self._writes[key] = ("clear", None)
        self._drop_stamped_values(key, key_after(key))
        self._write_conflicts.append((key, key_after(key)))

    def clear_range(self, begin: bytes, end: bytes) -> None:
        self._check()
        if begin >= end:
            return
        self._note_write(len(begin) + len(end))
        for key in list(self._writes.irange(begin, end, inclusive=(True, False))):
            del self._writes[key]
        self._cleared = coalesce(self._cleared + [(begin, end)])
        self._drop_stamped_values(begin, end)
        self._write_conflicts.append((begin, end))

    def _drop_stamped_values(self, begin: bytes, end: bytes) -> None:
        # a later plain write to the same key supersedes a pending stamped value
        if self._stamped:
            self._stamped = [
                s for s in self._stamped
                if not (s.kind is MutationType.SET_VERSIONSTAMPED_VALUE and begin <= s.key < end)
            ]

    def atomic(self, kind: MutationType, key: bytes, operand: bytes) -> None:
        self._check()
        self._check_key(key)
        if kind not in (MutationType.ADD, MutationType.MIN, MutationType.MAX):
            raise InvalidMutation(f"use the versionstamp methods for {kind}")
        if kind is MutationType.ADD and not 1 <= len(operand) <= 8:
            raise InvalidMutation("ADD operand must be a 1..8 byte little-endian integer")
        if not operand:
            raise InvalidMutation("empty operand")
        self._note_write(len(key) + len(operand))
        op = self._writes.get(key)
        if op is None and not self._in_cleared(key):
            self._writes[key] = ("atomic", [(kind, bytes(operand))])
        elif op is not None and op[0] == "atomic":
            op[1].append((kind, bytes(operand)))
        else:
            base = op[1] if op is not None and op[0] == "set" else None
            self._writes[key] = ("set", apply_atomic(kind, base, operand))
        self._write_conflicts.append((key, key_after(key)))

    def next_stamp_counter(self) -> int:
        """Allocate the next 2-byte per-transaction versionstamp counter."""
        counter = self._stamp_counter
        if counter > 0xFFFF:
            raise InvalidMutation("too many versionstamped writes in one transaction")
        self._stamp_counter += 1
        return counter

    def set_versionstamped_key(
        self, key_template: bytes, offset: int, value: bytes, counter: Optional[int] = None
    ) -> int:
        """Write ``value`` under a key whose 12 bytes at ``offset`` are filled at commit.

        Returns the 2-byte counter that will follow the 10-byte commit stamp.
        """
        self._check()
        if not 0 <= offset <= len(key_template) - STAMP_BYTES:
            raise InvalidMutation(f"versionstamp offset {offset} out of range")
        self._check_key(key_template)
        self._check_value(value)
        if counter is None:
            counter = self.next_stamp_counter()
        self._note_write(len(key_template) + len(value))
        self._stamped.append(
            _Stamped(MutationType.SET_VERSIONSTAMPED_KEY, bytes(key_template), bytes(value), offset, counter)
        )
        return counter

    def unset_versionstamped_key(self, key_template: bytes, offset: int) -> bool:
        """Drop a pending versionstamped-key write whose template matches, ignoring stamp bytes."""
        def masked(k: bytes) -> bytes:
            return k[:offset] + k[offset + STAMP_BYTES:]

        target = masked(key_template)
        for i, s in enumerate(self._stamped):
            if (
                s.kind is MutationType.SET_VERSIONSTAMPED_KEY
                and s.offset == offset
                and masked(s.key) == target
            ):
                del self._stamped[i]
                return True
        return False

    def set_versionstamped_value(
        self, key: bytes, value_template: bytes, offset: int, counter: Optional[int] = None
    ) -> int:
        """Write a value whose 12 bytes at ``offset`` are filled at commit.

        Until commit the key reads as absent inside this transaction.
        """
        self._check()
        if not 0 <= offset <= len(value_template) - STAMP_BYTES:
            raise InvalidMutation(f"versionstamp offset {offset} out of range")
        self._check_key(key)
        self._check_value(value_template)
        if counter is None:
            counter = self.next_stamp_counter()
        self._note_write(len(key) + len(value_template))
        self._writes[key] = ("clear", None)
        self._drop_stamped_values(key, key_after(key))
        self._stamped.append(
            _Stamped(MutationType.SET_VERSIONSTAMPED_VALUE, bytes(key), bytes(value_template), offset, counter)
        )
        self._write_conflicts.append((key, key_after(key)))
        return counter

    def add_conflict_range(self, begin: bytes, end: bytes, mode: str = "read") -> None:
        self._check()
        if begin >= end:
            return
        if mode == "read":
            self._read_conflicts.append((begin, end))
        elif mode == "write":
            self._write_conflicts.append((begin, end))
        else:
            raise ValueError(f"unknown conflict mode {mode!r}")

    def add_conflict_key(self, key: bytes, mode: str = "read") -> None:
        self.add_conflict_range(key, key_after(key), mode)

    # -- lifecycle ---------------------------------------------------------
    @property
    def is_read_only(self) -> bool:
        return not (self._writes or self._cleared or self._stamped or self._write_conflicts)

    def read_conflict_ranges(self) -> list[tuple[bytes, bytes]]:
        return coalesce(self._read_conflicts)

    def write_conflict_ranges(self) -> list[tuple[bytes, bytes]]:
        return coalesce(self._write_conflicts)

    def commit(self) -> int:
        self._check()
        conflict_bytes = sum(len(b) + len(e) for b, e in self._read_conflicts)
        conflict_bytes += sum(len(b) + len(e) for b, e in self._write_conflicts)
        if self.bytes_written + conflict_bytes > TRANSACTION_SIZE_LIMIT:
            raise TransactionTooLarge("transaction exceeds 10,000,000 bytes")
        try:
            version = self.engine._commit(self)
        finally:
            self._closed = True
        self.committed_version = version
        return version

    def cancel(self) -> None:
        self._closed = True

    def get_versionstamp(self) -> bytes:
        if self.committed_version is None:
            raise KVError("versionstamp is only known after a successful commit")
        return version_bytes(self.committed_version)


class Engine:
    """Shared handle to the ordered store; safe to use from several threads."""

    def __init__(
        self,
        journal_path: Optional[str] = None,
        time_budget_ms: float = DEFAULT_TIME_BUDGET_MS,
        record_history: bool = False,
        fsync: bool = False,
    ):
        self._lock = threading.RLock()
        self._keys: SortedList = SortedList()
        self._history: dict[bytes, list[tuple[int, Optional[bytes]]]] = {}
        self._version = 0
        self._commit_log: deque = deque()
        self._live: "weakref.WeakSet[Transaction]" = weakref.WeakSet()
        self._cache: Optional[tuple[int, float]] = None
        self.time_budget_ms = time_budget_ms
        self.history: Optional[list[CommitRecord]] = [] if record_history else None
        self.commit_count = 0
        self.conflict_count = 0
        self._fsync = fsync
        self._journal = None
        if journal_path is not None:
            if os.path.exists(journal_path):
                self._replay(journal_path)
            self._journal = open(journal_path, "ab")

    # -- versions ----------------------------------------------------------
    @property
    def version(self) -> int:
        return self._version

    def read_version(self) -> int:
        with self._lock:
            return self._version

    def cached_read_version(self, max_staleness_ms: float, min_version: int = 0) -> int:
        """Serve a recently fetched version when fresh enough and not older than ``min_version``."""
        now = time.monotonic()
        with self._lock:
            if self._cache is not None:
                cached, fetched_at = self._cache
                if (now - fetched_at) * 1000.0 < max_staleness_ms and cached >= min_version:
                    return cached
            latest = self._version
            self._cache = (latest, now)
            return latest

    def begin(
        self,
        time_budget_ms: Optional[float] = None,
        causal_read_risky: bool = False,
        max_staleness_ms: float = 0,
        min_version: int = 0,
    ) -> Transaction:
        if causal_read_risky or max_staleness_ms:
            rv = self.cached_read_version(max_staleness_ms, min_version)
        else:
            rv = self.read_version()
        budget = self.time_budget_ms if time_budget_ms is None else time_budget_ms
        txn = Transaction(self, rv, budget)
        with self._lock:
            self._live.add(txn)
        return txn

    def run(self, fn: Callable[[Transaction], object], max_attempts: int = 100, **begin_opts):
        """Run ``fn`` in a fresh transaction, retrying retryable failures."""
        last: Optional[KVError] = None
        for _ in range(max_attempts):
            txn = self.begin(**begin_opts)
            try:
                result = fn(txn)
                txn.commit()
                return result
            except KVError as exc:
                txn.cancel()
                if not exc.retryable:
                    raise
                last = exc
        assert last is not None
        raise last

    # -- snapshot access ---------------------------------------------------
    def _value_at(self, key: bytes, version: int) -> Optional[bytes]:
        hist = self._history.get(key)
        if not hist:
            return None
        i = bisect.bisect_right(hist, version, key=lambda h: h[0]) - 1
        return hist[i][1] if i >= 0 else None

    def _snapshot_get(self, key: bytes, version: int) -> Optional[bytes]:
        with self._lock:
            return self._value_at(key, version)

    def _snapshot_range(self, begin: bytes, end: bytes, version: int, reverse: bool, limit: int = 0):
        with self._lock:
            out = []
            for key in self._keys.irange(begin, end, inclusive=(True, False), reverse=reverse):
                value = self._value_at(key, version)
                if value is not None:
                    out.append((key, value))
                    if limit and len(out) >= limit:
                        break
            return out

    def latest_range(self, begin: bytes = b"", end: bytes = b"\xff\xff") -> list[tuple[bytes, bytes]]:
        """Committed contents of ``[begin, end)`` at the latest version (test helper)."""
        return self._snapshot_range(begin, end, self._version, False)

    # -- commit ------------------------------------------------------------
    def _horizon(self) -> int:
        versions = [t.read_version for t in list(self._live) if not t._closed]
        return min(versions) if versions else self._version

    def _put(self, key: bytes, version: int, value: Optional[bytes]) -> None:
        hist = self._history.get(key)
        if hist is None:
            if value is None:
                return
            hist = self._history[key] = []
            self._keys.add(key)
        hist.append((version, value))

    def _latest(self, key: bytes) -> Optional[bytes]:
        hist = self._history.get(key)
        return hist[-1][1] if hist else None

    def _commit(self, txn: Transaction) -> int:
        with self._lock:
            self._live.discard(txn)
            if txn.is_read_only:
                return txn.read_version
            reads = txn.read_conflict_ranges()
            if reads:
                for version, writes in reversed(self._commit_log):
                    if version <= txn.read_version:
                        break
                    if ranges_intersect(reads, writes):
                        self.conflict_count += 1
                        raise NotCommitted(txn.read_version, version, self._version)
            version = self._version + 1
            stamp = version_bytes(version)
            ops: list[tuple] = []
            touched: list[bytes] = []
            for begin, end in txn._cleared:
                for key in list(self._keys.irange(begin, end, inclusive=(True, False))):
                    if self._latest(key) is not None:
                        self._put(key, version, None)
                        touched.append(key)
                ops.append(("clear_range", begin, end))
            for key, (tag, payload) in txn._writes.items():
                if tag == "set":
                    value = payload
                elif tag == "clear":
                    value = None
                else:
                    value = self._latest(key)
                    for kind, operand in payload:
                        value = apply_atomic(kind, value, operand)
                if value is None:
                    if self._latest(key) is not None:
                        self._put(key, version, None)
                    ops.append(("clear", key, b""))
                else:
                    self._put(key, version, value)
                    ops.append(("set", key, value))
            write_ranges = list(txn._write_conflicts)
            for s in txn._stamped:
                full = stamp + s.counter.to_bytes(2, "big")
                if s.kind is MutationType.SET_VERSIONSTAMPED_KEY:
                    key = s.key[: s.offset] + full + s.key[s.offset + STAMP_BYTES:]
                    value = s.value
                    write_ranges.append((key, key_after(key)))
                else:
                    key = s.key
                    value = s.value[: s.offset] + full + s.value[s.offset + STAMP_BYTES:]
                self._put(key, version, value)
                ops.append(("set", key, value))
            touched.extend(op[1] for op in ops if op[0] != "clear_range")
            writes = coalesce(write_ranges)
            self._commit_log.append((version, writes))
            self._version = version
            self.commit_count += 1
            if self._journal is not None:
                self._append_journal(stamp, ops)
            if self.history is not None:
                self.history.append(CommitRecord(version, txn.read_version, reads, writes, ops))
            self._collect(touched)
            return version

    def _collect(self, keys: list[bytes]) -> None:
        horizon = self._horizon()
        while self._commit_log and self._commit_log[0][0] <= horizon:
            self._commit_log.popleft()
        for key in keys:
            hist = self._history.get(key)
            if not hist or len(hist) < 2:
                if hist and hist[-1][1] is None and hist[-1][0] <= horizon:
                    del self._history[key]
                    self._keys.discard(key)
                continue
            # Keep the newest entry visible at the horizon plus everything after it.
            i = bisect.bisect_right(hist, horizon, key=lambda h: h[0]) - 1
            if i > 0:
                del hist[:i]
            if len(hist) == 1 and hist[0][1] is None and hist[0][0] <= horizon:
                del self._history[key]
                self._keys.discard(key)

    # -- journal -----------------------------------------------------------
    _TAGS = {"set": 1, "clear": 2, "clear_range": 3}

    def _append_journal(self, stamp: bytes, ops: list[tuple]) -> None:
        body = bytearray(stamp)
        body += struct.pack(">I", len(ops))
        for tag, key, value in ops:
            body += struct.pack(">BI", self._TAGS[tag], len(key)) + key
            body += struct.pack(">I", len(value)) + value
        self._journal.write(struct.pack(">I", len(body)) + bytes(body))
        self._journal.flush()
        if self._fsync:
            os.fsync(self._journal.fileno())

    def _replay(self, path: str) -> None:
        tags = {v: k for k, v in self._TAGS.items()}
        with open(path, "rb") as fh:
            data = fh.read()
        pos = 0
        while pos + 4 <= len(data):
            (length,) = struct.unpack_from(">I", data, pos)
            if pos + 4 + length > len(data):
                break  # torn tail write
            body = data[pos + 4: pos + 4 + length]
            pos += 4 + length
            version = version_from_bytes(body[:VERSION_BYTES])
            (count,) = struct.unpack_from(">I", body, VERSION_BYTES)
            off = VERSION_BYTES + 4
            for _ in range(count):
                tag, klen = struct.unpack_from(">BI", body, off)
                off += 5
                key = body[off: off + klen]
                off += klen
                (vlen,) = struct.unpack_from(">I", body, off)
                off += 4
                value = body[off: off + vlen]
                off += vlen
                kind = tags[tag]
                if kind == "set":
                    self._replace(key, value)
                elif kind == "clear":
                    self._replace(key, None)
                else:
                    for k in list(self._keys.irange(key, value, inclusive=(True, False))):
                        self._replace(k, None)
            self._version = version

    def _replace(self, key: bytes, value: Optional[bytes]) -> None:
        if value is None:
            if key in self._history:
                del self._history[key]
                self._keys.discard(key)
        else:
            if key not in self._history:
                self._keys.add(key)
            self._history[key] = [(0, value)]

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None
