"""Streaming cursors with resumable continuations.

A cursor is a generator of :class:`Event` objects.  ``item`` events carry a
result, ``skip`` events report work done without a result (for example a
record rejected by a filter).  Every event carries the cursor state *after*
it, so a page may stop between any two stoppable events and hand the state
back as a continuation.
"""
from __future__ import annotations

import time
import zlib
from dataclasses import dataclass
from typing import Any, Iterator, Optional

from . import tuples
from .kv import Transaction, key_after

CONTINUATION_FORMAT = 1


class InvalidContinuation(ValueError):
    pass


@dataclass
class Event:
    kind: str  # "item" or "skip"
    value: Any
    state: Any
    scanned: int = 0
    nbytes: int = 0
    # Lookahead reads that a merge has not consumed yet cannot end a page,
    # or a tiny limit could stop every page before any progress.
    stoppable: bool = True


@dataclass
class ScanLimits:
    limit: Optional[int] = None  # returned items
    max_records_scanned: Optional[int] = None
    max_bytes_scanned: Optional[int] = None
    time_budget_ms: Optional[float] = None


NO_LIMITS = ScanLimits()


@dataclass
class Page:
    items: list
    continuation: Optional[bytes]
    stop_reason: str = "exhausted"
    scanned: int = 0
    nbytes: int = 0

    @property
    def exhausted(self) -> bool:
        return self.continuation is None


def digest(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def encode_continuation(shape: int, state: Any) -> bytes:
    return tuples.pack((CONTINUATION_FORMAT, shape, state))


def decode_continuation(data: Optional[bytes], shape: int) -> Any:
    """State encoded by :func:`encode_continuation`, or ``None`` to start over."""
    if data is None:
        return None
    try:
        fmt, got, state = tuples.unpack(data)
    except (tuples.TupleError, ValueError, TypeError) as exc:
        raise InvalidContinuation(f"malformed continuation: {exc}") from None
    if fmt != CONTINUATION_FORMAT:
        raise InvalidContinuation(f"unsupported continuation format {fmt}")
    if got != shape:
        raise InvalidContinuation("continuation belongs to a different scan or plan")
    return state


def run_page(events: Iterator[Event], limits: ScanLimits, shape: int) -> Page:
    """Drain ``events`` until exhausted or a limit trips."""
    items: list = []
    scanned = nbytes = 0
    started = time.monotonic()
    for ev in events:
        scanned += ev.scanned
        nbytes += ev.nbytes
        if ev.kind == "item":
            items.append(ev.value)
        if not ev.stoppable:
            continue
        reason = None
        if limits.limit is not None and len(items) >= limits.limit:
            reason = "return-limit"
        elif limits.max_records_scanned is not None and scanned >= limits.max_records_scanned:
            reason = "scan-limit"
        elif limits.max_bytes_scanned is not None and nbytes >= limits.max_bytes_scanned:
            reason = "byte-limit"
        elif limits.time_budget_ms is not None and (time.monotonic() - started) * 1000 >= limits.time_budget_ms:
            reason = "time-limit"
        if reason:
            if hasattr(events, "close"):
                events.close()
            return Page(items, encode_continuation(shape, ev.state), reason, scanned, nbytes)
    return Page(items, None, "exhausted", scanned, nbytes)


def iterate_all(events: Iterator[Event]) -> Iterator[Any]:
    for ev in events:
        if ev.kind == "item":
            yield ev.value


def kv_range(
    txn: Transaction,
    begin: bytes,
    end: bytes,
    reverse: bool = False,
    after: Optional[bytes] = None,
    batch: int = 64,
    snapshot: bool = False,
) -> Iterator[tuple[bytes, bytes]]:
    """Rows of ``[begin, end)`` read lazily in batches, resuming after key ``after``."""
    if after is not None:
        if reverse:
            end = min(end, after)
        else:
            begin = max(begin, key_after(after))
    while begin < end:
        rows = txn.get_range(begin, end, limit=batch, reverse=reverse, snapshot=snapshot)
        yield from rows
        if len(rows) < batch:
            return
        if reverse:
            end = rows[-1][0]
        else:
            begin = key_after(rows[-1][0])
        batch = min(batch * 2, 1024)
