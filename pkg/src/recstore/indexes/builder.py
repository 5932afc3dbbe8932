"""Online index builds: index existing records in small transactions while writers continue.

The index stays WRITE_ONLY during the build.  Progress is the primary key of
the last record indexed; writers maintain non-idempotent indexes only for
records at or below it, and reading it puts them in conflict with the batch
that moves it.
"""
from __future__ import annotations

import time
import uuid
from dataclasses import dataclass
from typing import Callable, Optional

from .. import tuples
from ..kv import Engine, KVError, NotCommitted, TransactionTooLarge
from ..metadata import RecordMetadata
from .base import IndexMaintenanceError, IndexState


class BuildInProgress(IndexMaintenanceError):
    """Another builder holds an unexpired lease on the index."""


@dataclass
class BuildReport:
    index: str
    records: int = 0
    batches: int = 0
    retries: int = 0
    final_state: IndexState = IndexState.DISABLED


class OnlineIndexBuilder:
    def __init__(
        self,
        engine: Engine,
        location,
        metadata: RecordMetadata,
        index_name: str,
        *,
        batch_size: int = 200,
        max_retries: int = 50,
        lease_ms: float = 10_000,
        owner: Optional[str] = None,
        store_options: Optional[dict] = None,
        clock: Callable[[], float] = time.time,
        on_batch: Optional[Callable[[BuildReport], None]] = None,
    ):
        if batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        self.engine = engine
        self.location = location
        self.metadata = metadata
        self.index = metadata.index(index_name)
        self.batch_size = batch_size
        self.max_retries = max_retries
        self.lease_ms = lease_ms
        self.owner = owner or uuid.uuid4().hex
        self.store_options = store_options or {}
        self.clock = clock
        self.on_batch = on_batch

    def _open(self, txn):
        from ..store import open_record_store

        return open_record_store(txn, self.location, self.metadata, **self.store_options)

    def _take_lease(self, store) -> None:
        key = store.lease_key(self.index)
        raw = store.txn.get(key)
        now_ms = self.clock() * 1000.0
        if raw is not None:
            holder, expires = tuples.unpack(raw)
            if holder != self.owner and expires > now_ms:
                raise BuildInProgress(f"index {self.index.name!r} is being built by {holder}")
        store.txn.set(key, tuples.pack((self.owner, now_ms + self.lease_ms)))

    def _prepare(self, txn) -> bool:
        """Move the index to WRITE_ONLY; True when there is nothing left to do."""
        store = self._open(txn)
        state = store.index_state(self.index.name)
        if state is IndexState.READABLE:
            return True
        self._take_lease(store)
        if state is IndexState.DISABLED:
            store.maintainer(self.index).clear()
            store.set_build_progress(self.index, None)
            if store.is_empty():
                self._finish(store)
                return True
            store.set_index_state(self.index.name, IndexState.WRITE_ONLY)
        return False

    def _finish(self, store) -> None:
        store.set_index_state(self.index.name, IndexState.READABLE)
        store.set_build_progress(self.index, None)
        store.txn.clear(store.lease_key(self.index))

    def _batch(self, txn, limit: int) -> tuple[int, bool]:
        """Index up to ``limit`` records after the progress mark; returns (count, done)."""
        store = self._open(txn)
        if store.index_state(self.index.name) is not IndexState.WRITE_ONLY:
            raise IndexMaintenanceError(f"index {self.index.name!r} left WRITE_ONLY during its build")
        self._take_lease(store)
        maintainer = store.maintainer(self.index)
        after = store.build_progress(self.index)
        count = 0
        last = after
        for ev in store.record_events(after=after):
            if count >= limit:
                break
            last = ev.state
            count += 1
            if ev.kind == "item" and ev.value.type_name in self.index.record_types:
                maintainer.update(None, ev.value)
        done = count < limit
        if done:
            self._finish(store)
        elif last is not None:
            store.set_build_progress(self.index, last)
        return count, done

    def build(self) -> BuildReport:
        report = BuildReport(self.index.name)
        if self.engine.run(self._prepare):
            report.final_state = IndexState.READABLE
            return report
        limit = self.batch_size
        retries_in_row = 0
        while True:
            txn = self.engine.begin()
            try:
                count, done = self._batch(txn, limit)
                txn.commit()
            except KVError as exc:
                txn.cancel()
                if not (exc.retryable or isinstance(exc, TransactionTooLarge)):
                    raise
                report.retries += 1
                retries_in_row += 1
                if retries_in_row > self.max_retries:
                    raise
                # A single conflict is retried as is; anything else shrinks the batch.
                if not isinstance(exc, NotCommitted) or retries_in_row > 1:
                    limit = max(1, limit // 2)
                continue
            retries_in_row = 0
            report.records += count
            report.batches += 1
            if self.on_batch is not None:
                self.on_batch(report)
            if done:
                report.final_state = IndexState.READABLE
                return report
            limit = min(self.batch_size, limit * 2)


def build_index(engine: Engine, location, metadata: RecordMetadata, index_name: str, **kwargs) -> BuildReport:
    return OnlineIndexBuilder(engine, location, metadata, index_name, **kwargs).build()
