"""Record stores: records, their versions and their indexes under one subspace.

Key layout below the store prefix::

    (0,)                         header
    (1, *pk, -1)                 12-byte commit version of the record
    (1, *pk, 0..n-1)             serialized record, split into chunks
    (2, index_key, ...)          index entries
    (3, index_key)               index state (absent means readable)
    (4, index_key)               online build progress
    (5, index_key, ...)          auxiliary index structures (rank skip lists)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Union

from . import tuples
from .cursors import Event, NO_LIMITS, Page, ScanLimits, decode_continuation, digest, kv_range, run_page
from .expressions import DEFAULT_FUNCTIONS, EvalContext, FunctionRegistry
from .indexes.base import IndexMaintainer, IndexState, maintainer_for
from .keyspace import KeySpacePath
from .kv import Transaction
from .message import Message
from .metadata import (
    FORMAT_VERSION,
    IndexDefinition,
    MetaDataError,
    RecordMetadata,
    RecordType,
    StoreHeader,
)
from .serialization import Serializer
from .subspace import Subspace
from .tuples import Versionstamp

HEADER = 0
RECORDS = 1
INDEX = 2
INDEX_STATE = 3
BUILD_PROGRESS = 4
INDEX_SECONDARY = 5

VERSION_SUFFIX = -1
DEFAULT_CHUNK_SIZE = 100_000


class RecordStoreError(Exception):
    pass


class StaleMetaData(RecordStoreError):
    pass


class StoreNotFound(RecordStoreError):
    pass


class CorruptRecord(RecordStoreError):
    pass


@dataclass
class StoredRecord:
    record: Message
    primary_key: tuple
    record_type: RecordType
    version: Optional[Versionstamp] = None
    size: int = 0
    key_count: int = 0

    @property
    def type_name(self) -> str:
        return self.record_type.name


@dataclass
class SaveResult:
    primary_key: tuple
    is_update: bool
    version: Optional[Versionstamp] = None

    def committed_version(self, txn: Transaction) -> Optional[Versionstamp]:
        """The complete version once ``txn`` has committed."""
        if self.version is None:
            return None
        return Versionstamp(txn.get_versionstamp(), self.version.user_version)


UserVersionHook = Callable[["RecordStore", int, int], Optional[int]]


class RecordStore:
    """Record CRUD and index maintenance for one store, bound to one transaction."""

    def __init__(
        self,
        txn: Transaction,
        subspace: Subspace,
        metadata: RecordMetadata,
        serializer: Optional[Serializer] = None,
        chunk_size: int = DEFAULT_CHUNK_SIZE,
        functions: Optional[FunctionRegistry] = None,
    ):
        if chunk_size <= 0:
            raise ValueError("chunk_size must be positive")
        self.txn = txn
        self.subspace = subspace
        self.metadata = metadata
        self.serializer = serializer or Serializer()
        self.chunk_size = chunk_size
        self.functions = functions or DEFAULT_FUNCTIONS
        self.records = subspace[RECORDS]
        self.header_key = subspace.pack((HEADER,))
        self._states: Optional[dict[int, IndexState]] = None
        self._maintainers: dict[str, IndexMaintainer] = {}
        self._progress: dict[int, Optional[tuple]] = {}

    # -- layout ----------------------------------------------------------------

    def index_subspace(self, index: IndexDefinition | int) -> Subspace:
        key = index if isinstance(index, int) else index.subspace_key
        return self.subspace.subspace((INDEX, key))

    def index_secondary_subspace(self, index: IndexDefinition | int) -> Subspace:
        key = index if isinstance(index, int) else index.subspace_key
        return self.subspace.subspace((INDEX_SECONDARY, key))

    def _state_key(self, index: IndexDefinition | int) -> bytes:
        key = index if isinstance(index, int) else index.subspace_key
        return self.subspace.pack((INDEX_STATE, key))

    def progress_key(self, index: IndexDefinition | int) -> bytes:
        key = index if isinstance(index, int) else index.subspace_key
        return self.subspace.pack((BUILD_PROGRESS, key))

    def lease_key(self, index: IndexDefinition) -> bytes:
        return self.subspace.pack((BUILD_PROGRESS, index.subspace_key, "lease"))

    def header(self) -> Optional[StoreHeader]:
        raw = self.txn.get(self.header_key)
        return None if raw is None else StoreHeader.from_bytes(raw)

    def eval_context(self, rec: StoredRecord) -> EvalContext:
        return EvalContext(rec.version, rec.record_type.type_key, self.functions)

    # -- index states ----------------------------------------------------------------

    def _load_states(self) -> dict[int, IndexState]:
        if self._states is None:
            sub = self.subspace[INDEX_STATE]
            begin, end = sub.range()
            self._states = {
                sub.unpack(k)[0]: IndexState.decode(v) for k, v in self.txn.get_range(begin, end)
            }
        return self._states

    def index_state(self, name: str) -> IndexState:
        ix = self.metadata.index(name)
        return self._load_states().get(ix.subspace_key, IndexState.READABLE)

    def index_states(self) -> dict[str, IndexState]:
        return {ix.name: self.index_state(ix.name) for ix in self.metadata.indexes}

    def set_index_state(self, name: str, state: IndexState) -> None:
        ix = self.metadata.index(name)
        states = self._load_states()
        if state is IndexState.READABLE:
            self.txn.clear(self._state_key(ix))
            states.pop(ix.subspace_key, None)
        else:
            self.txn.set(self._state_key(ix), state.encode())
            states[ix.subspace_key] = state

    def is_readable(self, name: str) -> bool:
        return self.index_state(name) is IndexState.READABLE

    def maintainer(self, index: str | IndexDefinition) -> IndexMaintainer:
        ix = self.metadata.index(index) if isinstance(index, str) else index
        m = self._maintainers.get(ix.name)
        if m is None:
            m = self._maintainers[ix.name] = maintainer_for(self, ix)
        return m

    def build_progress(self, index: IndexDefinition) -> Optional[tuple]:
        """Primary key up to which an online build has inserted entries."""
        if index.subspace_key not in self._progress:
            raw = self.txn.get(self.progress_key(index))
            self._progress[index.subspace_key] = None if raw is None else tuples.unpack(raw)
        return self._progress[index.subspace_key]

    def set_build_progress(self, index: IndexDefinition, last_pk: Optional[tuple]) -> None:
        if last_pk is None:
            self.txn.clear(self.progress_key(index))
        else:
            self.txn.set(self.progress_key(index), tuples.pack(last_pk))
        self._progress[index.subspace_key] = last_pk

    def _built_through(self, index: IndexDefinition, pk: tuple) -> bool:
        last = self.build_progress(index)
        return last is not None and tuples.compare(pk, last) <= 0

    # -- records -------------------------------------------------------------------

    def _local_versions(self) -> dict:
        return self.txn.local.setdefault(("record-versions", self.subspace.prefix), {})

    def primary_key(self, record: Message) -> tuple:
        rt = self.metadata.record_type(record.type_name)
        return rt.primary_key.evaluate_single(record, EvalContext(None, rt.type_key, self.functions))

    def save_record(self, record: Message) -> SaveResult:
        rt = self.metadata.validate_record(record)
        pk = rt.primary_key.evaluate_single(record, EvalContext(None, rt.type_key, self.functions))
        old = self.load_record(pk)
        data = self.serializer.serialize(record, self.metadata)
        if old is not None:
            self.txn.clear_range(*self.records.range(pk))
        for i in range(0, max(len(data), 1), self.chunk_size):
            self.txn.set(self.records.pack(pk + (i // self.chunk_size,)), data[i : i + self.chunk_size])
        version = None
        if self.metadata.store_record_versions:
            counter = self.txn.next_stamp_counter()
            template = b"\x00" * 10 + counter.to_bytes(2, "big")
            self.txn.set_versionstamped_value(self.records.pack(pk + (VERSION_SUFFIX,)), template, 0, counter)
            version = Versionstamp(None, counter)
            self._local_versions()[pk] = version
        n_chunks = max(1, -(-len(data) // self.chunk_size))
        new = StoredRecord(record, pk, rt, version, len(data), n_chunks + (1 if version else 0))
        self._maintain(old, new)
        return SaveResult(pk, old is not None, version)

    def load_record(self, pk: tuple, snapshot: bool = False) -> Optional[StoredRecord]:
        pk = tuple(pk)
        begin, end = self.records.range(pk)
        rows = self.txn.get_range(begin, end, snapshot=snapshot)
        return self._assemble(pk, rows)

    def _assemble(self, pk: tuple, rows: list[tuple[bytes, bytes]]) -> Optional[StoredRecord]:
        version: Optional[Versionstamp] = None
        chunks: list[tuple[int, bytes]] = []
        size = 0
        for key, value in rows:
            t = self.records.unpack(key)
            if len(t) != len(pk) + 1:
                continue  # a longer primary key sharing this prefix
            suffix = t[-1]
            size += len(key) + len(value)
            if suffix == VERSION_SUFFIX:
                version = Versionstamp.from_bytes(value)
            else:
                chunks.append((suffix, value))
        if not chunks:
            if version is not None:
                raise CorruptRecord(f"record {pk!r} has a version but no data")
            return None
        chunks.sort()
        if [c[0] for c in chunks] != list(range(len(chunks))):
            raise CorruptRecord(f"record {pk!r} is missing chunks: found {[c[0] for c in chunks]}")
        if version is None:
            version = self._local_versions().get(pk)
        record = self.serializer.deserialize(b"".join(c[1] for c in chunks), self.metadata)
        rt = self.metadata.record_type(record.type_name)
        return StoredRecord(record, pk, rt, version, size, len(rows))

    def delete_record(self, pk: tuple) -> bool:
        pk = tuple(pk)
        old = self.load_record(pk)
        if old is None:
            return False
        self.txn.clear_range(*self.records.range(pk))
        self._local_versions().pop(pk, None)
        self._maintain(old, None)
        return True

    def record_exists(self, pk: tuple) -> bool:
        begin, end = self.records.range(tuple(pk))
        return bool(self.txn.get_range(begin, end, limit=1))

    def is_empty(self) -> bool:
        begin, end = self.records.full_range()
        return not self.txn.get_range(begin, end, limit=1)

    def _maintain(self, old: Optional[StoredRecord], new: Optional[StoredRecord]) -> None:
        types = {r.type_name for r in (old, new) if r is not None}
        pk = (new or old).primary_key
        for ix in self.metadata.indexes:
            if types.isdisjoint(ix.record_types):
                continue
            state = self.index_state(ix.name)
            if state is IndexState.DISABLED:
                continue
            if state is IndexState.WRITE_ONLY and not ix.type.idempotent and not self._built_through(ix, pk):
                # The online build will index this record when it gets there.
                continue
            o = old if old is not None and old.type_name in ix.record_types else None
            n = new if new is not None and new.type_name in ix.record_types else None
            self.maintainer(ix).update(o, n)

    # -- scans ---------------------------------------------------------------------

    def record_events(
        self, after: Optional[tuple] = None, reverse: bool = False, prefix: tuple = ()
    ) -> Iterator[Event]:
        """Stored records in primary-key order; each event's state is its primary key."""
        if prefix:
            begin, end = self.records.range(prefix)
        else:
            begin, end = self.records.full_range()
        if after is not None:
            after = tuple(after)
            if reverse:
                end = min(end, self.records.pack(after))
            else:
                begin = max(begin, self.records.range(after)[1])
        current: Optional[tuple] = None
        rows: list = []
        for key, value in kv_range(self.txn, begin, end, reverse):
            pk = self.records.unpack(key)[:-1]
            if pk != current and rows:
                yield self._record_event(current, rows)
                rows = []
            current = pk
            rows.append((key, value))
        if rows:
            yield self._record_event(current, rows)

    def _record_event(self, pk: tuple, rows: list) -> Event:
        rec = self._assemble(pk, rows)
        nbytes = sum(len(k) + len(v) for k, v in rows)
        if rec is None:
            return Event("skip", None, pk, 1, nbytes)
        return Event("item", rec, pk, 1, nbytes)

    def _scan_shape(self, reverse: bool, prefix: tuple) -> int:
        return digest(f"records {self.subspace.prefix.hex()} {prefix!r} {reverse}")

    def scan_records(
        self,
        continuation: Optional[bytes] = None,
        limits: ScanLimits = NO_LIMITS,
        reverse: bool = False,
        prefix: tuple = (),
    ) -> Page:
        shape = self._scan_shape(reverse, prefix)
        after = decode_continuation(continuation, shape)
        return run_page(self.record_events(after, reverse, prefix), limits, shape)

    def all_records(self) -> list[StoredRecord]:
        return [ev.value for ev in self.record_events() if ev.kind == "item"]

    # -- queries -------------------------------------------------------------------

    def plan_query(self, query):
        from .query import plan_query

        return plan_query(self, query)

    def execute_query(self, query, continuation: Optional[bytes] = None, limits: ScanLimits = NO_LIMITS) -> Page:
        return self.plan_query(query).execute(self, continuation, limits)


# -- opening -------------------------------------------------------------------------


def _resolve(txn: Transaction, location: Union[Subspace, KeySpacePath, bytes, tuple]) -> Subspace:
    if isinstance(location, Subspace):
        return location
    if isinstance(location, KeySpacePath):
        return location.to_subspace(txn)
    if isinstance(location, bytes):
        return Subspace.from_bytes(location)
    return Subspace(tuple(location))


def open_record_store(
    txn: Transaction,
    location: Union[Subspace, KeySpacePath, bytes, tuple],
    metadata: RecordMetadata,
    *,
    serializer: Optional[Serializer] = None,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    functions: Optional[FunctionRegistry] = None,
    create: bool = True,
    user_version: Optional[int] = None,
    user_version_hook: Optional[UserVersionHook] = None,
) -> RecordStore:
    """Open (creating if needed) the store at ``location`` and reconcile its header.

    ``user_version_hook(store, stored, requested)`` runs when the stored
    application version differs from ``user_version``; it may return the
    version to record.
    """
    problems = metadata.check()
    if problems:
        raise MetaDataError("; ".join(problems))
    store = RecordStore(txn, _resolve(txn, location), metadata, serializer, chunk_size, functions)
    header = store.header()
    if header is None:
        if not create:
            raise StoreNotFound(f"no record store at {store.subspace.prefix!r}")
        store.txn.set(store.header_key, StoreHeader(metadata.version, FORMAT_VERSION, user_version or 0).to_bytes())
        return store
    if header.metadata_version > metadata.version:
        raise StaleMetaData(
            f"store is at metadata version {header.metadata_version}, supplied metadata is {metadata.version}"
        )
    if header.format_version > FORMAT_VERSION:
        raise RecordStoreError(f"store format {header.format_version} is newer than supported {FORMAT_VERSION}")
    new_header = header
    if header.metadata_version < metadata.version:
        _upgrade_indexes(store, header.metadata_version)
        new_header = StoreHeader(metadata.version, new_header.format_version, new_header.user_version)
    if header.format_version < FORMAT_VERSION:
        # Older formats would be emulated here; format 1 is the only one so far.
        new_header = StoreHeader(new_header.metadata_version, FORMAT_VERSION, new_header.user_version)
    if user_version is not None and user_version != header.user_version:
        recorded = user_version
        if user_version_hook is not None:
            result = user_version_hook(store, header.user_version, user_version)
            if result is not None:
                recorded = result
        new_header = StoreHeader(new_header.metadata_version, new_header.format_version, recorded)
    if new_header != header:
        store.txn.set(store.header_key, new_header.to_bytes())
    return store


def _upgrade_indexes(store: RecordStore, old_version: int) -> None:
    meta = store.metadata
    empty = store.is_empty()
    for former in meta.former_indexes:
        if former.removed_at_version > old_version:
            _clear_index_data(store, former.subspace_key)
    for ix in meta.indexes:
        if ix.added_at_version <= old_version:
            continue
        _clear_index_data(store, ix.subspace_key)
        new_types_only = all(meta.record_type(t).since_version > old_version for t in ix.record_types)
        if empty or new_types_only:
            store.set_index_state(ix.name, IndexState.READABLE)
        else:
            store.set_index_state(ix.name, IndexState.DISABLED)


def _clear_index_data(store: RecordStore, subspace_key: int) -> None:
    txn = store.txn
    txn.clear_range(*store.index_subspace(subspace_key).full_range())
    txn.clear_range(*store.index_secondary_subspace(subspace_key).full_range())
    txn.clear(store._state_key(subspace_key))
    txn.clear_range(*store.subspace.subspace((BUILD_PROGRESS, subspace_key)).full_range())
    if store._states is not None:
        store._states.pop(subspace_key, None)


def delete_store(txn: Transaction, location: Union[Subspace, KeySpacePath, bytes, tuple]) -> None:
    """Remove a whole store (records, indexes, header) with one range clear."""
    txn.clear_range(*_resolve(txn, location).full_range())
