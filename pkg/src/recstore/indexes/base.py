from __future__ import annotations

import enum
from typing import TYPE_CHECKING, Any, Callable, Optional

from .. import tuples
from ..metadata import IndexDefinition, IndexType

if TYPE_CHECKING:
    from ..store import RecordStore, StoredRecord


class IndexMaintenanceError(Exception):
    pass


class IndexNotReadable(IndexMaintenanceError):
    pass


class IndexState(enum.Enum):
    DISABLED = "disabled"
    WRITE_ONLY = "write_only"
    READABLE = "readable"

    def encode(self) -> bytes:
        return tuples.pack((self.value,))

    @classmethod
    def decode(cls, raw: Optional[bytes]) -> "IndexState":
        return cls.READABLE if raw is None else cls(tuples.unpack(raw)[0])


class IndexMaintainer:
    """Keeps one index consistent with the records of one store.

    Subclasses implement :meth:`update`; they receive the previous and the
    new stored record (either may be ``None``) already restricted to the
    record types the index covers.
    """

    def __init__(self, store: "RecordStore", index: IndexDefinition):
        self.store = store
        self.index = index
        self.txn = store.txn
        self.subspace = store.index_subspace(index)
        self.secondary = store.index_secondary_subspace(index)

    def passes_filter(self, rec: Optional["StoredRecord"]) -> bool:
        if rec is None:
            return False
        if self.index.filter is None:
            return True
        return self.index.filter.evaluate(rec.record) is True

    def evaluate(self, rec: Optional["StoredRecord"]) -> list[tuple]:
        """Index key tuples for ``rec``; empty when filtered out."""
        if not self.passes_filter(rec):
            return []
        return self.index.key_expression.evaluate(rec.record, self.store.eval_context(rec))

    def update(self, old: Optional["StoredRecord"], new: Optional["StoredRecord"]) -> None:
        raise NotImplementedError

    def clear(self) -> None:
        self.txn.clear_range(*self.subspace.full_range())
        self.txn.clear_range(*self.secondary.full_range())

    def check_readable(self) -> None:
        state = self.store.index_state(self.index.name)
        if state is not IndexState.READABLE:
            raise IndexNotReadable(f"index {self.index.name!r} is {state.value}")


MAINTAINERS: dict[IndexType, Callable[[Any, IndexDefinition], IndexMaintainer]] = {}


def register_maintainer(index_type: IndexType, factory: Callable[[Any, IndexDefinition], IndexMaintainer]) -> None:
    MAINTAINERS[index_type] = factory


def maintainer_for(store: "RecordStore", index: IndexDefinition) -> IndexMaintainer:
    try:
        factory = MAINTAINERS[index.type]
    except KeyError:
        raise IndexMaintenanceError(f"no maintainer registered for {index.type.value}") from None
    return factory(store, index)
