"""VALUE and VERSION indexes: one key per evaluated tuple, suffixed by the primary key."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

from .. import tuples
from ..cursors import Event, kv_range
from ..expressions import KeyWithValue
from ..metadata import IndexType
from ..subspace import Subspace
from .base import IndexMaintainer, register_maintainer


@dataclass(frozen=True)
class TupleRange:
    """A range of index keys described by tuple prefixes.

    ``low``/``high`` bound the leading columns; extensions of an inclusive
    bound are inside the range.  With ``prefix_string`` the last column of
    ``low`` (equal to ``high``) is a string or bytes prefix.
    """

    low: Optional[tuple] = None
    high: Optional[tuple] = None
    low_inclusive: bool = True
    high_inclusive: bool = True
    prefix_string: bool = False

    @classmethod
    def equals(cls, values: tuple) -> "TupleRange":
        return cls(tuple(values), tuple(values))

    @classmethod
    def all(cls) -> "TupleRange":
        return cls()

    def to_bytes(self, subspace: Subspace) -> tuple[bytes, bytes]:
        full_begin, full_end = subspace.range()
        if self.prefix_string:
            packed = subspace.pack(self.low)
            # Drop the terminator so longer strings with this prefix match.
            stem = packed[:-1]
            return stem, stem + b"\xff"
        if self.low is None:
            begin = full_begin
        else:
            packed = subspace.pack(self.low)
            begin = packed if self.low_inclusive else packed + b"\xff"
        if self.high is None:
            end = full_end
        else:
            packed = subspace.pack(self.high)
            end = packed + b"\xff" if self.high_inclusive else packed
        return max(begin, full_begin), min(end, full_end)

    def contains(self, key: tuple) -> bool:
        """Oracle membership test on an unpacked key, by tuple order."""
        if self.prefix_string:
            n = len(self.low)
            if len(key) < n or tuples.compare(key[: n - 1], self.low[:-1]) != 0:
                return False
            last, p = key[n - 1], self.low[-1]
            return type(last) is type(p) and last.startswith(p)
        if self.low is not None:
            c = tuples.compare(key[: len(self.low)], self.low)
            if c < 0 or (c == 0 and not self.low_inclusive):
                return False
        if self.high is not None:
            c = tuples.compare(key[: len(self.high)], self.high)
            if c > 0 or (c == 0 and not self.high_inclusive):
                return False
        return True

    def __str__(self):
        if self.prefix_string:
            return f"[{_render(self.low)}*]"
        lo = "-inf" if self.low is None else _render(self.low)
        hi = "+inf" if self.high is None else _render(self.high)
        return f"{'[' if self.low_inclusive else '('}{lo},{hi}{']' if self.high_inclusive else ')'}"


def _render(t: tuple) -> str:
    from ..predicates import _literal

    parts = [_literal(v) for v in t]
    return parts[0] if len(parts) == 1 else "(" + ", ".join(parts) + ")"


@dataclass(frozen=True)
class IndexEntry:
    key: tuple
    value: tuple
    primary_key: tuple


class ValueMaintainer(IndexMaintainer):
    """Also serves VERSION indexes: entries may embed the record version."""

    @property
    def pk_length(self) -> int:
        meta = self.store.metadata
        return meta.record_type(self.index.record_types[0]).primary_key.column_count

    def _split(self, t: tuple) -> tuple[tuple, tuple]:
        expr = self.index.key_expression
        if isinstance(expr, KeyWithValue):
            return t[: expr.split_point], t[expr.split_point :]
        return t, ()

    def entries(self, rec) -> dict[tuple, tuple]:
        out = {}
        for t in self.evaluate(rec):
            key, value = self._split(t)
            out[key + rec.primary_key] = value
        return out

    def update(self, old, new) -> None:
        old_entries = self.entries(old) if old is not None else {}
        new_entries = self.entries(new) if new is not None else {}
        if old_entries == new_entries:
            return
        for key, value in old_entries.items():
            if new_entries.get(key, _MISSING) != value:
                self._remove(key)
        for key, value in new_entries.items():
            if old_entries.get(key, _MISSING) != value:
                self._write(key, value)

    def _write(self, key: tuple, value: tuple) -> None:
        raw_value = tuples.pack(value) if value else b""
        if tuples.has_incomplete_versionstamp(key):
            template, offset = self.subspace.pack_with_versionstamp(key)
            stamp = next(v for v in _flatten(key) if isinstance(v, tuples.Versionstamp) and not v.complete)
            self.txn.set_versionstamped_key(template, offset, raw_value, stamp.user_version)
        else:
            self.txn.set(self.subspace.pack(key), raw_value)

    def _remove(self, key: tuple) -> None:
        if tuples.has_incomplete_versionstamp(key):
            template, offset = self.subspace.pack_with_versionstamp(key)
            self.txn.unset_versionstamped_key(template, offset)
        else:
            self.txn.clear(self.subspace.pack(key))

    def entry_from_row(self, key: bytes, value: bytes) -> IndexEntry:
        t = self.subspace.unpack(key)
        return IndexEntry(t, tuples.unpack(value) if value else (), t[-self.pk_length :])

    def scan_events(
        self, rng: TupleRange, after: Optional[bytes] = None, reverse: bool = False, check: bool = True
    ) -> Iterator[Event]:
        """Index entries in key order; each event's state is the raw key read."""
        if check:
            self.check_readable()
        begin, end = rng.to_bytes(self.subspace)
        for key, value in kv_range(self.txn, begin, end, reverse, after=after):
            yield Event("item", self.entry_from_row(key, value), key, 1, len(key) + len(value))

    def scan(self, rng: TupleRange = TupleRange(), reverse: bool = False) -> list[IndexEntry]:
        return [ev.value for ev in self.scan_events(rng, reverse=reverse)]

    def all_entries(self) -> list[IndexEntry]:
        """Every stored entry regardless of index state (for checks and stats)."""
        return [ev.value for ev in self.scan_events(TupleRange(), check=False)]


_MISSING = object()


def _flatten(t):
    for v in t:
        if isinstance(v, (tuple, list)):
            yield from _flatten(v)
        else:
            yield v


register_maintainer(IndexType.VALUE, ValueMaintainer)
register_maintainer(IndexType.VERSION, ValueMaintainer)
