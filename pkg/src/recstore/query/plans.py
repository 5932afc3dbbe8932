"""Executable query plans.

Every plan produces an event stream of stored records.  Its continuation
state is whatever lets it resume strictly after the last event: a primary
key, a raw index key, or one state per child for merges.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

from .. import tuples
from ..cursors import NO_LIMITS, Event, Page, ScanLimits, decode_continuation, digest, run_page
from ..indexes.value import TupleRange
from ..predicates import QueryComponent, TextMode, _literal


class Plan:
    #: True when records come out in primary-key order, each at most once.
    pk_ordered = False

    def events(self, store, state) -> Iterator[Event]:
        raise NotImplementedError

    def label(self) -> str:
        raise NotImplementedError

    def children(self) -> tuple["Plan", ...]:
        return ()

    def explain(self, indent: int = 0) -> str:
        lines = ["  " * indent + self.label()]
        lines += [c.explain(indent + 1) for c in self.children()]
        return "\n".join(lines)

    def __str__(self):
        return self.explain()

    def shape(self) -> int:
        return digest(self.explain())

    def execute(self, store, continuation: Optional[bytes] = None, limits: ScanLimits = NO_LIMITS) -> Page:
        shape = self.shape()
        state = decode_continuation(continuation, shape)
        return run_page(self.events(store, state), limits, shape)

    def records(self, store) -> list:
        return [ev.value for ev in self.events(store, None) if ev.kind == "item"]


def _types_label(types: tuple[str, ...]) -> str:
    return ", ".join(types)


@dataclass
class ScanPlan(Plan):
    record_types: tuple[str, ...]
    reverse: bool = False
    all_types: bool = False

    @property
    def pk_ordered(self):
        return not self.reverse

    def label(self):
        return f"SCAN({_types_label(self.record_types)}{' REVERSE' if self.reverse else ''})"

    def events(self, store, state):
        for ev in store.record_events(after=state, reverse=self.reverse):
            if ev.kind == "item" and (self.all_types or ev.value.type_name in self.record_types):
                yield ev
            else:
                yield Event("skip", None, ev.state, ev.scanned, ev.nbytes)


@dataclass
class IndexScanPlan(Plan):
    index: str
    range: TupleRange
    record_types: tuple[str, ...]
    reverse: bool = False
    # Equality covers every key column, so entries are in primary-key order.
    equality_only: bool = False

    @property
    def pk_ordered(self):
        return self.equality_only and not self.reverse

    def label(self):
        return f"ISCAN({self.index} {self.range}{' REVERSE' if self.reverse else ''})"

    def events(self, store, state):
        maintainer = store.maintainer(self.index)
        for ev in maintainer.scan_events(self.range, after=state, reverse=self.reverse):
            rec = store.load_record(ev.value.primary_key)
            if rec is None or rec.type_name not in self.record_types:
                yield Event("skip", None, ev.state, ev.scanned, ev.nbytes)
                continue
            yield Event("item", rec, ev.state, ev.scanned + 1, ev.nbytes + rec.size)


@dataclass
class TextScanPlan(Plan):
    index: str
    mode: TextMode
    tokens: tuple[str, ...]
    window: int
    record_types: tuple[str, ...]
    pk_ordered = True

    def label(self):
        words = " ".join(self.tokens)
        if self.mode is TextMode.PROXIMITY:
            return f'TSCAN({self.index} NEAR("{words}", {self.window}))'
        return f'TSCAN({self.index} {self.mode.name} "{words}")'

    def events(self, store, state):
        maintainer = store.maintainer(self.index)
        after = None if state is None else tuple(state)
        for ev in maintainer.query_events(self.mode, self.tokens, self.window, after=after):
            if ev.kind != "item":
                yield ev
                continue
            pk, _positions = ev.value
            rec = store.load_record(pk)
            if rec is None or rec.type_name not in self.record_types:
                yield Event("skip", None, ev.state, ev.scanned, ev.nbytes)
                continue
            yield Event("item", rec, ev.state, ev.scanned + 1, ev.nbytes + rec.size)


@dataclass
class RankScanPlan(Plan):
    """Records whose rank within ``group`` lies in ``[low, high)``."""

    index: str
    group: tuple
    low: int
    high: Optional[int]
    record_types: tuple[str, ...]

    def label(self):
        group = ", ".join(_literal(v) for v in self.group)
        high = "+inf" if self.high is None else str(self.high)
        return f"RSCAN({self.index} [{group}] rank [{self.low},{high}))"

    def events(self, store, state):
        maintainer = store.maintainer(self.index)
        for ev in maintainer.scan_by_rank(self.group, self.low, self.high, state):
            rec = store.load_record(ev.value)
            if rec is None or rec.type_name not in self.record_types:
                yield Event("skip", None, ev.state, ev.scanned, ev.nbytes)
                continue
            yield Event("item", rec, ev.state, ev.scanned + 1, ev.nbytes + rec.size)


class QueryContext:
    """Store access for predicates that cannot be judged from the record alone."""

    def __init__(self, store):
        self.store = store

    def rank_of_record(self, expression, record) -> Optional[int]:
        from ..metadata import IndexType

        for ix in self.store.metadata.indexes:
            if ix.type is IndexType.RANK and ix.key_expression == expression and self.store.is_readable(ix.name):
                maintainer = self.store.maintainer(ix)
                rt = self.store.metadata.record_type(record.type_name)
                pk = self.store.primary_key(record)
                if rt.name not in ix.record_types:
                    return None
                n = maintainer.grouping_count
                values = expression.evaluate(record)
                if not values:
                    return None
                t = values[0]
                return maintainer.rank_of_entry(t[n:] + pk, t[:n])
        raise LookupError(f"no readable RANK index on {expression}")


@dataclass
class FilterPlan(Plan):
    child: Plan
    predicate: QueryComponent

    @property
    def pk_ordered(self):
        return self.child.pk_ordered

    def label(self):
        return f"FILTER({self.predicate})"

    def children(self):
        return (self.child,)

    def events(self, store, state):
        ctx = QueryContext(store)
        for ev in self.child.events(store, state):
            if ev.kind == "item" and self.predicate.evaluate(ev.value.record, ctx) is not True:
                yield Event("skip", None, ev.state, ev.scanned, ev.nbytes, ev.stoppable)
            else:
                yield ev


def _pk_bytes(rec) -> bytes:
    return tuples.pack(rec.primary_key)


@dataclass
class _Merge(Plan):
    """Shared head management for merges of primary-key ordered children.

    ``consumed[i]`` is the state of child ``i`` up to which everything has
    been emitted or discarded; buffered heads lie beyond it, so a
    continuation made of the consumed states replays them on resume.
    """

    plans: tuple[Plan, ...] = field(default_factory=tuple)
    pk_ordered = True

    def children(self):
        return self.plans

    def _open(self, store, state):
        states = list(state) if state is not None else [None] * len(self.plans)
        if len(states) != len(self.plans):
            raise ValueError("continuation does not match the merge width")
        streams = [p.events(store, s) for p, s in zip(self.plans, states)]
        return streams, states

    def _pull(self, i, streams, consumed, heads):
        """Advance child ``i`` to its next record, yielding the skips on the way."""
        for ev in streams[i]:
            if ev.kind == "item":
                heads[i] = ev
                yield Event("skip", None, tuple(consumed), ev.scanned, ev.nbytes, stoppable=False)
                return
            if ev.stoppable:
                consumed[i] = ev.state
            yield Event("skip", None, tuple(consumed), ev.scanned, ev.nbytes, ev.stoppable)
        heads[i] = None


@dataclass
class UnionPlan(_Merge):
    def label(self):
        return "UNION"

    def events(self, store, state):
        streams, consumed = self._open(store, state)
        heads: list[Optional[Event]] = [None] * len(streams)
        live = set(range(len(streams)))
        for i in range(len(streams)):
            yield from self._pull(i, streams, consumed, heads)
            if heads[i] is None:
                live.discard(i)
        while live:
            low = min(_pk_bytes(heads[i].value) for i in live)
            takers = [i for i in sorted(live) if _pk_bytes(heads[i].value) == low]
            rec = heads[takers[0]].value
            for i in takers:
                consumed[i] = heads[i].state
            yield Event("item", rec, tuple(consumed))
            for i in takers:
                yield from self._pull(i, streams, consumed, heads)
                if heads[i] is None:
                    live.discard(i)


@dataclass
class IntersectionPlan(_Merge):
    def label(self):
        return "INTERSECTION"

    def events(self, store, state):
        streams, consumed = self._open(store, state)
        heads: list[Optional[Event]] = [None] * len(streams)
        for i in range(len(streams)):
            yield from self._pull(i, streams, consumed, heads)
            if heads[i] is None:
                return
        while True:
            keys = [_pk_bytes(h.value) for h in heads]
            top = max(keys)
            if all(k == top for k in keys):
                for i, h in enumerate(heads):
                    consumed[i] = h.state
                yield Event("item", heads[0].value, tuple(consumed))
                behind = range(len(heads))
            else:
                behind = [i for i, k in enumerate(keys) if k < top]
                for i in behind:
                    consumed[i] = heads[i].state
                yield Event("skip", None, tuple(consumed))
            for i in behind:
                yield from self._pull(i, streams, consumed, heads)
                if heads[i] is None:
                    return
