"""RANK index: an order-statistics skip list stored as ordinary key-value pairs.

Level ``L`` lives under ``(L,)``.  The bare level prefix is the head; each
entry ``(L, *value)`` holds the number of level-0 elements from it (inclusive)
up to the next level-``L`` entry.  The head counts the elements before the
first entry, so the counts of any level sum to the set's size.  No pointers
are stored: following a link is a range read.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

from .. import tuples
from ..cursors import Event, kv_range
from ..expressions import GroupBy
from ..kv import MutationType, Transaction, key_after
from ..metadata import IndexType
from ..subspace import Subspace
from .base import IndexMaintainer, register_maintainer

DEFAULT_LEVELS = 6
_ONE = (1).to_bytes(8, "little")
_MINUS_ONE = ((1 << 64) - 1).to_bytes(8, "little")


def _enc(n: int) -> bytes:
    return (n % (1 << 64)).to_bytes(8, "little")


def _dec(raw: Optional[bytes]) -> int:
    return 0 if raw is None else int.from_bytes(raw, "little", signed=True)


def hashed_level(value: tuple, levels: int = DEFAULT_LEVELS, seed: int = 0) -> int:
    """Top level of ``value``: each promotion happens with probability 1/4.

    Derived from a hash so membership alone fixes the shape of the list.
    """
    h = int.from_bytes(hashlib.blake2b(tuples.pack(value), digest_size=8, key=seed.to_bytes(8, "big")).digest(), "big")
    level = 0
    while level < levels - 1 and h & 3 == 0:
        level += 1
        h >>= 2
    return level


@dataclass
class _Step:
    pred_key: bytes
    pred_value: Optional[tuple]  # None for the head
    pred_rank: int
    pred_count: int
    found_count: Optional[int]  # the count of ``value`` itself when present at this level


class RankedSet:
    def __init__(
        self,
        txn: Transaction,
        subspace: Subspace,
        levels: int = DEFAULT_LEVELS,
        level_fn: Optional[Callable[[tuple], int]] = None,
        seed: int = 0,
    ):
        self.txn = txn
        self.subspace = subspace
        self.levels = levels
        self.level_fn = level_fn or (lambda v: hashed_level(v, levels, seed))
        self.rows_read = 0

    def _head(self, level: int) -> bytes:
        return self.subspace.pack((level,))

    def _key(self, level: int, value: tuple) -> bytes:
        return self.subspace.pack((level,) + tuple(value))

    def _value_of(self, key: bytes) -> tuple:
        return self.subspace.unpack(key)[1:]

    def _read(self, begin: bytes, end: bytes, limit: int = 0) -> list[tuple[bytes, bytes]]:
        rows = self.txn.get_range(begin, end, limit=limit, snapshot=True)
        self.rows_read += len(rows)
        return rows

    def _search(self, value: tuple) -> list[_Step]:
        """Top-down search; returns one step per level, index 0 being level 0."""
        steps: list[_Step] = []
        cur_value: Optional[tuple] = None
        cur_rank = 0
        for level in range(self.levels - 1, -1, -1):
            start = self._head(level) if cur_value is None else self._key(level, cur_value)
            target = self._key(level, value)
            end = key_after(target)
            rows = self._read(start, end)
            # Only the entries passed on the way to ``value`` affect the answer.
            self.txn.add_conflict_range(start, end)
            cur_count = 0
            if rows and rows[0][0] == start:
                cur_count = _dec(rows[0][1])
                rows = rows[1:]
            found = None
            for k, v in rows:
                if k == target:
                    found = _dec(v)
                    break
                cur_rank += cur_count
                cur_value = self._value_of(k)
                cur_count = _dec(v)
            pred_key = self._head(level) if cur_value is None else self._key(level, cur_value)
            steps.append(_Step(pred_key, cur_value, cur_rank, cur_count, found))
        steps.reverse()
        return steps

    def contains(self, value: tuple) -> bool:
        return self.txn.get(self._key(0, tuple(value))) is not None

    def insert(self, value: tuple) -> bool:
        value = tuple(value)
        steps = self._search(value)
        if steps[0].found_count is not None:
            return False
        top = self.level_fn(value)
        rank = steps[0].pred_rank + steps[0].pred_count
        for level, st in enumerate(steps):
            if level == 0:
                self.txn.set(self._key(0, value), _ONE)
            elif level <= top:
                left = rank - st.pred_rank
                self.txn.set(st.pred_key, _enc(left))
                self.txn.set(self._key(level, value), _enc(st.pred_count + 1 - left))
            else:
                self.txn.atomic(MutationType.ADD, st.pred_key, _ONE)
        return True

    def delete(self, value: tuple) -> bool:
        value = tuple(value)
        steps = self._search(value)
        if steps[0].found_count is None:
            return False
        for level, st in enumerate(steps):
            if st.found_count is not None:
                self.txn.clear(self._key(level, value))
                if level > 0:
                    self.txn.set(st.pred_key, _enc(st.pred_count + st.found_count - 1))
            else:
                self.txn.atomic(MutationType.ADD, st.pred_key, _MINUS_ONE)
        return True

    def count_less(self, value: tuple) -> int:
        """How many members sort strictly before ``value`` (a member or not)."""
        st = self._search(tuple(value))[0]
        return st.pred_rank + st.pred_count

    def rank_of(self, value: tuple) -> Optional[int]:
        st = self._search(tuple(value))[0]
        if st.found_count is None:
            return None
        return st.pred_rank + st.pred_count

    def value_at_rank(self, rank: int) -> Optional[tuple]:
        if rank < 0:
            return None
        cur_value: Optional[tuple] = None
        cur_rank = 0
        for level in range(self.levels - 1, -1, -1):
            start = self._head(level) if cur_value is None else self._key(level, cur_value)
            cur_count = _dec(self.txn.get(start, snapshot=True))
            self.rows_read += 1
            level_end = self.subspace.range((level,))[1]
            last = start
            begin = key_after(start)
            done = False
            while not done:
                rows = self._read(begin, level_end, limit=8)
                for k, v in rows:
                    last = k
                    if cur_rank + cur_count > rank:
                        done = True
                        break
                    cur_rank += cur_count
                    cur_value = self._value_of(k)
                    cur_count = _dec(v)
                if len(rows) < 8:
                    done = True
                elif not done:
                    begin = key_after(rows[-1][0])
            self.txn.add_conflict_range(start, key_after(last))
        if cur_value is None or cur_rank != rank:
            return None
        return cur_value

    def size(self) -> int:
        top = self.levels - 1
        begin, end = self._head(top), self.subspace.range((top,))[1]
        self.txn.add_conflict_range(begin, end)
        return sum(_dec(v) for _, v in self._read(begin, end))

    def members(self) -> list[tuple]:
        begin, end = self.subspace.range((0,))
        return [self._value_of(k) for k, _ in self.txn.get_range(begin, end)]

    def check(self) -> list[str]:
        """Count-consistency problems; empty when every level is coherent."""
        problems = []
        members = self.members()
        position = {m: i for i, m in enumerate(members)}
        for level in range(self.levels):
            begin, end = self._head(level), self.subspace.range((level,))[1]
            rows = self.txn.get_range(begin, end)
            head_count = _dec(rows[0][1]) if rows and rows[0][0] == begin else 0
            entries = [(self._value_of(k), _dec(v)) for k, v in rows if k != begin]
            if sum(c for _, c in entries) + head_count != len(members):
                problems.append(f"level {level}: counts sum to {sum(c for _, c in entries) + head_count}, expected {len(members)}")
            starts = [position.get(v) for v, _ in entries]
            if None in starts:
                problems.append(f"level {level}: entry missing from level 0")
                continue
            bounds = starts + [len(members)]
            if entries and head_count != bounds[0]:
                problems.append(f"level {level}: head count {head_count}, expected {bounds[0]}")
            for i, (v, c) in enumerate(entries):
                if c != bounds[i + 1] - bounds[i]:
                    problems.append(f"level {level}: entry {v!r} count {c}, expected {bounds[i + 1] - bounds[i]}")
            if level > 0:
                lower = {self._value_of(k) for k, _ in self.txn.get_range(*self.subspace.range((level - 1,)))}
                for v, _ in entries:
                    if v not in lower:
                        problems.append(f"level {level}: {v!r} absent from level {level - 1}")
        return problems


class RankMaintainer(IndexMaintainer):
    """Keeps plain ordered entries plus one skip list per group."""

    level_fn: Optional[Callable[[tuple], int]] = None

    @property
    def grouping_count(self) -> int:
        expr = self.index.key_expression
        return expr.grouping_count if isinstance(expr, GroupBy) else 0

    @property
    def pk_length(self) -> int:
        return self.store.metadata.record_type(self.index.record_types[0]).primary_key.column_count

    def ranked_set(self, group: tuple = ()) -> RankedSet:
        levels = int(self.index.option("levels", DEFAULT_LEVELS))
        seed = int(self.index.option("seed", 0))
        return RankedSet(self.txn, self.secondary.subspace(tuple(group)), levels, self.level_fn, seed)

    def entries(self, rec) -> set[tuple[tuple, tuple]]:
        n = self.grouping_count
        return {(t[:n], t[n:] + rec.primary_key) for t in self.evaluate(rec)}

    def update(self, old, new) -> None:
        before = self.entries(old) if old is not None else set()
        after = self.entries(new) if new is not None else set()
        if before == after:
            return
        for group, value in sorted(before - after, key=_sort_key):
            self.txn.clear(self.subspace.pack(group + value))
            self.ranked_set(group).delete(value)
        for group, value in sorted(after - before, key=_sort_key):
            self.txn.set(self.subspace.pack(group + value), b"")
            self.ranked_set(group).insert(value)

    # -- queries -------------------------------------------------------------

    def rank_of(self, value: tuple, group: tuple = ()) -> int:
        """Rank of the first entry whose value starts with ``value``."""
        self.check_readable()
        return self.ranked_set(group).count_less(tuple(value))

    def rank_of_entry(self, value: tuple, group: tuple = ()) -> Optional[int]:
        self.check_readable()
        return self.ranked_set(group).rank_of(tuple(value))

    def value_at_rank(self, rank: int, group: tuple = ()) -> Optional[tuple]:
        self.check_readable()
        return self.ranked_set(group).value_at_rank(rank)

    def size(self, group: tuple = ()) -> int:
        self.check_readable()
        return self.ranked_set(group).size()

    def scan_by_rank(
        self, group: tuple, low: int, high: Optional[int], state: Optional[tuple] = None
    ) -> Iterator[Event]:
        """Entries with rank in ``[low, high)``, in rank order.

        Event state is ``(raw_key, rank_of_that_entry)``.
        """
        self.check_readable()
        group = tuple(group)
        if state is None:
            start = self.ranked_set(group).value_at_rank(max(low, 0))
            if start is None:
                return
            after, rank = None, max(low, 0)
            begin = self.subspace.pack(group + start)
        else:
            after, rank = state[0], state[1] + 1
            begin = self.subspace.range(group)[0]
        end = self.subspace.range(group)[1]
        for key, _ in kv_range(self.txn, begin, end, after=after):
            if high is not None and rank >= high:
                return
            t = self.subspace.unpack(key)
            yield Event("item", t[-self.pk_length :], (key, rank), 1, len(key))
            rank += 1

    def all_entries(self) -> list[tuple]:
        begin, end = self.subspace.range()
        return [self.subspace.unpack(k) for k, _ in self.txn.get_range(begin, end)]

    def groups(self) -> list[tuple]:
        n = self.grouping_count
        return sorted({e[:n] for e in self.all_entries()}, key=_tuple_key)


def _tuple_key(t: tuple) -> bytes:
    return tuples.pack(t)


def _sort_key(gv: tuple[tuple, tuple]) -> bytes:
    return tuples.pack(gv[0] + gv[1])


register_maintainer(IndexType.RANK, RankMaintainer)
