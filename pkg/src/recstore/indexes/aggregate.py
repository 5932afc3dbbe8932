"""Aggregate indexes kept with atomic mutations, so concurrent writers never conflict.

COUNT, COUNT_UPDATES, COUNT_NON_NULL and SUM store an 8-byte little-endian
two's-complement counter per group, updated with atomic ADD.  MIN_EVER and
MAX_EVER store an 8-byte offset-binary big-endian value, whose byte order
matches numeric order, updated with atomic MIN/MAX.
"""
from __future__ import annotations

from collections import Counter
from typing import Optional

from ..expressions import GroupBy
from ..kv import MutationType
from ..metadata import IndexType
from .base import IndexMaintainer, IndexMaintenanceError, register_maintainer

_OFFSET = 1 << 63


def encode_counter(n: int) -> bytes:
    return (n % (1 << 64)).to_bytes(8, "little")


def decode_counter(raw: bytes) -> int:
    return int.from_bytes(raw, "little", signed=True)


def encode_ordered(n: int) -> bytes:
    return (n + _OFFSET).to_bytes(8, "big")


def decode_ordered(raw: bytes) -> int:
    return int.from_bytes(raw, "big") - _OFFSET


class AggregateMaintainer(IndexMaintainer):
    def split(self, t: tuple) -> tuple[tuple, tuple]:
        expr = self.index.key_expression
        if isinstance(expr, GroupBy):
            n = expr.grouping_count
            return t[:n], t[n:]
        return t, ()

    def contributions(self, rec) -> Counter:
        """Per-group amount this record adds (counts or sums)."""
        out: Counter = Counter()
        if rec is None:
            return out
        kind = self.index.type
        for t in self.evaluate(rec):
            group, value = self.split(t)
            if kind in (IndexType.COUNT, IndexType.COUNT_UPDATES):
                out[group] += 1
            elif kind is IndexType.COUNT_NON_NULL:
                if all(v is not None for v in value):
                    out[group] += 1
            elif kind is IndexType.SUM:
                (v,) = value
                if v is None:
                    continue
                if not isinstance(v, int) or isinstance(v, bool):
                    raise IndexMaintenanceError(f"SUM index {self.index.name!r} needs integers, got {v!r}")
                out[group] += v
        return out

    def extremes(self, rec) -> list[tuple[tuple, int]]:
        out = []
        for t in self.evaluate(rec):
            group, (v,) = self.split(t)
            if v is None:
                continue
            if not isinstance(v, int) or isinstance(v, bool):
                raise IndexMaintenanceError(f"{self.index.type.value} index {self.index.name!r} needs integers")
            out.append((group, v))
        return out

    def update(self, old, new) -> None:
        kind = self.index.type
        if kind in (IndexType.MIN_EVER, IndexType.MAX_EVER):
            # Never decremented: only values being written now matter.
            if new is None:
                return
            new_vals = self.extremes(new)
            if old is not None and Counter(self.extremes(old)) == Counter(new_vals):
                return
            op = MutationType.MIN if kind is IndexType.MIN_EVER else MutationType.MAX
            for group, v in new_vals:
                self.txn.atomic(op, self.subspace.pack(group), encode_ordered(v))
            return
        if kind is IndexType.COUNT_UPDATES:
            # Every save counts, even one that changes nothing.
            for group, n in self.contributions(new).items():
                self.txn.atomic(MutationType.ADD, self.subspace.pack(group), encode_counter(n))
            return
        delta = self.contributions(new)
        delta.subtract(self.contributions(old))
        for key, n in sorted((self.subspace.pack(g), n) for g, n in delta.items() if n):
            self.txn.atomic(MutationType.ADD, key, encode_counter(n))

    def _decode(self, raw: bytes) -> int:
        if self.index.type in (IndexType.MIN_EVER, IndexType.MAX_EVER):
            return decode_ordered(raw)
        return decode_counter(raw)

    def get(self, group: tuple = (), check: bool = True) -> Optional[int]:
        if check:
            self.check_readable()
        raw = self.txn.get(self.subspace.pack(tuple(group)))
        if raw is None:
            return None if self.index.type in (IndexType.MIN_EVER, IndexType.MAX_EVER) else 0
        return self._decode(raw)

    def all_groups(self, check: bool = False) -> dict[tuple, int]:
        if check:
            self.check_readable()
        begin, end = self.subspace.full_range()
        out = {self.subspace.unpack(k): self._decode(v) for k, v in self.txn.get_range(begin, end)}
        if self.index.type not in (IndexType.MIN_EVER, IndexType.MAX_EVER):
            out = {g: v for g, v in out.items() if v != 0}
        return out


for _t in (
    IndexType.COUNT,
    IndexType.COUNT_UPDATES,
    IndexType.COUNT_NON_NULL,
    IndexType.SUM,
    IndexType.MIN_EVER,
    IndexType.MAX_EVER,
):
    register_maintainer(_t, AggregateMaintainer)
