from __future__ import annotations

from typing import Any, Iterable

from . import tuples
from .kv import strinc


class Subspace:
    """A key range identified by a shared byte prefix."""

    __slots__ = ("prefix",)

    def __init__(self, prefix_tuple: Iterable[Any] = (), raw_prefix: bytes = b""):
        self.prefix = tuples.pack(prefix_tuple, raw_prefix)

    @classmethod
    def from_bytes(cls, prefix: bytes) -> "Subspace":
        return cls((), prefix)

    def key(self) -> bytes:
        return self.prefix

    def pack(self, items: Iterable[Any] = ()) -> bytes:
        return tuples.pack(items, self.prefix)

    def pack_with_versionstamp(self, items: Iterable[Any]) -> tuple[bytes, int]:
        return tuples.pack_with_versionstamp(items, self.prefix)

    def unpack(self, key: bytes) -> tuple:
        if not self.contains(key):
            raise ValueError("key is not inside this subspace")
        return tuples.unpack(key, len(self.prefix))

    def range(self, items: Iterable[Any] = ()) -> tuple[bytes, bytes]:
        """Keys strictly extending ``prefix ++ pack(items)``."""
        return tuples.range_of(items, self.prefix)

    def full_range(self) -> tuple[bytes, bytes]:
        """Every key starting with the prefix, including the bare prefix."""
        if not self.prefix:
            return b"", b"\xff"
        return self.prefix, strinc(self.prefix)

    def contains(self, key: bytes) -> bool:
        return key.startswith(self.prefix)

    def subspace(self, items: Iterable[Any]) -> "Subspace":
        return Subspace.from_bytes(tuples.pack(items, self.prefix))

    def __getitem__(self, item: Any) -> "Subspace":
        return self.subspace((item,))

    def __eq__(self, other):
        return isinstance(other, Subspace) and other.prefix == self.prefix

    def __hash__(self):
        return hash(self.prefix)

    def __repr__(self):
        return f"Subspace({self.prefix!r})"
