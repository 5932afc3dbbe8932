"""Directory layer (long names to small integer prefixes) and the KeySpace path API."""
from __future__ import annotations

import random
from typing import Any, Optional, Sequence

from . import tuples
from .kv import MutationType, Transaction
from .subspace import Subspace

_ONE = (1).to_bytes(8, "little")
_WINDOW_BASE = 64


class KeySpaceError(ValueError):
    pass


def _window_size(start: int) -> int:
    # Windows are [0, 64), [64, 192), [192, 448), ...: each one twice the last.
    return start + _WINDOW_BASE


class DirectoryLayer:
    """Maps paths of names to short, prefix-free key prefixes.

    Each directory receives a small integer ``n`` from a sliding-window
    allocator; its content prefix is ``pack((n,))``.  Mappings live under the
    node prefix (``0xFE`` by default), outside every allocated prefix.
    """

    def __init__(self, node_prefix: bytes = b"\xfe", rng: Optional[random.Random] = None):
        self.nodes = Subspace.from_bytes(node_prefix)
        self._paths = self.nodes.subspace(("path",))
        self._counters = self.nodes.subspace(("hca", 0))
        self._recent = self.nodes.subspace(("hca", 1))
        self._rng = rng or random.Random()

    def _current_window(self, txn: Transaction) -> tuple[int, int]:
        begin, end = self._counters.range()
        rows = txn.get_range(begin, end, limit=1, reverse=True, snapshot=True)
        if not rows:
            return 0, 0
        (start,) = self._counters.unpack(rows[0][0])
        return start, int.from_bytes(rows[0][1], "little")

    def allocate(self, txn: Transaction) -> int:
        start, count = self._current_window(txn)
        size = _window_size(start)
        if (count + 1) * 2 > size:
            # Half full: slide to the next, twice larger, window.
            txn.clear_range(self._counters.range()[0], self._counters.pack((start + size,)))
            txn.clear_range(self._recent.range()[0], self._recent.pack((start + size,)))
            start += size
            size = _window_size(start)
        txn.atomic(MutationType.ADD, self._counters.pack((start,)), _ONE)
        while True:
            candidate = start + self._rng.randrange(size)
            slot = self._recent.pack((candidate,))
            taken = txn.get(slot, snapshot=True)
            # Conflict only on the chosen slot so unrelated allocations never collide.
            txn.add_conflict_key(slot, "read")
            if taken is None:
                txn.set(slot, b"")
                return candidate

    def prefix_int(self, txn: Transaction, path: Sequence[str], create: bool = True) -> Optional[int]:
        if not path:
            raise KeySpaceError("directory path must not be empty")
        node_key = self._paths.pack(tuple(path))
        existing = txn.get(node_key)
        if existing is not None:
            return tuples.unpack(existing)[0]
        if not create:
            return None
        n = self.allocate(txn)
        txn.set(node_key, tuples.pack((n,)))
        return n

    def open(self, txn: Transaction, path: Sequence[str], create: bool = True) -> Optional[Subspace]:
        n = self.prefix_int(txn, path, create)
        return None if n is None else Subspace((n,))

    def list_prefixes(self, txn: Transaction) -> dict[tuple, int]:
        begin, end = self._paths.range()
        return {
            self._paths.unpack(k): tuples.unpack(v)[0] for k, v in txn.get_range(begin, end)
        }


_TYPES: dict[str, tuple[type, ...]] = {
    "null": (type(None),),
    "string": (str,),
    "long": (int,),
    "bytes": (bytes,),
    "boolean": (bool,),
}

ANY_VALUE = object()


class KeySpaceDirectory:
    """One level of a KeySpace tree.

    ``value`` pins the segment to a constant; otherwise any value of
    ``key_type`` is accepted.  With ``use_directory`` the (string) value is
    replaced by a small integer from the directory layer when resolved.
    """

    def __init__(
        self,
        name: str,
        key_type: str,
        value: Any = ANY_VALUE,
        use_directory: bool = False,
        children: Sequence["KeySpaceDirectory"] = (),
    ):
        if key_type not in _TYPES:
            raise KeySpaceError(f"unknown key type {key_type!r}")
        if use_directory and key_type != "string":
            raise KeySpaceError("directory-backed segments must be strings")
        self.name = name
        self.key_type = key_type
        self.value = value
        self.use_directory = use_directory
        self.children: dict[str, KeySpaceDirectory] = {}
        for child in children:
            self.add(child)

    def add(self, child: "KeySpaceDirectory") -> "KeySpaceDirectory":
        if child.name in self.children:
            raise KeySpaceError(f"duplicate directory name {child.name!r}")
        consts = [c.value for c in self.children.values()]
        if child.value is not ANY_VALUE and child.value in consts:
            raise KeySpaceError("sibling directories must not share a constant value")
        self.children[child.name] = child
        return self

    def check(self, value: Any) -> Any:
        if value is None and self.value is not ANY_VALUE:
            value = self.value
        if self.key_type == "long" and isinstance(value, bool):
            raise KeySpaceError(f"segment {self.name!r} expects long, got bool")
        if not isinstance(value, _TYPES[self.key_type]):
            raise KeySpaceError(
                f"segment {self.name!r} expects {self.key_type}, got {type(value).__name__}"
            )
        if self.value is not ANY_VALUE and value != self.value:
            raise KeySpaceError(f"segment {self.name!r} is fixed to {self.value!r}")
        return value


class KeySpace:
    def __init__(self, *roots: KeySpaceDirectory, directory_layer: Optional[DirectoryLayer] = None):
        self.root = KeySpaceDirectory("/", "null", None)
        for r in roots:
            self.root.add(r)
        self.directory_layer = directory_layer or DirectoryLayer()

    def path(self, name: str, value: Any = None) -> "KeySpacePath":
        return KeySpacePath(self, self.root, ()).add(name, value)


class KeySpacePath:
    def __init__(self, keyspace: KeySpace, node: KeySpaceDirectory, segments: tuple):
        self.keyspace = keyspace
        self.node = node
        self.segments = segments

    def add(self, name: str, value: Any = None) -> "KeySpacePath":
        child = self.node.children.get(name)
        if child is None:
            raise KeySpaceError(f"no directory {name!r} under {self.node.name!r}")
        return KeySpacePath(self.keyspace, child, self.segments + ((child, child.check(value)),))

    @property
    def parent(self) -> Optional["KeySpacePath"]:
        if not self.segments:
            return None
        parent_node = self.keyspace.root
        for d, _ in self.segments[:-1]:
            parent_node = d
        return KeySpacePath(self.keyspace, parent_node, self.segments[:-1])

    def resolve(self, txn: Optional[Transaction] = None) -> tuple:
        out = []
        for d, value in self.segments:
            if d.use_directory:
                if txn is None:
                    raise KeySpaceError("resolving a directory-backed segment needs a transaction")
                out.append(self.keyspace.directory_layer.prefix_int(txn, (d.name, value)))
            else:
                out.append(value)
        return tuple(out)

    def to_subspace(self, txn: Optional[Transaction] = None) -> Subspace:
        return Subspace(self.resolve(txn))

    def __repr__(self):
        return "/" + "/".join(f"{d.name}={v!r}" for d, v in self.segments)
