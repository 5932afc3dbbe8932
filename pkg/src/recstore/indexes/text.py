"""TEXT index: an inverted index whose postings are bunched into few keys.

Entry key ``(token, *first_pk)``; the value packs up to ``bunch_size``
postings in primary-key order.  The first posting's key is implied by the
entry key; later postings carry their key as a length-prefixed packed tuple.
Offsets are a varint count followed by delta-encoded varint positions.
"""
from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterator, Optional, Sequence

from .. import tuples
from ..cursors import Event, kv_range
from ..kv import Transaction, key_after
from ..metadata import IndexType
from ..serialization import read_varint, write_varint
from ..subspace import Subspace
from .base import IndexMaintainer, IndexMaintenanceError, register_maintainer

DEFAULT_BUNCH_SIZE = 20


class DuplicatePosting(IndexMaintenanceError):
    pass


class TokenizerVersionMismatch(IndexMaintenanceError):
    pass


# -- tokenizers ------------------------------------------------------------------

class Tokenizer:
    name = ""
    version = 1

    def tokenize(self, text: str) -> list[tuple[str, int]]:
        """``(token, position)`` pairs; positions count tokens from 0."""
        raise NotImplementedError


_WORD = re.compile(r"[^\W_]+", re.UNICODE)


class DefaultTokenizer(Tokenizer):
    """Lowercase, split on anything that is not a letter or digit."""

    name = "default"

    def tokenize(self, text):
        return [(m.group(0).lower(), i) for i, m in enumerate(_WORD.finditer(text))]


class WhitespaceTokenizer(Tokenizer):
    name = "whitespace"

    def tokenize(self, text):
        return [(t, i) for i, t in enumerate(text.split())]


class NGramTokenizer(Tokenizer):
    """The n-grams of every default token.

    Grams of one token get consecutive positions, and a gap of ``n`` separates
    tokens, so a phrase of grams matches a substring of a single token.
    Tokens shorter than ``n`` are emitted whole.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("n-gram size must be at least 1")
        self.n = n
        self.name = f"ngram{n}"

    def grams(self, token: str) -> list[str]:
        if len(token) <= self.n:
            return [token]
        return [token[i : i + self.n] for i in range(len(token) - self.n + 1)]

    def tokenize(self, text):
        out = []
        pos = 0
        for token, _ in DefaultTokenizer().tokenize(text):
            for g in self.grams(token):
                out.append((g, pos))
                pos += 1
            pos += self.n
        return out


def get_tokenizer(name: str) -> Tokenizer:
    if name == "default":
        return DefaultTokenizer()
    if name == "whitespace":
        return WhitespaceTokenizer()
    m = re.fullmatch(r"ngram:?(\d+)", name)
    if m:
        return NGramTokenizer(int(m.group(1)))
    raise ValueError(f"unknown tokenizer {name!r}")


def token_positions(tokenizer: Tokenizer, text: Optional[str]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    if text:
        for token, pos in tokenizer.tokenize(text):
            out.setdefault(token, []).append(pos)
    return out


# -- matching ---------------------------------------------------------------------

def match_positions(postings: dict[str, list[int]], mode, tokens: Sequence[str], window: int = 0) -> Optional[list[int]]:
    """Positions supporting a match of ``tokens`` against one document, or ``None``."""
    from ..predicates import TextMode

    if mode is TextMode.PREFIX:
        hits = sorted(p for t, ps in postings.items() if any(t.startswith(q) for q in tokens) for p in ps)
        return hits or None
    if not tokens:
        return None
    if any(t not in postings for t in tokens):
        return None
    if mode is TextMode.TOKEN or mode is TextMode.ALL:
        return sorted({p for t in tokens for p in postings[t]})
    if mode is TextMode.PHRASE:
        starts = [p for p in postings[tokens[0]] if all(p + i in set(postings[t]) for i, t in enumerate(tokens))]
        return starts or None
    if mode is TextMode.PROXIMITY:
        distinct = list(dict.fromkeys(tokens))
        events = sorted((p, i) for i, t in enumerate(distinct) for p in postings[t])
        have: dict[int, int] = {}
        lo = 0
        for hi, (p, i) in enumerate(events):
            have[i] = have.get(i, 0) + 1
            while len(have) == len(distinct):
                start = events[lo][0]
                if p - start <= window:
                    return [start]
                j = events[lo][1]
                have[j] -= 1
                if not have[j]:
                    del have[j]
                lo += 1
        return None
    raise ValueError(f"unsupported text mode {mode}")


# -- value codec ---------------------------------------------------------------------

Posting = tuple[tuple, list[int]]


def _encode_offsets(out: bytearray, offsets: Sequence[int]) -> None:
    write_varint(out, len(offsets))
    prev = 0
    for i, o in enumerate(offsets):
        if i and o <= prev:
            raise ValueError("offsets must be strictly ascending")
        write_varint(out, o - prev if i else o)
        prev = o


def _decode_offsets(data: bytes, pos: int) -> tuple[list[int], int]:
    n, pos = read_varint(data, pos)
    out = []
    prev = 0
    for i in range(n):
        d, pos = read_varint(data, pos)
        prev = d if i == 0 else prev + d
        out.append(prev)
    return out, pos


def encode_bunch(postings: Sequence[Posting]) -> bytes:
    out = bytearray()
    for i, (pk, offsets) in enumerate(postings):
        if i:
            packed = tuples.pack(pk)
            write_varint(out, len(packed))
            out += packed
        _encode_offsets(out, offsets)
    return bytes(out)


def decode_bunch(first_pk: tuple, data: bytes) -> list[Posting]:
    offsets, pos = _decode_offsets(data, 0)
    out = [(tuple(first_pk), offsets)]
    while pos < len(data):
        n, pos = read_varint(data, pos)
        pk = tuples.unpack(data[pos : pos + n])
        pos += n
        offsets, pos = _decode_offsets(data, pos)
        out.append((pk, offsets))
    return out


def _pk_key(pk: tuple) -> bytes:
    return tuples.pack(pk)


@dataclass
class CostCounters:
    """KV operations issued by the bunched map (for cost-bound checks)."""

    reads: int = 0
    writes: int = 0
    clears: int = 0
    history: list = field(default_factory=list)

    def snapshot(self) -> tuple[int, int, int]:
        return self.reads, self.writes, self.clears


class BunchedPostings:
    """Postings lists for many tokens, bunched into at most ``bunch_size`` per key."""

    def __init__(self, txn: Transaction, subspace: Subspace, bunch_size: int = DEFAULT_BUNCH_SIZE):
        if bunch_size < 1:
            raise ValueError("bunch size must be at least 1")
        self.txn = txn
        self.subspace = subspace
        self.bunch_size = bunch_size
        self.counters = CostCounters()

    def _key(self, token: str, pk: tuple) -> bytes:
        return self.subspace.pack((token,) + tuple(pk))

    def _split_key(self, key: bytes) -> tuple[str, tuple]:
        t = self.subspace.unpack(key)
        return t[0], t[1:]

    def _read_one(self, begin: bytes, end: bytes, reverse: bool) -> Optional[tuple[bytes, bytes]]:
        self.counters.reads += 1
        rows = self.txn.get_range(begin, end, limit=1, reverse=reverse)
        return rows[0] if rows else None

    def _set(self, key: bytes, value: bytes) -> None:
        self.counters.writes += 1
        self.txn.set(key, value)

    def _clear(self, key: bytes) -> None:
        self.counters.clears += 1
        self.txn.clear(key)

    def insert(self, token: str, pk: tuple, offsets: Sequence[int]) -> None:
        pk = tuple(pk)
        offsets = list(offsets)
        if not offsets:
            raise ValueError("a posting needs at least one offset")
        target = self._key(token, pk)
        token_begin, token_end = self.subspace.range((token,))
        left = self._read_one(token_begin, key_after(target), reverse=True)
        right = self._read_one(key_after(target), token_end, reverse=False)
        right_postings = decode_bunch(self._split_key(right[0])[1], right[1]) if right else None

        if left is None:
            bunch = [(pk, offsets)]
            if right_postings is not None and len(right_postings) + 1 <= self.bunch_size:
                self._set(target, encode_bunch(bunch + right_postings))
                self._clear(right[0])
            else:
                self._set(target, encode_bunch(bunch))
            return

        left_key, left_value = left
        left_pk = self._split_key(left_key)[1]
        bunch = decode_bunch(left_pk, left_value)
        if any(p == pk for p, _ in bunch):
            raise DuplicatePosting(f"posting for {token!r} {pk!r} already exists")
        bunch.append((pk, offsets))
        bunch.sort(key=lambda p: _pk_key(p[0]))
        if len(bunch) <= self.bunch_size:
            self._set(left_key, encode_bunch(bunch))
            return
        evicted = bunch.pop()
        self._set(left_key, encode_bunch(bunch))
        new_bunch = [evicted]
        if right_postings is not None and len(right_postings) + 1 <= self.bunch_size:
            new_bunch += right_postings
            self._clear(right[0])
        self._set(self._key(token, evicted[0]), encode_bunch(new_bunch))

    def _locate(self, token: str, pk: tuple) -> Optional[tuple[bytes, list[Posting]]]:
        target = self._key(token, pk)
        token_begin, _ = self.subspace.range((token,))
        row = self._read_one(token_begin, key_after(target), reverse=True)
        if row is None:
            return None
        bunch = decode_bunch(self._split_key(row[0])[1], row[1])
        if not any(p == pk for p, _ in bunch):
            return None
        return row[0], bunch

    def delete(self, token: str, pk: tuple) -> bool:
        pk = tuple(pk)
        found = self._locate(token, pk)
        if found is None:
            return False
        key, bunch = found
        rest = [p for p in bunch if p[0] != pk]
        if not rest:
            self._clear(key)
        elif bunch[0][0] == pk:
            # The entry key names the deleted posting: re-key to the next one.
            self._clear(key)
            self._set(self._key(token, rest[0][0]), encode_bunch(rest))
        else:
            self._set(key, encode_bunch(rest))
        return True

    def replace(self, token: str, pk: tuple, offsets: Sequence[int]) -> bool:
        """Rewrite the offsets of an existing posting in place."""
        pk = tuple(pk)
        found = self._locate(token, pk)
        if found is None:
            return False
        key, bunch = found
        self._set(key, encode_bunch([(p, list(offsets) if p == pk else o) for p, o in bunch]))
        return True

    def get(self, token: str, pk: tuple) -> Optional[list[int]]:
        found = self._locate(token, tuple(pk))
        if found is None:
            return None
        return next(o for p, o in found[1] if p == tuple(pk))

    # -- reading -----------------------------------------------------------------

    def postings(self, token: str, after: Optional[tuple] = None) -> Iterator[tuple[Posting, int]]:
        """``((pk, offsets), bytes_read)`` for ``token`` in pk order, strictly after ``after``."""
        begin, end = self.subspace.range((token,))
        if after is not None:
            start = self.txn.get_range(begin, key_after(self._key(token, after)), limit=1, reverse=True)
            if start:
                begin = start[0][0]
        for key, value in kv_range(self.txn, begin, end):
            nbytes = len(key) + len(value)
            for posting in decode_bunch(self._split_key(key)[1], value):
                if after is not None and tuples.compare(posting[0], after) <= 0:
                    continue
                yield posting, nbytes
                nbytes = 0

    def tokens_with_prefix(self, prefix: str) -> Iterator[str]:
        """Distinct tokens starting with ``prefix``, skipping over each token's entries."""
        stem = self.subspace.pack((prefix,))[:-1]
        begin, end = stem, stem + b"\xff"
        while begin < end:
            rows = self.txn.get_range(begin, end, limit=1)
            if not rows:
                return
            token, _ = self._split_key(rows[0][0])
            yield token
            begin = self.subspace.range((token,))[1]

    def entries(self) -> Iterator[tuple[str, list[Posting], int, int]]:
        """``(token, postings, key_bytes, value_bytes)`` for every stored entry."""
        begin, end = self.subspace.range()
        for key, value in kv_range(self.txn, begin, end):
            token, pk = self._split_key(key)
            yield token, decode_bunch(pk, value), len(key), len(value)

    def flatten(self) -> dict[str, dict[tuple, list[int]]]:
        out: dict[str, dict[tuple, list[int]]] = {}
        for token, postings, _, _ in self.entries():
            for pk, offsets in postings:
                out.setdefault(token, {})[pk] = offsets
        return out

    def compact(self, token: Optional[str] = None) -> int:
        """Repack under-filled bunches; returns the number of entries removed."""
        if token is not None:
            begin, end = self.subspace.range((token,))
        else:
            begin, end = self.subspace.range()
        by_token: dict[str, list[tuple[bytes, list[Posting]]]] = {}
        for key, value in self.txn.get_range(begin, end):
            tok, pk = self._split_key(key)
            by_token.setdefault(tok, []).append((key, decode_bunch(pk, value)))
        removed = 0
        for tok, entries in by_token.items():
            postings = [p for _, bunch in entries for p in bunch]
            packed = [postings[i : i + self.bunch_size] for i in range(0, len(postings), self.bunch_size)]
            if len(packed) == len(entries):
                continue
            for key, _ in entries:
                self.txn.clear(key)
            for bunch in packed:
                self.txn.set(self._key(tok, bunch[0][0]), encode_bunch(bunch))
            removed += len(entries) - len(packed)
        return removed


# -- maintainer ----------------------------------------------------------------------

class TextMaintainer(IndexMaintainer):
    def __init__(self, store, index):
        super().__init__(store, index)
        self.tokenizer = get_tokenizer(index.option("tokenizer", "default"))
        self.bunch_size = int(index.option("bunch_size", DEFAULT_BUNCH_SIZE))
        self.map = BunchedPostings(self.txn, self.subspace, self.bunch_size)

    def _check_tokenizer(self) -> None:
        wanted = int(self.index.option("tokenizer_version", self.tokenizer.version))
        if wanted > self.tokenizer.version:
            raise TokenizerVersionMismatch(
                f"index {self.index.name!r} was built with {self.tokenizer.name} v{wanted}, "
                f"this process has v{self.tokenizer.version}"
            )

    def document_tokens(self, rec) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        base = 0
        for t in self.evaluate(rec):
            text = t[0]
            if not text:
                continue
            positions = self.tokenizer.tokenize(text)
            for token, pos in positions:
                out.setdefault(token, []).append(base + pos)
            if positions:
                base += positions[-1][1] + 1
        return out

    def update(self, old, new) -> None:
        self._check_tokenizer()
        before = self.document_tokens(old) if old is not None else {}
        after = self.document_tokens(new) if new is not None else {}
        if before == after:
            return
        pk = (new or old).primary_key
        for token in sorted(before.keys() - after.keys()):
            self.map.delete(token, pk)
        for token in sorted(after.keys() & before.keys()):
            if before[token] != after[token]:
                self.map.replace(token, pk, after[token])
        for token in sorted(after.keys() - before.keys()):
            self.map.insert(token, pk, after[token])

    # -- queries ---------------------------------------------------------------

    def _token_stream(self, token: str, after: Optional[tuple]) -> Iterator[tuple[tuple, list[int], int]]:
        for (pk, offsets), nbytes in self.map.postings(token, after):
            yield pk, offsets, nbytes

    def query_events(self, mode, tokens: Sequence[str], window: int = 0, after: Optional[tuple] = None) -> Iterator[Event]:
        """Matching ``(pk, positions)`` in pk order; each event's state is the pk reached."""
        from ..predicates import TextMode

        self.check_readable()
        tokens = list(tokens)
        if mode is TextMode.PREFIX:
            yield from self._prefix_events(tokens, after)
            return
        distinct = list(dict.fromkeys(tokens))
        if not distinct:
            return
        streams = [self._token_stream(t, after) for t in distinct]
        heads = [next(s, None) for s in streams]
        while all(h is not None for h in heads):
            keys = [_pk_key(h[0]) for h in heads]
            nbytes = sum(h[2] for h in heads)
            top = max(keys)
            if all(k == top for k in keys):
                pk = heads[0][0]
                postings = {t: h[1] for t, h in zip(distinct, heads)}
                hit = match_positions(postings, mode, tokens, window)
                yield Event("item" if hit else "skip", (pk, hit) if hit else None, pk, len(heads), nbytes)
                heads = [next(s, None) for s in streams]
                continue
            # Advance every stream behind the furthest head.  The smallest head
            # goes first, so the states stay increasing and each is a safe resume point.
            for i, k in enumerate(keys):
                if k < top:
                    yield Event("skip", None, heads[i][0], 1, heads[i][2])
                    heads[i] = next(streams[i], None)

    def _prefix_events(self, prefixes: list[str], after: Optional[tuple]) -> Iterator[Event]:
        streams = []
        for p in prefixes:
            for token in self.map.tokens_with_prefix(p):
                streams.append(self._token_stream(token, after))
        merged = heapq.merge(*[((_pk_key(pk), pk, offs, nb) for pk, offs, nb in s) for s in streams])
        current: Optional[tuple] = None
        positions: list[int] = []
        nbytes = 0
        for key, pk, offs, nb in merged:
            if current is not None and pk != current:
                yield Event("item", (current, sorted(positions)), current, 1, nbytes)
                positions, nbytes = [], 0
            current = pk
            positions.extend(offs)
            nbytes += nb
        if current is not None:
            yield Event("item", (current, sorted(positions)), current, 1, nbytes)

    def search(self, mode, tokens: Sequence[str], window: int = 0) -> list[tuple]:
        return [ev.value for ev in self.query_events(mode, tokens, window) if ev.kind == "item"]

    def stats(self, documents: Optional[int] = None) -> "TextStats":
        return text_stats(self.map, documents)

    def compact(self) -> int:
        return self.map.compact()


register_maintainer(IndexType.TEXT, TextMaintainer)


# -- statistics ------------------------------------------------------------------------

@dataclass
class TextStats:
    entries: int = 0
    postings: int = 0
    tokens: int = 0
    documents: int = 0
    bytes_keys: int = 0
    bytes_values: int = 0

    @property
    def avg_bunch_fill(self) -> float:
        return self.postings / self.entries if self.entries else 0.0

    @property
    def bytes_per_document(self) -> float:
        return (self.bytes_keys + self.bytes_values) / self.documents if self.documents else 0.0

    def as_dict(self) -> dict:
        return {
            "entries": self.entries,
            "postings": self.postings,
            "tokens": self.tokens,
            "documents": self.documents,
            "avg_bunch_fill": round(self.avg_bunch_fill, 3),
            "bytes_keys": self.bytes_keys,
            "bytes_values": self.bytes_values,
            "bytes_per_document": round(self.bytes_per_document, 1),
        }


def text_stats(postings_map: BunchedPostings, documents: Optional[int] = None) -> TextStats:
    s = TextStats()
    tokens = set()
    docs = set()
    for token, postings, kb, vb in postings_map.entries():
        s.entries += 1
        s.postings += len(postings)
        s.bytes_keys += kb
        s.bytes_values += vb
        tokens.add(token)
        docs.update(pk for pk, _ in postings)
    s.tokens = len(tokens)
    s.documents = documents if documents is not None else len(docs)
    return s


def space_model(
    prefix: str | float = "10",
    token: str | float = "7.8",
    pk: str | float = "3",
    overhead: str | float = "2",
    bunch: int = 20,
    tokens_per_doc: str | float = "431.8",
    offsets_single: str | float = "3",
    offsets_bunched: str | float = "2",
) -> dict[str, Decimal]:
    """Analytic bytes per entry and per document, with and without bunching.

    Each bunched entry holds ``bunch`` offset lists and ``bunch - 1`` extra
    primary keys; a document contributes one posting per distinct token.
    """
    d = lambda v: Decimal(str(v))  # noqa: E731
    key = d(prefix) + d(token) + d(pk) + d(overhead)
    single = key + d(offsets_single)
    bunched_value = d(offsets_bunched) * bunch + d(pk) * (bunch - 1)
    bunched = key + bunched_value
    entries_single = d(tokens_per_doc)
    entries_bunched = d(tokens_per_doc) / bunch
    return {
        "key_size": key,
        "entry_size_unbunched": single,
        "entry_size_bunched": bunched,
        "value_size_bunched": bunched_value,
        "entries_unbunched": entries_single,
        "entries_bunched": entries_bunched,
        "doc_bytes_unbunched": single * entries_single,
        "doc_bytes_bunched": bunched * entries_bunched,
    }


def format_kb(n: Decimal) -> str:
    return f"{(n / 1000).quantize(Decimal('0.1'))} kB"
