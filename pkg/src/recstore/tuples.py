"""Order-preserving tuple encoding.

Byte layout per element (type code first):

====================  =========================================================
null                  ``00`` (``00 FF`` when nested)
byte string           ``01`` payload with ``00`` escaped as ``00 FF``, then ``00``
text                  ``02`` UTF-8 payload, same escaping, then ``00``
nested tuple          ``05`` elements, then ``00``
integer zero          ``14``
positive integer      ``14+n`` followed by n-byte big-endian magnitude (n <= 8)
negative integer      ``14-n`` followed by one's complement of the magnitude
float64               ``21`` IEEE big-endian, sign bit flipped for positives,
                      every bit flipped for negatives
false / true          ``26`` / ``27``
versionstamp          ``33`` then 10-byte commit stamp and 2-byte counter
====================  =========================================================

Comparing encoded byte strings gives the same result as comparing the
tuples element by element, with types ordered by their type code.
"""
from __future__ import annotations

import math
import struct
from functools import total_ordering
from typing import Any, Iterable, Optional

NULL = 0x00
BYTES = 0x01
STRING = 0x02
NESTED = 0x05
INT_ZERO = 0x14
POS_END = 0x1C
NEG_START = 0x0C
DOUBLE = 0x21
FALSE = 0x26
TRUE = 0x27
VERSIONSTAMP = 0x33

MAX_INT = (1 << 64) - 1

_INCOMPLETE = b"\xff" * 10


class TupleError(ValueError):
    pass


@total_ordering
class Versionstamp:
    """12-byte version: 10-byte commit stamp plus 2-byte per-transaction counter.

    A stamp built without ``tr_version`` is *incomplete*; the store fills in
    the commit stamp when the enclosing transaction commits.
    """

    __slots__ = ("tr_version", "user_version")

    def __init__(self, tr_version: Optional[bytes] = None, user_version: int = 0):
        if tr_version is not None and len(tr_version) != 10:
            raise TupleError("transaction version must be 10 bytes")
        if not 0 <= user_version <= 0xFFFF:
            raise TupleError("user version must fit in 2 bytes")
        self.tr_version = tr_version
        self.user_version = user_version

    @classmethod
    def from_bytes(cls, data: bytes) -> "Versionstamp":
        if len(data) != 12:
            raise TupleError("versionstamp must be 12 bytes")
        tr = data[:10]
        return cls(None if tr == _INCOMPLETE else tr, int.from_bytes(data[10:], "big"))

    @property
    def complete(self) -> bool:
        return self.tr_version is not None

    def to_bytes(self) -> bytes:
        return (self.tr_version or _INCOMPLETE) + self.user_version.to_bytes(2, "big")

    def __eq__(self, other):
        return isinstance(other, Versionstamp) and self.to_bytes() == other.to_bytes()

    def __lt__(self, other):
        if not isinstance(other, Versionstamp):
            return NotImplemented
        return self.to_bytes() < other.to_bytes()

    def __hash__(self):
        return hash(self.to_bytes())

    def __repr__(self):
        tr = self.tr_version.hex() if self.tr_version else "incomplete"
        return f"Versionstamp({tr}, {self.user_version})"


def _escape(data: bytes) -> bytes:
    return data.replace(b"\x00", b"\x00\xff")


def _float_bytes(value: float) -> bytes:
    raw = bytearray(struct.pack(">d", value))
    if raw[0] & 0x80:
        raw = bytearray(b ^ 0xFF for b in raw)
    else:
        raw[0] ^= 0x80
    return bytes(raw)


def _float_from(raw: bytes) -> float:
    data = bytearray(raw)
    if data[0] & 0x80:
        data[0] ^= 0x80
    else:
        data = bytearray(b ^ 0xFF for b in data)
    return struct.unpack(">d", bytes(data))[0]


def _encode(value: Any, out: bytearray, nested: bool, stamps: list) -> None:
    if value is None:
        out += b"\x00\xff" if nested else b"\x00"
    elif value is True:
        out.append(TRUE)
    elif value is False:
        out.append(FALSE)
    elif isinstance(value, (bytes, bytearray)):
        out.append(BYTES)
        out += _escape(bytes(value))
        out.append(0)
    elif isinstance(value, str):
        out.append(STRING)
        out += _escape(value.encode("utf-8"))
        out.append(0)
    elif isinstance(value, int):
        if value == 0:
            out.append(INT_ZERO)
        elif value > 0:
            if value > MAX_INT:
                raise TupleError(f"integer {value} exceeds 8-byte magnitude")
            n = (value.bit_length() + 7) // 8
            out.append(INT_ZERO + n)
            out += value.to_bytes(n, "big")
        else:
            mag = -value
            if mag > MAX_INT:
                raise TupleError(f"integer {value} exceeds 8-byte magnitude")
            n = (mag.bit_length() + 7) // 8
            out.append(INT_ZERO - n)
            out += (((1 << (8 * n)) - 1) ^ mag).to_bytes(n, "big")
    elif isinstance(value, float):
        if math.isnan(value):
            raise TupleError("NaN is not orderable")
        out.append(DOUBLE)
        out += _float_bytes(value)
    elif isinstance(value, Versionstamp):
        out.append(VERSIONSTAMP)
        if not value.complete:
            stamps.append(len(out))
        out += value.to_bytes()
    elif isinstance(value, (tuple, list)):
        out.append(NESTED)
        for item in value:
            _encode(item, out, True, stamps)
        out.append(0)
    else:
        raise TupleError(f"unsupported tuple element type {type(value).__name__}")


def pack(items: Iterable[Any], prefix: bytes = b"") -> bytes:
    out = bytearray(prefix)
    stamps: list[int] = []
    for item in items:
        _encode(item, out, False, stamps)
    return bytes(out)


def pack_with_versionstamp(items: Iterable[Any], prefix: bytes = b"") -> tuple[bytes, int]:
    """Pack a tuple holding exactly one incomplete :class:`Versionstamp`.

    Returns the bytes and the offset of the 12-byte stamp within them.
    """
    out = bytearray(prefix)
    stamps: list[int] = []
    for item in items:
        _encode(item, out, False, stamps)
    if len(stamps) != 1:
        raise TupleError(f"expected one incomplete versionstamp, found {len(stamps)}")
    return bytes(out), stamps[0]


def has_incomplete_versionstamp(items: Iterable[Any]) -> bool:
    for item in items:
        if isinstance(item, Versionstamp) and not item.complete:
            return True
        if isinstance(item, (tuple, list)) and has_incomplete_versionstamp(item):
            return True
    return False


def _find_terminator(data: bytes, pos: int) -> int:
    while True:
        end = data.find(b"\x00", pos)
        if end < 0:
            raise TupleError("unterminated string")
        if end + 1 < len(data) and data[end + 1] == 0xFF:
            pos = end + 2
            continue
        return end


def _decode(data: bytes, pos: int, nested: bool) -> tuple[Any, int]:
    code = data[pos]
    if code == NULL:
        if nested and pos + 1 < len(data) and data[pos + 1] == 0xFF:
            return None, pos + 2
        return None, pos + 1
    if code in (BYTES, STRING):
        end = _find_terminator(data, pos + 1)
        raw = data[pos + 1: end].replace(b"\x00\xff", b"\x00")
        if code == STRING:
            try:
                return raw.decode("utf-8"), end + 1
            except UnicodeDecodeError as exc:
                raise TupleError("invalid UTF-8 in text element") from exc
        return raw, end + 1
    if code == NESTED:
        items = []
        pos += 1
        while True:
            if pos >= len(data):
                raise TupleError("unterminated nested tuple")
            if data[pos] == 0 and not (pos + 1 < len(data) and data[pos + 1] == 0xFF):
                return tuple(items), pos + 1
            item, pos = _decode(data, pos, True)
            items.append(item)
    if NEG_START <= code <= POS_END:
        n = code - INT_ZERO
        if n == 0:
            return 0, pos + 1
        width = abs(n)
        if pos + 1 + width > len(data):
            raise TupleError("truncated integer")
        raw = int.from_bytes(data[pos + 1: pos + 1 + width], "big")
        if n > 0:
            return raw, pos + 1 + width
        return -(((1 << (8 * width)) - 1) ^ raw), pos + 1 + width
    if code == DOUBLE:
        if pos + 9 > len(data):
            raise TupleError("truncated float")
        return _float_from(data[pos + 1: pos + 9]), pos + 9
    if code == FALSE:
        return False, pos + 1
    if code == TRUE:
        return True, pos + 1
    if code == VERSIONSTAMP:
        if pos + 13 > len(data):
            raise TupleError("truncated versionstamp")
        return Versionstamp.from_bytes(data[pos + 1: pos + 13]), pos + 13
    raise TupleError(f"unknown type code 0x{code:02x} at offset {pos}")


def unpack(data: bytes, prefix_len: int = 0) -> tuple:
    items = []
    pos = prefix_len
    while pos < len(data):
        item, pos = _decode(data, pos, False)
        items.append(item)
    return tuple(items)


def range_of(items: Iterable[Any], prefix: bytes = b"") -> tuple[bytes, bytes]:
    """Key range holding every tuple that strictly extends ``items``."""
    packed = pack(items, prefix)
    return packed + b"\x00", packed + b"\xff"


# Type ranks used by the reference comparison below (type code order).
def _rank(value: Any) -> int:
    if value is None:
        return NULL
    if isinstance(value, bool):
        return FALSE
    if isinstance(value, (bytes, bytearray)):
        return BYTES
    if isinstance(value, str):
        return STRING
    if isinstance(value, (tuple, list)):
        return NESTED
    if isinstance(value, int):
        return INT_ZERO
    if isinstance(value, float):
        return DOUBLE
    if isinstance(value, Versionstamp):
        return VERSIONSTAMP
    raise TupleError(f"unsupported tuple element type {type(value).__name__}")


def compare(a: Iterable[Any], b: Iterable[Any]) -> int:
    """Element-wise tuple comparison, independent of the byte encoding."""
    a, b = list(a), list(b)
    for x, y in zip(a, b):
        rx, ry = _rank(x), _rank(y)
        if rx != ry:
            return -1 if rx < ry else 1
        if rx == NULL:
            continue
        if rx == NESTED:
            c = compare(x, y)
        elif rx == STRING:
            xe, ye = x.encode("utf-8"), y.encode("utf-8")
            c = (xe > ye) - (xe < ye)
        elif rx == DOUBLE:
            # -0.0 orders before 0.0
            kx = (x, math.copysign(1.0, x))
            ky = (y, math.copysign(1.0, y))
            c = (kx > ky) - (kx < ky)
        elif rx == VERSIONSTAMP:
            xb, yb = x.to_bytes(), y.to_bytes()
            c = (xb > yb) - (xb < yb)
        else:
            c = (x > y) - (x < y)
        if c:
            return c
    return (len(a) > len(b)) - (len(a) < len(b))
