"""Record serialization.

Records are encoded as a tag-length-value stream keyed by field number
(see ``docs/encoding.md`` for the byte layout).  The stream is wrapped in a
union keyed by the record type key, then optionally compressed and
encrypted.  A leading flags byte says which wrappers were applied.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Callable, Optional

from .message import Message
from .metadata import MessageDescriptor, RecordMetadata

WIRE_VARINT = 0
WIRE_FIXED64 = 1
WIRE_BYTES = 2

FLAG_COMPRESSED = 0x01
FLAG_ENCRYPTED = 0x02


class SerializationError(ValueError):
    pass


def write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise SerializationError("varints are unsigned")
    while True:
        b = value & 0x7F
        value >>= 7
        if value:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


def read_varint(data: bytes, pos: int) -> tuple[int, int]:
    shift = result = 0
    while True:
        if pos >= len(data):
            raise SerializationError("truncated varint")
        b = data[pos]
        pos += 1
        result |= (b & 0x7F) << shift
        if not b & 0x80:
            return result, pos
        shift += 7
        if shift > 70:
            raise SerializationError("varint too long")


def zigzag(n: int) -> int:
    return (n << 1) ^ (n >> 63)


def unzigzag(n: int) -> int:
    return (n >> 1) ^ -(n & 1)


def _encode_message(msg: Message, desc: MessageDescriptor, meta: RecordMetadata, out: bytearray) -> None:
    for f in desc.fields:
        value = msg.get(f.name)
        if value is None:
            continue
        for v in value if f.repeated else [value]:
            if f.kind == "int64":
                write_varint(out, f.number << 3 | WIRE_VARINT)
                write_varint(out, zigzag(v))
            elif f.kind == "bool":
                write_varint(out, f.number << 3 | WIRE_VARINT)
                out.append(1 if v else 0)
            elif f.kind == "float64":
                write_varint(out, f.number << 3 | WIRE_FIXED64)
                out += struct.pack("<d", v)
            else:
                if f.kind == "text":
                    payload = v.encode("utf-8")
                elif f.kind == "bytes":
                    payload = bytes(v)
                else:
                    sub = bytearray()
                    _encode_message(v, meta.messages[f.message_type], meta, sub)
                    payload = bytes(sub)
                write_varint(out, f.number << 3 | WIRE_BYTES)
                write_varint(out, len(payload))
                out += payload


def _decode_message(data: bytes, desc: MessageDescriptor, meta: RecordMetadata) -> Message:
    msg = Message(desc.name)
    pos = 0
    while pos < len(data):
        tag, pos = read_varint(data, pos)
        number, wire = tag >> 3, tag & 7
        if wire == WIRE_VARINT:
            raw, pos = read_varint(data, pos)
        elif wire == WIRE_FIXED64:
            raw, pos = data[pos : pos + 8], pos + 8
            if len(raw) != 8:
                raise SerializationError("truncated fixed64")
        elif wire == WIRE_BYTES:
            n, pos = read_varint(data, pos)
            raw, pos = data[pos : pos + n], pos + n
            if len(raw) != n:
                raise SerializationError("truncated length-delimited field")
        else:
            raise SerializationError(f"unknown wire type {wire}")
        f = desc.by_number(number)
        if f is None:
            continue  # field dropped from the schema since this record was written
        if f.kind == "int64":
            value = unzigzag(raw)
        elif f.kind == "bool":
            value = bool(raw)
        elif f.kind == "float64":
            value = struct.unpack("<d", raw)[0]
        elif f.kind == "text":
            value = raw.decode("utf-8")
        elif f.kind == "bytes":
            value = bytes(raw)
        else:
            value = _decode_message(raw, meta.messages[f.message_type], meta)
        if f.repeated:
            msg.fields.setdefault(f.name, []).append(value)
        else:
            msg.fields[f.name] = value
    return msg


def encode_record(record: Message, meta: RecordMetadata) -> bytes:
    """The union-wrapped TLV body, before compression or encryption."""
    rt = meta.record_type(record.type_name)
    body = bytearray()
    _encode_message(record, meta.messages[rt.name], meta, body)
    out = bytearray()
    write_varint(out, rt.type_key << 3 | WIRE_BYTES)
    write_varint(out, len(body))
    out += body
    return bytes(out)


def decode_record(data: bytes, meta: RecordMetadata) -> Message:
    tag, pos = read_varint(data, 0)
    if tag & 7 != WIRE_BYTES:
        raise SerializationError("record union must be length-delimited")
    n, pos = read_varint(data, pos)
    if pos + n != len(data):
        raise SerializationError("record union length mismatch")
    rt = meta.record_type_for_key(tag >> 3)
    return _decode_message(data[pos:], meta.messages[rt.name], meta)


class XorCipher:
    """Repeating-key XOR.  Only a stand-in for a real cipher hook."""

    def __init__(self, key: bytes):
        if not key:
            raise ValueError("key must not be empty")
        self.key = key

    def __call__(self, data: bytes) -> bytes:
        k = self.key
        reps = k * (len(data) // len(k) + 1)
        return bytes(a ^ b for a, b in zip(data, reps))


@dataclass
class Serializer:
    compress: bool = False
    compression_level: int = 6
    encrypt: Optional[Callable[[bytes], bytes]] = None
    decrypt: Optional[Callable[[bytes], bytes]] = None

    def serialize(self, record: Message, meta: RecordMetadata) -> bytes:
        data = encode_record(record, meta)
        flags = 0
        if self.compress:
            packed = zlib.compress(data, self.compression_level)
            if len(packed) < len(data):
                data, flags = packed, flags | FLAG_COMPRESSED
        if self.encrypt is not None:
            data, flags = self.encrypt(data), flags | FLAG_ENCRYPTED
        return bytes([flags]) + data

    def deserialize(self, data: bytes, meta: RecordMetadata) -> Message:
        if not data:
            raise SerializationError("empty record")
        flags, body = data[0], data[1:]
        if flags & ~(FLAG_COMPRESSED | FLAG_ENCRYPTED):
            raise SerializationError(f"unknown flags {flags:#x}")
        if flags & FLAG_ENCRYPTED:
            if self.decrypt is None:
                raise SerializationError("record is encrypted but no decrypt hook is configured")
            body = self.decrypt(body)
        if flags & FLAG_COMPRESSED:
            body = zlib.decompress(body)
        return decode_record(body, meta)
