"""Deterministic tag-length-value codec.

Messages are plain dicts checked against declarative schemas. The wire
format uses protobuf-style keys (``tag << 3 | wire_type``) with three wire
types: varint (0), fixed64 little-endian (1), and length-delimited (2).
Encoding is canonical: fields are emitted in ascending tag order and any
field equal to its default (0, empty string/bytes, empty list, absent
sub-message) is omitted, so equal values always produce equal bytes.

Unknown tags are skipped on decode for forward compatibility.
"""

from __future__ import annotations

import struct
from typing import Any, Callable, Iterable

from .errors import CodecError

WT_VARINT = 0
WT_FIXED64 = 1
WT_LEN = 2

_U64_MAX = (1 << 64) - 1
_S64_MIN, _S64_MAX = -(1 << 63), (1 << 63) - 1
_FIX64 = struct.Struct("<Q")


def encode_varint(value: int) -> bytes:
    if value < 0 or value > _U64_MAX:
        raise CodecError(f"varint out of range: {value}")
    out = bytearray()
    while True:
        bits = value & 0x7F
        value >>= 7
        if value:
            out.append(bits | 0x80)
        else:
            out.append(bits)
            return bytes(out)


def decode_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise CodecError("truncated varint")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            if result > _U64_MAX:
                raise CodecError("varint overflows 64 bits")
            return result, pos
        shift += 7
        if shift >= 70:
            raise CodecError("malformed varint (too long)")


def zigzag(n: int) -> int:
    return (n << 1) ^ (n >> 63)


def unzigzag(z: int) -> int:
    return (z >> 1) ^ -(z & 1)


class FieldType:
    """Scalar or composite field kind; subclasses define wire behaviour."""

    wire_type: int
    default: Any = 0

    def check(self, value):
        raise NotImplementedError

    def encode(self, value) -> bytes:
        raise NotImplementedError

    def decode(self, buf: bytes, pos: int):
        raise NotImplementedError


class _Uint(FieldType):
    wire_type = WT_VARINT

    def __init__(self, bits: int):
        self.max = (1 << bits) - 1

    def check(self, value):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= self.max:
            raise CodecError(f"expected unsigned {self.max.bit_length()}-bit int, got {value!r}")

    def encode(self, value):
        return encode_varint(value)

    def decode(self, buf, pos):
        value, pos = decode_varint(buf, pos)
        if value > self.max:
            raise CodecError(f"value {value} exceeds field width")
        return value, pos


class _Sint64(FieldType):
    wire_type = WT_VARINT

    def check(self, value):
        if not isinstance(value, int) or isinstance(value, bool) or not _S64_MIN <= value <= _S64_MAX:
            raise CodecError(f"expected signed 64-bit int, got {value!r}")

    def encode(self, value):
        return encode_varint(zigzag(value))

    def decode(self, buf, pos):
        z, pos = decode_varint(buf, pos)
        return unzigzag(z), pos


class _Bool(FieldType):
    wire_type = WT_VARINT
    default = False

    def check(self, value):
        if not isinstance(value, bool):
            raise CodecError(f"expected bool, got {value!r}")

    def encode(self, value):
        return b"\x01" if value else b"\x00"

    def decode(self, buf, pos):
        value, pos = decode_varint(buf, pos)
        return bool(value), pos


class _Fixed64(FieldType):
    wire_type = WT_FIXED64

    def check(self, value):
        if not isinstance(value, int) or isinstance(value, bool) or not 0 <= value <= _U64_MAX:
            raise CodecError(f"expected unsigned 64-bit int, got {value!r}")

    def encode(self, value):
        return _FIX64.pack(value)

    def decode(self, buf, pos):
        if pos + 8 > len(buf):
            raise CodecError("truncated fixed64")
        return _FIX64.unpack_from(buf, pos)[0], pos + 8


class _String(FieldType):
    wire_type = WT_LEN
    default = ""

    def check(self, value):
        if not isinstance(value, str):
            raise CodecError(f"expected str, got {value!r}")

    def encode(self, value):
        data = value.encode("utf-8")
        return encode_varint(len(data)) + data

    def decode(self, buf, pos):
        n, pos = decode_varint(buf, pos)
        if pos + n > len(buf):
            raise CodecError("truncated string")
        try:
            return buf[pos : pos + n].decode("utf-8"), pos + n
        except UnicodeDecodeError as exc:
            raise CodecError(f"invalid utf-8 in string field: {exc}") from exc


class _Bytes(FieldType):
    wire_type = WT_LEN
    default = b""

    def check(self, value):
        if not isinstance(value, (bytes, bytearray)):
            raise CodecError(f"expected bytes, got {value!r}")

    def encode(self, value):
        return encode_varint(len(value)) + bytes(value)

    def decode(self, buf, pos):
        n, pos = decode_varint(buf, pos)
        if pos + n > len(buf):
            raise CodecError("truncated bytes")
        return buf[pos : pos + n], pos + n


class _Message(FieldType):
    wire_type = WT_LEN
    default = None

    def __init__(self, schema: "Schema"):
        self.schema = schema

    def check(self, value):
        if not isinstance(value, dict):
            raise CodecError(f"expected message dict, got {value!r}")

    def encode(self, value):
        data = self.schema.encode(value)
        return encode_varint(len(data)) + data

    def decode(self, buf, pos):
        n, pos = decode_varint(buf, pos)
        if pos + n > len(buf):
            raise CodecError("truncated message field")
        return self.schema.decode(buf[pos : pos + n]), pos + n


uint32 = _Uint(32)
uint64 = _Uint(64)
sint64 = _Sint64()
boolean = _Bool()
fixed64 = _Fixed64()
string = _String()
bytes_ = _Bytes()


def message(schema: "Schema") -> _Message:
    return _Message(schema)


class Field:
    __slots__ = ("tag", "name", "ftype", "repeated", "required", "key")

    def __init__(self, tag: int, name: str, ftype: FieldType, repeated=False, required=False):
        if tag <= 0:
            raise CodecError(f"tag for field {name!r} must be a positive integer")
        self.tag = tag
        self.name = name
        self.ftype = ftype
        self.repeated = repeated
        self.required = required
        self.key = encode_varint((tag << 3) | ftype.wire_type)


def field(tag, name, ftype, repeated=False, required=False) -> Field:
    return Field(tag, name, ftype, repeated=repeated, required=required)


class Schema:
    """Ordered field set with optional oneof exclusivity groups."""

    def __init__(self, name: str, fields: Iterable[Field], oneof: tuple[str, ...] = ()):
        self.name = name
        self.fields = sorted(fields, key=lambda f: f.tag)
        tags = [f.tag for f in self.fields]
        if len(set(tags)) != len(tags):
            raise CodecError(f"duplicate tags in schema {name}")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise CodecError(f"duplicate field names in schema {name}")
        self.by_name = {f.name: f for f in self.fields}
        self.by_tag = {f.tag: f for f in self.fields}
        self.oneof = tuple(oneof)
        for member in self.oneof:
            if member not in self.by_name:
                raise CodecError(f"oneof member {member!r} not a field of {name}")

    def __repr__(self):
        return f"Schema({self.name})"

    def _is_default(self, fld: Field, value) -> bool:
        if value is None:
            return True
        if fld.repeated:
            return len(value) == 0
        if isinstance(fld.ftype, _Message):
            return False  # present sub-message always encodes, even if empty
        return value == fld.ftype.default

    def encode(self, value: dict) -> bytes:
        if not isinstance(value, dict):
            raise CodecError(f"{self.name}: expected dict, got {type(value).__name__}")
        unknown = set(value) - set(self.by_name)
        if unknown:
            raise CodecError(f"{self.name}: unknown fields {sorted(unknown)}")
        if self.oneof:
            set_members = [m for m in self.oneof if value.get(m) is not None]
            if len(set_members) > 1:
                raise CodecError(f"{self.name}: oneof violation, {set_members} all set")
        out = bytearray()
        for fld in self.fields:
            item = value.get(fld.name)
            if self._is_default(fld, item):
                if fld.required:
                    raise CodecError(f"{self.name}: required field {fld.name!r} missing")
                continue
            ftype = fld.ftype
            if fld.repeated:
                if not isinstance(item, (list, tuple)):
                    raise CodecError(f"{self.name}.{fld.name}: expected list")
                for element in item:
                    ftype.check(element)
                    out += fld.key
                    out += ftype.encode(element)
            else:
                ftype.check(item)
                out += fld.key
                out += ftype.encode(item)
        return bytes(out)

    def decode(self, buf: bytes) -> dict:
        value = self.default_value()
        pos = 0
        seen_oneof = None
        n = len(buf)
        by_tag = self.by_tag
        while pos < n:
            key, pos = decode_varint(buf, pos)
            tag, wire = key >> 3, key & 0x7
            fld = by_tag.get(tag)
            if fld is None:
                pos = self._skip(buf, pos, wire)
                continue
            if wire != fld.ftype.wire_type:
                raise CodecError(f"{self.name}.{fld.name}: wire type {wire} != {fld.ftype.wire_type}")
            item, pos = fld.ftype.decode(buf, pos)
            if fld.repeated:
                value[fld.name].append(item)
            else:
                if fld.name in self.oneof:
                    if seen_oneof is not None and seen_oneof != fld.name:
                        raise CodecError(f"{self.name}: duplicated oneof members {seen_oneof}/{fld.name}")
                    seen_oneof = fld.name
                value[fld.name] = item
        return value

    @staticmethod
    def _skip(buf: bytes, pos: int, wire: int) -> int:
        if wire == WT_VARINT:
            _, pos = decode_varint(buf, pos)
            return pos
        if wire == WT_FIXED64:
            if pos + 8 > len(buf):
                raise CodecError("truncated fixed64 while skipping")
            return pos + 8
        if wire == WT_LEN:
            n, pos = decode_varint(buf, pos)
            if pos + n > len(buf):
                raise CodecError("truncated length-delimited field while skipping")
            return pos + n
        raise CodecError(f"unsupported wire type {wire}")

    def default_value(self) -> dict:
        out = {}
        for fld in self.fields:
            if fld.repeated:
                out[fld.name] = []
            elif isinstance(fld.ftype, _Message):
                out[fld.name] = None
            else:
                out[fld.name] = fld.ftype.default
        return out

    def normalize(self, value: dict) -> dict:
        """Round-trip a value through the codec, filling defaults."""
        return self.decode(self.encode(value))


def encode(schema: Schema, value: dict) -> bytes:
    return schema.encode(value)


def decode(schema: Schema, buf: bytes) -> dict:
    return schema.decode(buf)
