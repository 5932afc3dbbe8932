"""Schema: message and record types, index definitions, evolution rules.

Metadata is versioned as a single increasing integer.  Every revision is
immutable and serializes canonically (sorted, tuple-encoded) so it can be
stored next to the data it describes.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Any, Iterable, Optional

from . import expressions as kx
from . import predicates as pr
from . import tuples
from .kv import Transaction
from .message import Message
from .subspace import Subspace

FORMAT_VERSION = 1
METADATA_ENCODING = 1

SCALAR_KINDS = ("int64", "float64", "text", "bytes", "bool")
INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


class MetaDataError(ValueError):
    pass


class EvolutionError(MetaDataError):
    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        super().__init__("; ".join(str(v) for v in violations))


class RecordValidationError(MetaDataError):
    pass


@dataclass(frozen=True)
class Violation:
    code: str
    detail: str

    def __str__(self):
        return f"{self.code}: {self.detail}"


@dataclass(frozen=True)
class FieldDescriptor:
    name: str
    number: int
    kind: str
    repeated: bool = False
    message_type: Optional[str] = None

    def type_signature(self) -> tuple:
        return (self.kind, self.message_type or "")

    def to_tuple(self) -> tuple:
        return (self.name, self.number, self.kind, self.repeated, self.message_type)

    @classmethod
    def from_tuple(cls, t) -> "FieldDescriptor":
        return cls(t[0], t[1], t[2], t[3], t[4])


@dataclass(frozen=True)
class MessageDescriptor:
    name: str
    fields: tuple[FieldDescriptor, ...]
    reserved: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(sorted(self.fields, key=lambda f: f.number)))
        object.__setattr__(self, "reserved", frozenset(self.reserved))

    def field(self, name: str) -> Optional[FieldDescriptor]:
        for f in self.fields:
            if f.name == name:
                return f
        return None

    def by_number(self, number: int) -> Optional[FieldDescriptor]:
        for f in self.fields:
            if f.number == number:
                return f
        return None

    def to_tuple(self) -> tuple:
        return (self.name, tuple(f.to_tuple() for f in self.fields), tuple(sorted(self.reserved)))

    @classmethod
    def from_tuple(cls, t) -> "MessageDescriptor":
        return cls(t[0], tuple(FieldDescriptor.from_tuple(f) for f in t[1]), frozenset(t[2]))


@dataclass(frozen=True)
class RecordType:
    name: str
    primary_key: kx.KeyExpression
    type_key: int
    since_version: int = 0

    def to_tuple(self) -> tuple:
        return (self.name, self.primary_key.to_tuple(), self.type_key, self.since_version)

    @classmethod
    def from_tuple(cls, t) -> "RecordType":
        return cls(t[0], kx.from_tuple(t[1]), t[2], t[3])


class IndexType(enum.Enum):
    VALUE = "VALUE"
    COUNT = "COUNT"
    COUNT_UPDATES = "COUNT_UPDATES"
    COUNT_NON_NULL = "COUNT_NON_NULL"
    SUM = "SUM"
    MIN_EVER = "MIN_EVER"
    MAX_EVER = "MAX_EVER"
    VERSION = "VERSION"
    RANK = "RANK"
    TEXT = "TEXT"

    @property
    def is_aggregate(self) -> bool:
        return self in AGGREGATE_TYPES

    @property
    def idempotent(self) -> bool:
        """Whether re-applying an insert leaves the index unchanged."""
        return self in (IndexType.VALUE, IndexType.VERSION)


AGGREGATE_TYPES = frozenset(
    {
        IndexType.COUNT,
        IndexType.COUNT_UPDATES,
        IndexType.COUNT_NON_NULL,
        IndexType.SUM,
        IndexType.MIN_EVER,
        IndexType.MAX_EVER,
    }
)


@dataclass(frozen=True)
class IndexDefinition:
    name: str
    type: IndexType
    key_expression: kx.KeyExpression
    record_types: tuple[str, ...]
    filter: Optional[pr.QueryComponent] = None
    added_at_version: int = 0
    subspace_key: Optional[int] = None
    options: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "record_types", tuple(sorted(self.record_types)))
        opts = self.options.items() if isinstance(self.options, dict) else self.options
        object.__setattr__(self, "options", tuple(sorted((str(k), v) for k, v in opts)))

    def option(self, name: str, default: Any = None) -> Any:
        return dict(self.options).get(name, default)

    def definition_tuple(self) -> tuple:
        """Everything that determines the index contents."""
        return (
            self.type.value,
            self.key_expression.to_tuple(),
            self.record_types,
            None if self.filter is None else self.filter.to_tuple(),
            self.options,
        )

    def to_tuple(self) -> tuple:
        return (self.name, self.added_at_version, self.subspace_key) + self.definition_tuple()

    @classmethod
    def from_tuple(cls, t) -> "IndexDefinition":
        name, added, sub, kind, expr, types, flt, opts = t
        return cls(
            name,
            IndexType(kind),
            kx.from_tuple(expr),
            tuple(types),
            None if flt is None else pr.from_tuple(flt),
            added,
            sub,
            tuple(tuple(o) for o in opts),
        )


@dataclass(frozen=True)
class FormerIndex:
    name: str
    subspace_key: int
    added_at_version: int
    removed_at_version: int

    def to_tuple(self) -> tuple:
        return (self.name, self.subspace_key, self.added_at_version, self.removed_at_version)


@dataclass(frozen=True)
class RecordMetadata:
    version: int
    messages: dict[str, MessageDescriptor]
    record_types: dict[str, RecordType]
    indexes: tuple[IndexDefinition, ...] = ()
    former_indexes: tuple[FormerIndex, ...] = ()
    store_record_versions: bool = True

    def __hash__(self):
        return hash(self.to_bytes())

    def __eq__(self, other):
        return isinstance(other, RecordMetadata) and self.to_bytes() == other.to_bytes()

    def message(self, name: str) -> MessageDescriptor:
        try:
            return self.messages[name]
        except KeyError:
            raise MetaDataError(f"unknown message type {name!r}") from None

    def record_type(self, name: str) -> RecordType:
        try:
            return self.record_types[name]
        except KeyError:
            raise MetaDataError(f"unknown record type {name!r}") from None

    def record_type_for_key(self, type_key: int) -> RecordType:
        for rt in self.record_types.values():
            if rt.type_key == type_key:
                return rt
        raise MetaDataError(f"no record type with key {type_key}")

    def index(self, name: str) -> IndexDefinition:
        for ix in self.indexes:
            if ix.name == name:
                return ix
        raise MetaDataError(f"unknown index {name!r}")

    def has_index(self, name: str) -> bool:
        return any(ix.name == name for ix in self.indexes)

    def indexes_for_type(self, type_name: str) -> list[IndexDefinition]:
        return [ix for ix in self.indexes if type_name in ix.record_types]

    def has_version_indexes(self) -> bool:
        return any(ix.key_expression.has_version() for ix in self.indexes)

    # -- record checks -----------------------------------------------------

    def validate_record(self, record: Message) -> RecordType:
        if record.type_name not in self.record_types:
            raise RecordValidationError(f"unknown record type {record.type_name!r}")
        self._check_message(record, self.messages[record.type_name])
        rt = self.record_types[record.type_name]
        try:
            pk = rt.primary_key.evaluate(record, kx.EvalContext(record_type_key=rt.type_key))
        except kx.KeyExpressionError as e:
            raise RecordValidationError(f"primary key of {record.type_name}: {e}") from None
        if len(pk) != 1:
            raise RecordValidationError(f"primary key of {record.type_name} produced {len(pk)} tuples")
        if any(v is None for v in pk[0]):
            raise RecordValidationError(f"primary key of {record.type_name} has unset columns")
        return rt

    def _check_message(self, msg: Message, desc: MessageDescriptor) -> None:
        for name, value in msg.fields.items():
            f = desc.field(name)
            if f is None:
                raise RecordValidationError(f"{desc.name} has no field {name!r}")
            if f.repeated:
                if not isinstance(value, list):
                    raise RecordValidationError(f"{desc.name}.{name} is repeated; expected a list")
                for v in value:
                    self._check_value(desc, f, v)
            else:
                self._check_value(desc, f, value)

    def _check_value(self, desc: MessageDescriptor, f: FieldDescriptor, value: Any) -> None:
        ok = {
            "int64": lambda v: isinstance(v, int) and not isinstance(v, bool) and INT64_MIN <= v <= INT64_MAX,
            "float64": lambda v: isinstance(v, float),
            "text": lambda v: isinstance(v, str),
            "bytes": lambda v: isinstance(v, bytes),
            "bool": lambda v: isinstance(v, bool),
            "message": lambda v: isinstance(v, Message) and v.type_name == f.message_type,
        }[f.kind](value)
        if not ok:
            raise RecordValidationError(f"{desc.name}.{f.name} expects {f.message_type or f.kind}, got {value!r}")
        if f.kind == "message":
            self._check_message(value, self.messages[f.message_type])

    # -- self-consistency ----------------------------------------------------

    def check(self) -> list[str]:
        """Internal consistency problems (empty when the metadata is usable)."""
        errors: list[str] = []
        if self.version < 1:
            errors.append("version must be positive")
        for m in self.messages.values():
            numbers = [f.number for f in m.fields]
            names = [f.name for f in m.fields]
            if len(set(numbers)) != len(numbers):
                errors.append(f"{m.name}: duplicate field numbers")
            if len(set(names)) != len(names):
                errors.append(f"{m.name}: duplicate field names")
            for f in m.fields:
                if f.number <= 0:
                    errors.append(f"{m.name}.{f.name}: field numbers must be positive")
                if f.number in m.reserved:
                    errors.append(f"{m.name}.{f.name}: number {f.number} is reserved")
                if f.kind == "message":
                    if f.message_type not in self.messages:
                        errors.append(f"{m.name}.{f.name}: unknown message type {f.message_type!r}")
                elif f.kind not in SCALAR_KINDS:
                    errors.append(f"{m.name}.{f.name}: unknown kind {f.kind!r}")
        type_keys = [rt.type_key for rt in self.record_types.values()]
        if len(set(type_keys)) != len(type_keys):
            errors.append("record type keys must be unique")
        for rt in self.record_types.values():
            if rt.name not in self.messages:
                errors.append(f"record type {rt.name!r} has no message descriptor")
                continue
            errors += [f"{rt.name} primary key: {e}" for e in rt.primary_key.validate(self.messages[rt.name], self.messages)]
            if rt.primary_key.creates_duplicates():
                errors.append(f"{rt.name} primary key must produce exactly one tuple")
        if len({ix.name for ix in self.indexes}) != len(self.indexes):
            errors.append("index names must be unique")
        keys = [ix.subspace_key for ix in self.indexes] + [f.subspace_key for f in self.former_indexes]
        if None in keys:
            errors.append("every index needs a subspace key")
        elif len(set(keys)) != len(keys):
            errors.append("index subspace keys must be unique, including removed indexes")
        for ix in self.indexes:
            if not ix.record_types:
                errors.append(f"index {ix.name!r} lists no record types")
            if ix.added_at_version > self.version:
                errors.append(f"index {ix.name!r} added after metadata version")
            for t in ix.record_types:
                if t not in self.record_types:
                    errors.append(f"index {ix.name!r}: unknown record type {t!r}")
                    continue
                desc = self.messages[t]
                errors += [f"index {ix.name!r} on {t}: {e}" for e in ix.key_expression.validate(desc, self.messages)]
                if ix.filter is not None:
                    errors += [f"index {ix.name!r} filter on {t}: {e}" for e in ix.filter.validate(desc, self.messages)]
            errors += _check_index_shape(ix)
            if ix.type is IndexType.VERSION and not self.store_record_versions:
                errors.append(f"index {ix.name!r}: VERSION indexes need record versions enabled")
            pk_lengths = {self.record_types[t].primary_key.column_count for t in ix.record_types if t in self.record_types}
            if len(pk_lengths) > 1:
                errors.append(f"index {ix.name!r}: record types have primary keys of different lengths")
        return errors

    # -- serialization -------------------------------------------------------

    def to_tuple(self) -> tuple:
        return (
            METADATA_ENCODING,
            self.version,
            tuple(self.messages[k].to_tuple() for k in sorted(self.messages)),
            tuple(self.record_types[k].to_tuple() for k in sorted(self.record_types)),
            tuple(ix.to_tuple() for ix in sorted(self.indexes, key=lambda i: i.name)),
            tuple(f.to_tuple() for f in sorted(self.former_indexes, key=lambda f: (f.subspace_key, f.name))),
            self.store_record_versions,
        )

    def to_bytes(self) -> bytes:
        return tuples.pack(self.to_tuple())

    @classmethod
    def from_bytes(cls, data: bytes) -> "RecordMetadata":
        enc, version, msgs, rts, ixs, formers, versions = tuples.unpack(data)
        if enc != METADATA_ENCODING:
            raise MetaDataError(f"unsupported metadata encoding {enc}")
        messages = {m[0]: MessageDescriptor.from_tuple(m) for m in msgs}
        record_types = {r[0]: RecordType.from_tuple(r) for r in rts}
        return cls(
            version,
            messages,
            record_types,
            tuple(IndexDefinition.from_tuple(i) for i in ixs),
            tuple(FormerIndex(*f) for f in formers),
            versions,
        )


def _check_index_shape(ix: IndexDefinition) -> list[str]:
    expr = ix.key_expression
    errors = []
    if ix.type.is_aggregate or ix.type is IndexType.RANK:
        if not isinstance(expr, kx.GroupBy):
            if ix.type in (IndexType.COUNT, IndexType.COUNT_UPDATES):
                return []
            errors.append(f"index {ix.name!r}: {ix.type.value} needs a group_by expression")
        elif ix.type in (IndexType.COUNT, IndexType.COUNT_UPDATES):
            if expr.grouped.column_count != 0:
                errors.append(f"index {ix.name!r}: {ix.type.value} groups must not aggregate a column")
        elif expr.grouped.column_count != 1:
            errors.append(f"index {ix.name!r}: {ix.type.value} aggregates exactly one column")
    if ix.type is IndexType.VERSION and not expr.has_version():
        errors.append(f"index {ix.name!r}: VERSION index expression must contain version()")
    if ix.type is not IndexType.VERSION and expr.has_version():
        errors.append(f"index {ix.name!r}: version() only allowed in VERSION indexes")
    if ix.type is IndexType.TEXT:
        core = expr.grouped if isinstance(expr, kx.GroupBy) else expr
        if core.column_count != 1 or not isinstance(core, (kx.Field, kx.Nest)):
            errors.append(f"index {ix.name!r}: TEXT indexes one text field")
    return errors


# -- evolution -----------------------------------------------------------------

def validate_evolution(old: RecordMetadata, new: RecordMetadata) -> list[Violation]:
    """Everything that makes ``new`` an unsafe successor of ``old``."""
    v: list[Violation] = []
    if new.version <= old.version:
        v.append(Violation("version-not-increased", f"{old.version} -> {new.version}"))
    v += [Violation("invalid-metadata", e) for e in new.check()]

    for name, om in old.messages.items():
        nm = new.messages.get(name)
        if nm is None:
            if name in old.record_types:
                continue  # reported as record-type-removed below
            v.append(Violation("message-removed", name))
            continue
        for n in sorted(om.reserved - nm.reserved):
            v.append(Violation("reservation-dropped", f"{name} number {n}"))
        for of in om.fields:
            nf = nm.by_number(of.number)
            if nf is None:
                if of.number not in nm.reserved:
                    v.append(Violation("field-removed-unreserved", f"{name}.{of.name} ({of.number})"))
                continue
            if nf.type_signature() != of.type_signature():
                code = "field-number-reuse" if nf.name != of.name else "field-type-change"
                v.append(Violation(code, f"{name} number {of.number}: {of.type_signature()} -> {nf.type_signature()}"))
            elif nf.repeated != of.repeated:
                v.append(Violation("field-label-change", f"{name}.{of.name}"))
        for nf in nm.fields:
            if nf.number in om.reserved:
                v.append(Violation("field-number-reuse", f"{name} number {nf.number} is reserved"))

    for name, ort in old.record_types.items():
        nrt = new.record_types.get(name)
        if nrt is None:
            v.append(Violation("record-type-removed", name))
            continue
        if nrt.primary_key != ort.primary_key:
            v.append(Violation("primary-key-change", f"{name}: {ort.primary_key} -> {nrt.primary_key}"))
        if nrt.type_key != ort.type_key:
            v.append(Violation("record-type-key-change", name))
    for name, nrt in new.record_types.items():
        if name not in old.record_types and nrt.since_version <= old.version:
            v.append(Violation("record-type-version-stale", name))

    new_by_name = {ix.name: ix for ix in new.indexes}
    new_former_keys = {f.subspace_key for f in new.former_indexes}
    old_keys = {ix.subspace_key: ix.name for ix in old.indexes}
    old_keys.update({f.subspace_key: f.name for f in old.former_indexes})
    for f in old.former_indexes:
        if f not in new.former_indexes:
            v.append(Violation("former-index-dropped", f.name))
    for oix in old.indexes:
        nix = new_by_name.get(oix.name)
        retired = oix.subspace_key in new_former_keys
        if nix is None:
            if not retired:
                v.append(Violation("index-removed-without-former", oix.name))
            continue
        if nix.subspace_key == oix.subspace_key:
            if nix.definition_tuple() != oix.definition_tuple() or nix.added_at_version != oix.added_at_version:
                v.append(Violation("index-changed", f"{oix.name} changed in place; retire the old subspace"))
        elif not retired:
            v.append(Violation("index-removed-without-former", f"{oix.name} moved without retiring its subspace"))
    for nix in new.indexes:
        existing = old_keys.get(nix.subspace_key)
        if existing is not None and not (existing == nix.name and any(o.subspace_key == nix.subspace_key for o in old.indexes)):
            v.append(Violation("index-subspace-reuse", f"{nix.name} reuses subspace {nix.subspace_key}"))
        old_same = next((o for o in old.indexes if o.subspace_key == nix.subspace_key), None)
        if old_same is None and nix.added_at_version <= old.version:
            v.append(Violation("index-version-stale", f"{nix.name} added at {nix.added_at_version}"))
    for f in new.former_indexes:
        if f not in old.former_indexes and f.removed_at_version <= old.version:
            v.append(Violation("index-version-stale", f"former index {f.name} removed at {f.removed_at_version}"))
    return v


# -- builder -------------------------------------------------------------------

class MetaDataBuilder:
    """Derives the next metadata revision, keeping type keys and index subspaces."""

    def __init__(self, previous: Optional[RecordMetadata] = None, version: Optional[int] = None):
        self.previous = previous
        self.version = version if version is not None else (previous.version + 1 if previous else 1)
        self.messages: dict[str, MessageDescriptor] = {}
        self.record_types: dict[str, tuple[kx.KeyExpression]] = {}
        self._indexes: list[dict] = []
        self.store_record_versions = True
        if previous is not None:
            self.store_record_versions = previous.store_record_versions

    def add_message(self, name: str, fields: Iterable[FieldDescriptor], reserved: Iterable[int] = ()) -> "MetaDataBuilder":
        if name in self.messages:
            raise MetaDataError(f"duplicate message {name!r}")
        self.messages[name] = MessageDescriptor(name, tuple(fields), frozenset(reserved))
        return self

    def add_record_type(
        self,
        name: str,
        fields: Iterable[FieldDescriptor],
        primary_key: kx.KeyExpression | str,
        reserved: Iterable[int] = (),
    ) -> "MetaDataBuilder":
        self.add_message(name, fields, reserved)
        self.record_types[name] = (kx.parse(primary_key) if isinstance(primary_key, str) else primary_key,)
        return self

    def add_index(
        self,
        name: str,
        type: IndexType | str,
        key_expression: kx.KeyExpression | str,
        record_types: Iterable[str],
        filter: Optional[pr.QueryComponent] = None,
        **options: Any,
    ) -> "MetaDataBuilder":
        self._indexes.append(
            dict(
                name=name,
                type=IndexType(type) if isinstance(type, str) else type,
                key_expression=kx.parse(key_expression) if isinstance(key_expression, str) else key_expression,
                record_types=tuple(record_types),
                filter=filter,
                options=options,
            )
        )
        return self

    def build(self, check: bool = True) -> RecordMetadata:
        prev = self.previous
        prev_messages = prev.messages if prev else {}
        messages = {}
        for name, m in self.messages.items():
            # Numbers that disappear are reserved automatically so they are never reused.
            old = prev_messages.get(name)
            reserved = set(m.reserved)
            if old is not None:
                reserved |= old.reserved
                current = {f.number for f in m.fields}
                reserved |= {f.number for f in old.fields if f.number not in current}
            messages[name] = MessageDescriptor(name, m.fields, frozenset(reserved))

        prev_types = prev.record_types if prev else {}
        next_type_key = max((rt.type_key for rt in prev_types.values()), default=0) + 1
        record_types = {}
        for name, (pk,) in self.record_types.items():
            old = prev_types.get(name)
            if old is not None:
                record_types[name] = RecordType(name, pk, old.type_key, old.since_version)
            else:
                record_types[name] = RecordType(name, pk, next_type_key, self.version)
                next_type_key += 1

        prev_indexes = {ix.name: ix for ix in prev.indexes} if prev else {}
        formers = list(prev.former_indexes) if prev else []
        used = [ix.subspace_key for ix in prev_indexes.values()] + [f.subspace_key for f in formers]
        next_key = max(used, default=0) + 1
        indexes = []
        names = set()
        for entry in self._indexes:
            candidate = IndexDefinition(added_at_version=self.version, **entry)
            names.add(candidate.name)
            old = prev_indexes.get(candidate.name)
            if old is not None and old.definition_tuple() == candidate.definition_tuple():
                indexes.append(old)
                continue
            if old is not None:
                formers.append(FormerIndex(old.name, old.subspace_key, old.added_at_version, self.version))
            indexes.append(replace(candidate, subspace_key=next_key))
            next_key += 1
        for old in prev_indexes.values():
            if old.name not in names:
                formers.append(FormerIndex(old.name, old.subspace_key, old.added_at_version, self.version))

        meta = RecordMetadata(
            self.version, messages, record_types, tuple(indexes), tuple(formers), self.store_record_versions
        )
        if check:
            problems = meta.check()
            if problems:
                raise MetaDataError("; ".join(problems))
        return meta


# -- persistence -----------------------------------------------------------------

class MetaDataStore:
    """Keeps every metadata revision under ``subspace``, keyed by version."""

    def __init__(self, subspace: Subspace):
        self.subspace = subspace

    def save(self, txn: Transaction, meta: RecordMetadata) -> None:
        problems = meta.check()
        if problems:
            raise EvolutionError([Violation("invalid-metadata", p) for p in problems])
        latest = self.load(txn, None, missing_ok=True)
        if latest is not None:
            violations = validate_evolution(latest, meta)
            if violations:
                raise EvolutionError(violations)
        txn.set(self.subspace.pack((meta.version,)), meta.to_bytes())

    def load(self, txn: Transaction, version: Optional[int] = None, missing_ok: bool = False) -> Optional[RecordMetadata]:
        if version is None:
            begin, end = self.subspace.range()
            rows = txn.get_range(begin, end, limit=1, reverse=True)
            raw = rows[0][1] if rows else None
        else:
            raw = txn.get(self.subspace.pack((version,)))
        if raw is None:
            if missing_ok:
                return None
            raise MetaDataError("metadata not found" if version is None else f"metadata version {version} not found")
        return RecordMetadata.from_bytes(raw)

    def versions(self, txn: Transaction) -> list[int]:
        begin, end = self.subspace.range()
        return [self.subspace.unpack(k)[0] for k, _ in txn.get_range(begin, end)]


# -- store header ----------------------------------------------------------------

@dataclass(frozen=True)
class StoreHeader:
    metadata_version: int
    format_version: int = FORMAT_VERSION
    user_version: int = 0

    def to_bytes(self) -> bytes:
        return tuples.pack((self.metadata_version, self.format_version, self.user_version))

    @classmethod
    def from_bytes(cls, data: bytes) -> "StoreHeader":
        return cls(*tuples.unpack(data))


# -- schema files ------------------------------------------------------------------

def _field_from_yaml(entry: dict, messages: set[str]) -> FieldDescriptor:
    kind = entry["type"]
    repeated = bool(entry.get("repeated", False))
    if kind in SCALAR_KINDS:
        return FieldDescriptor(entry["name"], int(entry["number"]), kind, repeated)
    if kind in messages:
        return FieldDescriptor(entry["name"], int(entry["number"]), "message", repeated, kind)
    raise MetaDataError(f"field {entry['name']!r}: unknown type {kind!r}")


def compile_schema(text: str, previous: Optional[RecordMetadata] = None) -> RecordMetadata:
    """Compile a YAML schema document (see README) into metadata.

    With ``previous`` the result is a successor revision: type keys and index
    subspaces are kept for unchanged definitions, and dropped or redefined
    indexes are retired.
    """
    import yaml

    doc = yaml.safe_load(text) or {}
    if not isinstance(doc, dict):
        raise MetaDataError("schema must be a mapping")
    version = doc.get("version")
    b = MetaDataBuilder(previous, int(version) if version is not None else None)
    if "store_record_versions" in doc:
        b.store_record_versions = bool(doc["store_record_versions"])
    nested = doc.get("messages") or {}
    rtypes = doc.get("record_types") or {}
    names = set(nested) | set(rtypes)
    for name, body in nested.items():
        b.add_message(name, [_field_from_yaml(f, names) for f in body.get("fields", [])], body.get("reserved", ()))
    for name, body in rtypes.items():
        if "primary_key" not in body:
            raise MetaDataError(f"record type {name!r} needs a primary_key")
        b.add_record_type(
            name,
            [_field_from_yaml(f, names) for f in body.get("fields", [])],
            body["primary_key"],
            body.get("reserved", ()),
        )
    for ix in doc.get("indexes") or []:
        flt = None
        if ix.get("filter"):
            from .query.text import parse_predicate

            flt = parse_predicate(ix["filter"])
        # YAML 1.1 reads a bare ``on`` key as boolean true.
        on = ix.get("on") or ix.get(True) or ix.get("record_types")
        if not on:
            raise MetaDataError(f"index {ix.get('name')!r} needs record types (on: ...)")
        if isinstance(on, str):
            on = [on]
        b.add_index(ix["name"], ix["type"].upper(), ix["key"], on, flt, **(ix.get("options") or {}))
    return b.build()
