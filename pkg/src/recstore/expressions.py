"""Key expressions: declarative functions from a record to one or more tuples.

They define primary keys and index keys.  Every expression knows its column
count statically and can be serialized to a tuple (for stored metadata) and
rendered to / parsed from a small textual syntax::

    concat(field("id"), nest(field("parent"), field("b")))
    fanout(field("elem"))
    group_by(field("x"), by=field("user"))
"""
from __future__ import annotations

import ast
import enum
import itertools
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable, Mapping, Optional, Sequence

from .message import Message
from .tuples import Versionstamp


class KeyExpressionError(ValueError):
    pass


class FanType(enum.Enum):
    SCALAR = "scalar"
    FAN_OUT = "fanout"
    CONCATENATE = "concatenate"


@dataclass
class EvalContext:
    """What an evaluation may need beyond the record itself."""

    version: Optional[Versionstamp] = None
    record_type_key: Any = None
    functions: Optional["FunctionRegistry"] = None


class KeyExpression:
    column_count: int = 0

    def evaluate(self, record: Optional[Message], ctx: Optional[EvalContext] = None) -> list[tuple]:
        raise NotImplementedError

    def evaluate_single(self, record: Optional[Message], ctx: Optional[EvalContext] = None) -> tuple:
        results = self.evaluate(record, ctx)
        if len(results) != 1:
            raise KeyExpressionError(f"{self} produced {len(results)} tuples, expected exactly one")
        return results[0]

    def validate(self, descriptor, types: Mapping[str, Any]) -> list[str]:
        return []

    def to_tuple(self) -> tuple:
        raise NotImplementedError

    def fields_used(self) -> list[str]:
        """Top-level field names, in column order, for simple field lists."""
        return []

    def creates_duplicates(self) -> bool:
        return False

    def has_version(self) -> bool:
        return False

    # Expression trees are values: compare by their serialized form.
    def __eq__(self, other):
        return isinstance(other, KeyExpression) and self.to_tuple() == other.to_tuple()

    def __hash__(self):
        return hash(self.to_tuple())

    def __repr__(self):
        return str(self)


@dataclass(eq=False, repr=False)
class Field(KeyExpression):
    name: str
    fan: FanType = FanType.SCALAR

    @property
    def column_count(self) -> int:
        return 1

    def values(self, record: Optional[Message]) -> list:
        if record is None:
            return []
        value = record.get(self.name)
        if value is None:
            return []
        return value if isinstance(value, list) else [value]

    def evaluate(self, record, ctx=None):
        if self.fan is FanType.SCALAR:
            value = None if record is None else record.get(self.name)
            if isinstance(value, list):
                raise KeyExpressionError(f"field {self.name!r} is repeated; use fanout or concatenate")
            return [(value,)]
        values = self.values(record)
        if self.fan is FanType.FAN_OUT:
            return [(v,) for v in values]
        return [(list(values),)]

    def nest(self, child: "KeyExpression | str") -> "Nest":
        if isinstance(child, str):
            child = Field(child)
        return Nest(self, child)

    def validate(self, descriptor, types):
        f = descriptor.field(self.name) if descriptor is not None else None
        if f is None:
            return [f"field {self.name!r} not found in {getattr(descriptor, 'name', '?')}"]
        errors = []
        if f.repeated and self.fan is FanType.SCALAR:
            errors.append(f"repeated field {self.name!r} needs fanout or concatenate")
        if not f.repeated and self.fan is not FanType.SCALAR:
            errors.append(f"{self.fan.value} on singular field {self.name!r}")
        if f.kind == "message":
            errors.append(f"message field {self.name!r} must be accessed with nest")
        return errors

    def to_tuple(self):
        return ("field", self.name, self.fan.value)

    def fields_used(self):
        return [self.name]

    def creates_duplicates(self):
        return self.fan is FanType.FAN_OUT

    def __str__(self):
        base = f'field("{self.name}")'
        if self.fan is FanType.FAN_OUT:
            return f"fanout({base})"
        if self.fan is FanType.CONCATENATE:
            return f"concatenate({base})"
        return base


@dataclass(eq=False, repr=False)
class Nest(KeyExpression):
    parent: Field
    child: KeyExpression

    @property
    def column_count(self) -> int:
        return self.child.column_count

    def evaluate(self, record, ctx=None):
        if self.parent.fan is FanType.FAN_OUT:
            out = []
            for sub in self.parent.values(record):
                out.extend(self.child.evaluate(sub, ctx))
            return out
        if self.parent.fan is FanType.CONCATENATE:
            parts = [self.child.evaluate(sub, ctx) for sub in self.parent.values(record)]
            flat = [t for part in parts for t in part]
            return [(flat,)]
        sub = None if record is None else record.get(self.parent.name)
        return self.child.evaluate(sub, ctx)

    def validate(self, descriptor, types):
        f = descriptor.field(self.parent.name) if descriptor is not None else None
        if f is None:
            return [f"field {self.parent.name!r} not found in {getattr(descriptor, 'name', '?')}"]
        if f.kind != "message":
            return [f"nest on non-message field {self.parent.name!r}"]
        errors = []
        if f.repeated and self.parent.fan is FanType.SCALAR:
            errors.append(f"repeated field {self.parent.name!r} needs fanout or concatenate")
        if not f.repeated and self.parent.fan is not FanType.SCALAR:
            errors.append(f"{self.parent.fan.value} on singular field {self.parent.name!r}")
        nested = types.get(f.message_type)
        if nested is None:
            return errors + [f"unknown message type {f.message_type!r}"]
        return errors + self.child.validate(nested, types)

    def to_tuple(self):
        return ("nest", self.parent.to_tuple(), self.child.to_tuple())

    def fields_used(self):
        return [f"{self.parent.name}.{n}" for n in self.child.fields_used()]

    def creates_duplicates(self):
        return self.parent.fan is FanType.FAN_OUT or self.child.creates_duplicates()

    def has_version(self):
        return self.child.has_version()

    def __str__(self):
        return f"nest({self.parent}, {self.child})"


@dataclass(eq=False, repr=False)
class Then(KeyExpression):
    children: tuple

    def __init__(self, *children: KeyExpression):
        flat: list[KeyExpression] = []
        for c in children:
            flat.extend(c.children if isinstance(c, Then) else [c])
        self.children = tuple(flat)

    @property
    def column_count(self) -> int:
        return sum(c.column_count for c in self.children)

    def evaluate(self, record, ctx=None):
        parts = [c.evaluate(record, ctx) for c in self.children]
        return [sum(combo, ()) for combo in itertools.product(*parts)]

    def validate(self, descriptor, types):
        return [e for c in self.children for e in c.validate(descriptor, types)]

    def to_tuple(self):
        return ("then", tuple(c.to_tuple() for c in self.children))

    def fields_used(self):
        return [n for c in self.children for n in c.fields_used()]

    def creates_duplicates(self):
        return any(c.creates_duplicates() for c in self.children)

    def has_version(self):
        return any(c.has_version() for c in self.children)

    def __str__(self):
        return "concat(" + ", ".join(str(c) for c in self.children) + ")"


class _Leaf(KeyExpression):
    tag = ""

    def to_tuple(self):
        return (self.tag,)

    def __str__(self):
        return f"{self.tag}()"


class Empty(_Leaf):
    tag = "empty"
    column_count = 0

    def evaluate(self, record, ctx=None):
        return [()]


class RecordTypeKey(_Leaf):
    tag = "record_type"
    column_count = 1

    def evaluate(self, record, ctx=None):
        if ctx is None or ctx.record_type_key is None:
            raise KeyExpressionError("record type key needs the record's metadata")
        return [(ctx.record_type_key,)]


class VersionKey(_Leaf):
    """The 12-byte commit version of the record's last modification."""

    tag = "version"
    column_count = 1

    def evaluate(self, record, ctx=None):
        return [(None if ctx is None else ctx.version,)]

    def has_version(self):
        return True


@dataclass(eq=False, repr=False)
class Function(KeyExpression):
    name: str
    arguments: KeyExpression
    arity: int

    @property
    def column_count(self) -> int:
        return self.arity

    def evaluate(self, record, ctx=None):
        registry = (ctx.functions if ctx and ctx.functions else None) or DEFAULT_FUNCTIONS
        fn = registry.get(self.name)
        out = []
        for args in self.arguments.evaluate(record, ctx):
            for result in fn(args):
                if len(result) != self.arity:
                    raise KeyExpressionError(
                        f"function {self.name!r} returned {len(result)} columns, declared {self.arity}"
                    )
                out.append(tuple(result))
        return out

    def validate(self, descriptor, types):
        return self.arguments.validate(descriptor, types)

    def to_tuple(self):
        return ("function", self.name, self.arity, self.arguments.to_tuple())

    def creates_duplicates(self):
        return self.arguments.creates_duplicates()

    def has_version(self):
        return self.arguments.has_version()

    def __str__(self):
        return f'function("{self.name}", {self.arguments}, arity={self.arity})'


@dataclass(eq=False, repr=False)
class GroupBy(KeyExpression):
    """Grouping columns first, then the grouped (aggregated or ranked) columns."""

    grouped: KeyExpression
    grouping: KeyExpression = dc_field(default_factory=Empty)

    @property
    def column_count(self) -> int:
        return self.grouping.column_count + self.grouped.column_count

    @property
    def grouping_count(self) -> int:
        return self.grouping.column_count

    def evaluate(self, record, ctx=None):
        groups = self.grouping.evaluate(record, ctx)
        values = self.grouped.evaluate(record, ctx)
        return [g + v for g, v in itertools.product(groups, values)]

    def validate(self, descriptor, types):
        return self.grouping.validate(descriptor, types) + self.grouped.validate(descriptor, types)

    def to_tuple(self):
        return ("group_by", self.grouped.to_tuple(), self.grouping.to_tuple())

    def fields_used(self):
        return self.grouping.fields_used() + self.grouped.fields_used()

    def creates_duplicates(self):
        return self.grouped.creates_duplicates() or self.grouping.creates_duplicates()

    def has_version(self):
        return self.grouped.has_version() or self.grouping.has_version()

    def __str__(self):
        return f"group_by({self.grouped}, by={self.grouping})"


@dataclass(eq=False, repr=False)
class KeyWithValue(KeyExpression):
    """Key columns go into the index entry's key, value columns into its value."""

    key: KeyExpression
    value: KeyExpression

    @property
    def column_count(self) -> int:
        return self.key.column_count + self.value.column_count

    @property
    def split_point(self) -> int:
        return self.key.column_count

    def evaluate(self, record, ctx=None):
        keys = self.key.evaluate(record, ctx)
        values = self.value.evaluate(record, ctx)
        return [k + v for k, v in itertools.product(keys, values)]

    def validate(self, descriptor, types):
        errors = self.key.validate(descriptor, types) + self.value.validate(descriptor, types)
        if self.value.creates_duplicates():
            errors.append("key_with_value value part must not fan out")
        return errors

    def to_tuple(self):
        return ("key_with_value", self.key.to_tuple(), self.value.to_tuple())

    def fields_used(self):
        return self.key.fields_used() + self.value.fields_used()

    def creates_duplicates(self):
        return self.key.creates_duplicates()

    def has_version(self):
        return self.key.has_version()

    def __str__(self):
        return f"key_with_value({self.key}, {self.value})"


# -- constructors -----------------------------------------------------------

def field(name: str, fan: FanType = FanType.SCALAR) -> Field:
    return Field(name, fan)


def fanout(f: Field | str) -> Field:
    return Field(f if isinstance(f, str) else f.name, FanType.FAN_OUT)


def concatenate(f: Field | str) -> Field:
    return Field(f if isinstance(f, str) else f.name, FanType.CONCATENATE)


def concat(*children: KeyExpression) -> KeyExpression:
    return children[0] if len(children) == 1 else Then(*children)


def nest(parent: Field | str, child: KeyExpression | str) -> Nest:
    if isinstance(parent, str):
        parent = Field(parent)
    return parent.nest(child)


def group_by(grouped: KeyExpression, by: Optional[KeyExpression] = None) -> GroupBy:
    return GroupBy(grouped, by if by is not None else Empty())


def record_type() -> RecordTypeKey:
    return RecordTypeKey()


def version() -> VersionKey:
    return VersionKey()


def empty() -> Empty:
    return Empty()


def function(name: str, arguments: KeyExpression, arity: int) -> Function:
    return Function(name, arguments, arity)


def key_with_value(key: KeyExpression, value: KeyExpression) -> KeyWithValue:
    return KeyWithValue(key, value)


# -- function registry ------------------------------------------------------

class FunctionRegistry:
    """Named evaluators for ``function`` expressions; metadata stores only names."""

    def __init__(self, parent: Optional["FunctionRegistry"] = None):
        self._fns: dict[str, Callable[[tuple], list[tuple]]] = {}
        self._parent = parent

    def register(self, name: str, fn: Callable[[tuple], list[tuple]]) -> None:
        self._fns[name] = fn

    def get(self, name: str) -> Callable[[tuple], list[tuple]]:
        if name in self._fns:
            return self._fns[name]
        if self._parent is not None:
            return self._parent.get(name)
        raise KeyExpressionError(f"no function registered as {name!r}")

    def child(self) -> "FunctionRegistry":
        return FunctionRegistry(self)


def incarnation_order(args: tuple) -> list[tuple]:
    """``(incarnation, version)`` for versioned records, ``(0, legacy_counter)`` otherwise.

    Legacy counter values sort before every incarnation >= 1, so records
    written before versions existed come first in sync order.
    """
    incarnation, version_value, legacy = args
    if (version_value is None) == (legacy is None):
        raise KeyExpressionError("exactly one of version and legacy counter must be present")
    if version_value is not None:
        return [(incarnation if incarnation is not None else 0, version_value)]
    return [(0, legacy)]


DEFAULT_FUNCTIONS = FunctionRegistry()
DEFAULT_FUNCTIONS.register("incarnation_order", incarnation_order)


# -- serialization ----------------------------------------------------------

def from_tuple(t: Sequence) -> KeyExpression:
    tag = t[0]
    if tag == "field":
        return Field(t[1], FanType(t[2]))
    if tag == "nest":
        parent = from_tuple(t[1])
        assert isinstance(parent, Field)
        return Nest(parent, from_tuple(t[2]))
    if tag == "then":
        return Then(*(from_tuple(c) for c in t[1]))
    if tag == "empty":
        return Empty()
    if tag == "record_type":
        return RecordTypeKey()
    if tag == "version":
        return VersionKey()
    if tag == "function":
        return Function(t[1], from_tuple(t[3]), t[2])
    if tag == "group_by":
        return GroupBy(from_tuple(t[1]), from_tuple(t[2]))
    if tag == "key_with_value":
        return KeyWithValue(from_tuple(t[1]), from_tuple(t[2]))
    raise KeyExpressionError(f"unknown key expression tag {tag!r}")


_FAN_NAMES = {"scalar": FanType.SCALAR, "fanout": FanType.FAN_OUT, "concatenate": FanType.CONCATENATE}


def parse(text: str) -> KeyExpression:
    """Parse the textual expression syntax (a restricted Python call syntax)."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise KeyExpressionError(f"cannot parse key expression {text!r}: {exc.msg}") from exc
    return _build(tree.body)


def _const(node: ast.AST) -> Any:
    if isinstance(node, ast.Constant):
        return node.value
    raise KeyExpressionError(f"expected a literal, found {ast.dump(node)}")


def _build(node: ast.AST) -> KeyExpression:
    if not isinstance(node, ast.Call):
        raise KeyExpressionError(f"expected an expression call, found {ast.dump(node)}")
    kwargs = {k.arg: k.value for k in node.keywords}
    if isinstance(node.func, ast.Attribute):
        target = _build(node.func.value)
        if node.func.attr != "nest" or not isinstance(target, Field):
            raise KeyExpressionError(f"unsupported method {node.func.attr!r}")
        arg = node.args[0]
        child = Field(_const(arg)) if isinstance(arg, ast.Constant) else _build(arg)
        return target.nest(child)
    if not isinstance(node.func, ast.Name):
        raise KeyExpressionError("unsupported expression form")
    name = node.func.id
    args = node.args
    if name == "field":
        fan = _FAN_NAMES[_const(args[1])] if len(args) > 1 else FanType.SCALAR
        if "fan" in kwargs:
            fan = _FAN_NAMES[_const(kwargs["fan"])]
        return Field(_const(args[0]), fan)
    if name in ("fanout", "concatenate"):
        inner = args[0]
        fname = _const(inner) if isinstance(inner, ast.Constant) else _build(inner)
        return fanout(fname) if name == "fanout" else concatenate(fname)
    if name in ("concat", "then"):
        return concat(*(_build(a) for a in args))
    if name == "nest":
        parent = _build(args[0])
        if not isinstance(parent, Field):
            raise KeyExpressionError("nest parent must be a field")
        child = args[1]
        return parent.nest(Field(_const(child)) if isinstance(child, ast.Constant) else _build(child))
    if name == "group_by":
        by = kwargs.pop("by", None)
        grouped_nodes = list(args) + list(kwargs.values())
        if len(grouped_nodes) != 1:
            raise KeyExpressionError("group_by takes exactly one grouped expression")
        return group_by(_build(grouped_nodes[0]), _build(by) if by is not None else None)
    if name == "key_with_value":
        return KeyWithValue(_build(args[0]), _build(args[1]))
    if name == "function":
        arity = _const(kwargs["arity"]) if "arity" in kwargs else _const(args[2])
        return Function(_const(args[0]), _build(args[1]), arity)
    if name == "record_type":
        return RecordTypeKey()
    if name == "version":
        return VersionKey()
    if name == "empty":
        return Empty()
    raise KeyExpressionError(f"unknown key expression {name!r}")
