"""Record predicates used by queries and index filters.

Evaluation is three-valued: a comparison against an unset field is unknown
(``None``) and a record passes a filter only when the predicate is ``True``.
Values are compared with tuple ordering so predicate results agree with
index order exactly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Optional, Sequence

from . import expressions as kx
from . import tuples
from .message import Message


class Comparator(enum.Enum):
    EQUALS = "="
    NOT_EQUALS = "!="
    LESS_THAN = "<"
    LESS_THAN_OR_EQUALS = "<="
    GREATER_THAN = ">"
    GREATER_THAN_OR_EQUALS = ">="
    STARTS_WITH = "starts_with"
    IS_NULL = "is_null"
    NOT_NULL = "not_null"


class TextMode(enum.Enum):
    TOKEN = "token"
    ALL = "all"
    PREFIX = "prefix"
    PHRASE = "phrase"
    PROXIMITY = "proximity"


def _cmp(a: Any, b: Any) -> int:
    return tuples.compare((a,), (b,))


def compare_value(value: Any, comparator: Comparator, operand: Any) -> Optional[bool]:
    if comparator is Comparator.IS_NULL:
        return value is None
    if comparator is Comparator.NOT_NULL:
        return value is not None
    if value is None or operand is None:
        return None
    if comparator is Comparator.STARTS_WITH:
        if isinstance(value, str) and isinstance(operand, str):
            return value.startswith(operand)
        if isinstance(value, bytes) and isinstance(operand, bytes):
            return value.startswith(operand)
        return False
    c = _cmp(value, operand)
    return {
        Comparator.EQUALS: c == 0,
        Comparator.NOT_EQUALS: c != 0,
        Comparator.LESS_THAN: c < 0,
        Comparator.LESS_THAN_OR_EQUALS: c <= 0,
        Comparator.GREATER_THAN: c > 0,
        Comparator.GREATER_THAN_OR_EQUALS: c >= 0,
    }[comparator]


class QueryComponent:
    def evaluate(self, record: Optional[Message], ctx: Any = None) -> Optional[bool]:
        raise NotImplementedError

    def validate(self, descriptor, types) -> list[str]:
        return []

    def to_tuple(self) -> tuple:
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, QueryComponent) and self.to_tuple() == other.to_tuple()

    def __hash__(self):
        return hash(self.to_tuple())

    def __repr__(self):
        return str(self)

    def __and__(self, other: "QueryComponent") -> "And":
        return And(self, other)

    def __or__(self, other: "QueryComponent") -> "Or":
        return Or(self, other)

    def __invert__(self) -> "Not":
        return Not(self)


def _literal(v: Any) -> str:
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if v is None:
        return "null"
    if v is True:
        return "true"
    if v is False:
        return "false"
    if isinstance(v, bytes):
        return f"x'{v.hex()}'"
    return repr(v)


@dataclass(eq=False, repr=False)
class FieldComparison(QueryComponent):
    field: str
    comparator: Comparator
    value: Any = None

    def evaluate(self, record, ctx=None):
        v = None if record is None else record.get(self.field)
        if isinstance(v, list):
            return None
        return compare_value(v, self.comparator, self.value)

    def validate(self, descriptor, types):
        f = descriptor.field(self.field)
        if f is None:
            return [f"field {self.field!r} not found in {descriptor.name}"]
        if f.repeated:
            return [f"repeated field {self.field!r} needs one_of_them"]
        if f.kind == "message":
            return [f"message field {self.field!r} must be compared through nest"]
        return []

    def to_tuple(self):
        return ("cmp", self.field, self.comparator.value, self.value)

    def __str__(self):
        if self.comparator in (Comparator.IS_NULL, Comparator.NOT_NULL):
            return f"{self.field} {'IS NULL' if self.comparator is Comparator.IS_NULL else 'IS NOT NULL'}"
        op = "STARTS_WITH" if self.comparator is Comparator.STARTS_WITH else self.comparator.value
        return f"{self.field} {op} {_literal(self.value)}"


@dataclass(eq=False, repr=False)
class OneOfThem(QueryComponent):
    """True when some element of a repeated field satisfies the comparison."""

    field: str
    comparator: Comparator
    value: Any = None

    def evaluate(self, record, ctx=None):
        values = [] if record is None else record.get(self.field) or []
        result: Optional[bool] = False
        for v in values:
            r = compare_value(v, self.comparator, self.value)
            if r:
                return True
            if r is None:
                result = None
        return result

    def validate(self, descriptor, types):
        f = descriptor.field(self.field)
        if f is None:
            return [f"field {self.field!r} not found in {descriptor.name}"]
        if not f.repeated:
            return [f"one_of_them on singular field {self.field!r}"]
        return []

    def to_tuple(self):
        return ("any", self.field, self.comparator.value, self.value)

    def __str__(self):
        op = "STARTS_WITH" if self.comparator is Comparator.STARTS_WITH else self.comparator.value
        return f"ANY {self.field} {op} {_literal(self.value)}"


@dataclass(eq=False, repr=False)
class Nested(QueryComponent):
    parent: str
    child: QueryComponent

    def evaluate(self, record, ctx=None):
        sub = None if record is None else record.get(self.parent)
        if isinstance(sub, list):
            return None
        return self.child.evaluate(sub, ctx)

    def validate(self, descriptor, types):
        f = descriptor.field(self.parent)
        if f is None:
            return [f"field {self.parent!r} not found in {descriptor.name}"]
        if f.kind != "message" or f.repeated:
            return [f"nested predicate needs a singular message field, {self.parent!r} is not"]
        return self.child.validate(types[f.message_type], types)

    def to_tuple(self):
        return ("nested", self.parent, self.child.to_tuple())

    def __str__(self):
        inner = str(self.child)
        return f"{self.parent}.{inner}" if isinstance(self.child, (FieldComparison, Nested)) else f"{self.parent}.({inner})"


class _Boolean(QueryComponent):
    op = ""

    def __init__(self, *children: QueryComponent):
        flat: list[QueryComponent] = []
        for c in children:
            flat.extend(c.children if type(c) is type(self) else [c])
        self.children = tuple(flat)

    def validate(self, descriptor, types):
        return [e for c in self.children for e in c.validate(descriptor, types)]

    def to_tuple(self):
        return (self.op.lower(), tuple(c.to_tuple() for c in self.children))

    def __str__(self):
        return "(" + f" {self.op} ".join(str(c) for c in self.children) + ")"


class And(_Boolean):
    op = "AND"

    def evaluate(self, record, ctx=None):
        result: Optional[bool] = True
        for c in self.children:
            r = c.evaluate(record, ctx)
            if r is False:
                return False
            if r is None:
                result = None
        return result


class Or(_Boolean):
    op = "OR"

    def evaluate(self, record, ctx=None):
        result: Optional[bool] = False
        for c in self.children:
            r = c.evaluate(record, ctx)
            if r is True:
                return True
            if r is None:
                result = None
        return result


@dataclass(eq=False, repr=False)
class Not(QueryComponent):
    child: QueryComponent

    def evaluate(self, record, ctx=None):
        r = self.child.evaluate(record, ctx)
        return None if r is None else not r

    def validate(self, descriptor, types):
        return self.child.validate(descriptor, types)

    def to_tuple(self):
        return ("not", self.child.to_tuple())

    def __str__(self):
        return f"NOT {self.child}"


@dataclass(eq=False, repr=False)
class TextPredicate(QueryComponent):
    """Full-text match on a text field; evaluated with the field's index tokenizer."""

    field: str
    mode: TextMode
    tokens: tuple
    window: int = 0
    tokenizer: str = "default"

    def token_list(self) -> list[str]:
        from .indexes.text import get_tokenizer

        tok = get_tokenizer(self.tokenizer)
        out: list[str] = []
        for t in self.tokens:
            if self.mode is TextMode.PREFIX:
                out.append(t.lower())
            else:
                out.extend(x for x, _ in tok.tokenize(t))
        return out

    def evaluate(self, record, ctx=None):
        from .indexes.text import get_tokenizer, match_positions

        text = None if record is None else record.get(self.field)
        if text is None:
            return None
        tok = get_tokenizer(self.tokenizer)
        postings: dict[str, list[int]] = {}
        for token, pos in tok.tokenize(text):
            postings.setdefault(token, []).append(pos)
        return match_positions(postings, self.mode, self.token_list(), self.window) is not None

    def validate(self, descriptor, types):
        f = descriptor.field(self.field)
        if f is None:
            return [f"field {self.field!r} not found in {descriptor.name}"]
        if f.kind != "text" or f.repeated:
            return [f"text predicate needs a singular text field, {self.field!r} is not"]
        return []

    def to_tuple(self):
        return ("text", self.field, self.mode.value, tuple(self.tokens), self.window, self.tokenizer)

    def __str__(self):
        words = " ".join(self.tokens)
        if self.mode is TextMode.PROXIMITY:
            return f"{self.field} NEAR({_literal(words)}, {self.window})"
        kw = {
            TextMode.TOKEN: "CONTAINS",
            TextMode.ALL: "CONTAINS_ALL",
            TextMode.PREFIX: "CONTAINS_PREFIX",
            TextMode.PHRASE: "CONTAINS_PHRASE",
        }[self.mode]
        return f"{self.field} {kw} {_literal(words)}"


@dataclass(eq=False, repr=False)
class RankPredicate(QueryComponent):
    """Compares a record's ordinal rank under a RANK index's expression.

    Needs the store to evaluate, so only index plans can satisfy it.
    """

    expression: kx.KeyExpression
    comparator: Comparator
    rank: int

    def evaluate(self, record, ctx=None):
        if ctx is None or not hasattr(ctx, "rank_of_record"):
            raise TypeError("rank predicates need a store context")
        r = ctx.rank_of_record(self.expression, record)
        return compare_value(r, self.comparator, self.rank)

    def to_tuple(self):
        return ("rank", self.expression.to_tuple(), self.comparator.value, self.rank)

    def __str__(self):
        return f"RANK({self.expression}) {self.comparator.value} {self.rank}"


def from_tuple(t: Sequence) -> QueryComponent:
    tag = t[0]
    if tag == "cmp":
        return FieldComparison(t[1], Comparator(t[2]), t[3])
    if tag == "any":
        return OneOfThem(t[1], Comparator(t[2]), t[3])
    if tag == "nested":
        return Nested(t[1], from_tuple(t[2]))
    if tag == "and":
        return And(*(from_tuple(c) for c in t[1]))
    if tag == "or":
        return Or(*(from_tuple(c) for c in t[1]))
    if tag == "not":
        return Not(from_tuple(t[1]))
    if tag == "text":
        return TextPredicate(t[1], TextMode(t[2]), tuple(t[3]), t[4], t[5])
    if tag == "rank":
        return RankPredicate(kx.from_tuple(t[1]), Comparator(t[2]), t[3])
    raise ValueError(f"unknown predicate tag {tag!r}")


# -- fluent helpers -----------------------------------------------------------

class F:
    """``F("x") == 5``, ``F("parent").nest(F("a") < 3)``, ``F("elem").any() == "x"``."""

    def __init__(self, name: str, _any: bool = False):
        self.name = name
        self._any = _any

    def any(self) -> "F":
        return F(self.name, True)

    def _mk(self, comparator: Comparator, value: Any = None) -> QueryComponent:
        cls = OneOfThem if self._any else FieldComparison
        return cls(self.name, comparator, value)

    def __eq__(self, v):  # type: ignore[override]
        return self._mk(Comparator.EQUALS, v)

    def __ne__(self, v):  # type: ignore[override]
        return self._mk(Comparator.NOT_EQUALS, v)

    def __lt__(self, v):
        return self._mk(Comparator.LESS_THAN, v)

    def __le__(self, v):
        return self._mk(Comparator.LESS_THAN_OR_EQUALS, v)

    def __gt__(self, v):
        return self._mk(Comparator.GREATER_THAN, v)

    def __ge__(self, v):
        return self._mk(Comparator.GREATER_THAN_OR_EQUALS, v)

    def starts_with(self, prefix: Any) -> QueryComponent:
        return self._mk(Comparator.STARTS_WITH, prefix)

    def is_null(self) -> QueryComponent:
        return self._mk(Comparator.IS_NULL)

    def not_null(self) -> QueryComponent:
        return self._mk(Comparator.NOT_NULL)

    def nest(self, child: QueryComponent) -> QueryComponent:
        return Nested(self.name, child)

    def text(self, tokenizer: str = "default") -> "_Text":
        return _Text(self.name, tokenizer)

    __hash__ = None  # type: ignore[assignment]


class _Text:
    def __init__(self, field: str, tokenizer: str):
        self.field = field
        self.tokenizer = tokenizer

    def contains(self, token: str) -> TextPredicate:
        return TextPredicate(self.field, TextMode.TOKEN, (token,), 0, self.tokenizer)

    def contains_all(self, words: str) -> TextPredicate:
        return TextPredicate(self.field, TextMode.ALL, tuple(words.split()), 0, self.tokenizer)

    def contains_prefix(self, prefix: str) -> TextPredicate:
        return TextPredicate(self.field, TextMode.PREFIX, (prefix,), 0, self.tokenizer)

    def contains_phrase(self, phrase: str) -> TextPredicate:
        return TextPredicate(self.field, TextMode.PHRASE, tuple(phrase.split()), 0, self.tokenizer)

    def near(self, words: str, window: int) -> TextPredicate:
        return TextPredicate(self.field, TextMode.PROXIMITY, tuple(words.split()), window, self.tokenizer)


def rank(expression: kx.KeyExpression | str) -> "_Rank":
    return _Rank(kx.parse(expression) if isinstance(expression, str) else expression)


class _Rank:
    def __init__(self, expression: kx.KeyExpression):
        self.expression = expression

    def _mk(self, c: Comparator, v: int) -> RankPredicate:
        return RankPredicate(self.expression, c, v)

    def __eq__(self, v):  # type: ignore[override]
        return self._mk(Comparator.EQUALS, v)

    def __lt__(self, v):
        return self._mk(Comparator.LESS_THAN, v)

    def __le__(self, v):
        return self._mk(Comparator.LESS_THAN_OR_EQUALS, v)

    def __gt__(self, v):
        return self._mk(Comparator.GREATER_THAN, v)

    def __ge__(self, v):
        return self._mk(Comparator.GREATER_THAN_OR_EQUALS, v)

    __hash__ = None  # type: ignore[assignment]
