"""Parser for the textual predicate syntax produced by ``str()`` on predicates.

::

    x = 5 AND (name STARTS_WITH "ab" OR NOT y IS NULL)
    ANY tags = "red"
    address.city = "Paris"
    body CONTAINS_PHRASE "quick fox"
    body NEAR("quick dog", 3)
    RANK(group_by(field("score"), by=field("game"))) < 10
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Optional

from .. import expressions as kx
from ..predicates import (
    And,
    Comparator,
    FieldComparison,
    Nested,
    Not,
    OneOfThem,
    Or,
    QueryComponent,
    RankPredicate,
    TextMode,
    TextPredicate,
)


class PredicateSyntaxError(ValueError):
    pass


_TOKEN = re.compile(
    r"""
    \s*(?:
      (?P<bytes>x'[0-9a-fA-F]*')
    | (?P<string>"(?:[^"\\]|\\[\s\S])*")
    | (?P<number>-?(?:\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\.\d+|\d+))
    | (?P<op><=|>=|!=|=|<|>)
    | (?P<punct>[(),.])
    | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    )""",
    re.VERBOSE,
)

_OPS = {c.value: c for c in (
    Comparator.EQUALS,
    Comparator.NOT_EQUALS,
    Comparator.LESS_THAN,
    Comparator.LESS_THAN_OR_EQUALS,
    Comparator.GREATER_THAN,
    Comparator.GREATER_THAN_OR_EQUALS,
)}

_TEXT_KEYWORDS = {
    "CONTAINS": TextMode.TOKEN,
    "CONTAINS_ALL": TextMode.ALL,
    "CONTAINS_PREFIX": TextMode.PREFIX,
    "CONTAINS_PHRASE": TextMode.PHRASE,
}


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _lex(text: str) -> list[_Tok]:
    out = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise PredicateSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        kind = m.lastgroup
        out.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _lex(text)
        self.i = 0

    def peek(self, offset: int = 0) -> Optional[_Tok]:
        j = self.i + offset
        return self.toks[j] if j < len(self.toks) else None

    def next(self) -> _Tok:
        t = self.peek()
        if t is None:
            raise PredicateSyntaxError("unexpected end of predicate")
        self.i += 1
        return t

    def is_word(self, *words: str, offset: int = 0) -> bool:
        t = self.peek(offset)
        return t is not None and t.kind == "word" and t.text.upper() in words

    def expect(self, text: str) -> None:
        t = self.next()
        if t.text.upper() != text:
            raise PredicateSyntaxError(f"expected {text!r} at {t.pos}, found {t.text!r}")

    def parse(self) -> QueryComponent:
        node = self.parse_or()
        if self.peek() is not None:
            t = self.peek()
            raise PredicateSyntaxError(f"unexpected {t.text!r} at {t.pos}")
        return node

    def parse_or(self) -> QueryComponent:
        parts = [self.parse_and()]
        while self.is_word("OR"):
            self.next()
            parts.append(self.parse_and())
        return parts[0] if len(parts) == 1 else Or(*parts)

    def parse_and(self) -> QueryComponent:
        parts = [self.parse_not()]
        while self.is_word("AND"):
            self.next()
            parts.append(self.parse_not())
        return parts[0] if len(parts) == 1 else And(*parts)

    def parse_not(self) -> QueryComponent:
        if self.is_word("NOT"):
            self.next()
            return Not(self.parse_not())
        return self.parse_atom()

    def parse_atom(self) -> QueryComponent:
        t = self.peek()
        if t is None:
            raise PredicateSyntaxError("unexpected end of predicate")
        if t.text == "(":
            self.next()
            node = self.parse_or()
            self.expect(")")
            return node
        if self.is_word("ANY"):
            self.next()
            name = self.ident()
            comparator, value = self.comparison()
            return OneOfThem(name, comparator, value)
        if self.is_word("RANK") and self.peek(1) is not None and self.peek(1).text == "(":
            return self.rank()
        return self.path_predicate()

    def ident(self) -> str:
        t = self.next()
        if t.kind != "word":
            raise PredicateSyntaxError(f"expected a field name at {t.pos}, found {t.text!r}")
        return t.text

    def path_predicate(self) -> QueryComponent:
        name = self.ident()
        if self.peek() is not None and self.peek().text == ".":
            self.next()
            if self.peek() is not None and self.peek().text == "(":
                self.next()
                child = self.parse_or()
                self.expect(")")
            else:
                child = self.path_predicate()
            return Nested(name, child)
        if self.peek() is not None and self.peek().kind == "word":
            kw = self.peek().text.upper()
            if kw in _TEXT_KEYWORDS:
                self.next()
                words = self.literal()
                if not isinstance(words, str):
                    raise PredicateSyntaxError(f"{kw} needs a string")
                mode = _TEXT_KEYWORDS[kw]
                tokens = (words,) if mode is TextMode.TOKEN else tuple(words.split())
                return TextPredicate(name, mode, tokens)
            if kw == "NEAR":
                self.next()
                self.expect("(")
                words = self.literal()
                self.expect(",")
                window = self.literal()
                self.expect(")")
                if not isinstance(words, str) or not isinstance(window, int):
                    raise PredicateSyntaxError("NEAR takes a string and an integer window")
                return TextPredicate(name, TextMode.PROXIMITY, tuple(words.split()), window)
        comparator, value = self.comparison()
        return FieldComparison(name, comparator, value)

    def comparison(self) -> tuple[Comparator, Any]:
        t = self.next()
        if t.kind == "op":
            return _OPS[t.text], self.literal()
        word = t.text.upper()
        if word == "STARTS_WITH":
            return Comparator.STARTS_WITH, self.literal()
        if word == "IS":
            if self.is_word("NOT"):
                self.next()
                self.expect("NULL")
                return Comparator.NOT_NULL, None
            self.expect("NULL")
            return Comparator.IS_NULL, None
        raise PredicateSyntaxError(f"expected a comparison at {t.pos}, found {t.text!r}")

    def literal(self) -> Any:
        t = self.next()
        if t.kind == "string":
            return re.sub(r"\\([\s\S])", lambda m: m.group(1), t.text[1:-1])
        if t.kind == "bytes":
            return bytes.fromhex(t.text[2:-1])
        if t.kind == "number":
            return float(t.text) if any(c in t.text for c in ".eE") else int(t.text)
        if t.kind == "word":
            lowered = t.text.lower()
            if lowered in ("null", "true", "false"):
                return {"null": None, "true": True, "false": False}[lowered]
        raise PredicateSyntaxError(f"expected a literal at {t.pos}, found {t.text!r}")

    def rank(self) -> QueryComponent:
        self.next()
        open_tok = self.next()
        depth = 1
        start = open_tok.pos + 1
        while depth:
            t = self.next()
            if t.text == "(":
                depth += 1
            elif t.text == ")":
                depth -= 1
        expr = kx.parse(self.text[start : t.pos])
        t = self.next()
        if t.kind != "op":
            raise PredicateSyntaxError(f"expected a comparison after RANK(...) at {t.pos}")
        value = self.literal()
        if not isinstance(value, int) or isinstance(value, bool):
            raise PredicateSyntaxError("ranks are integers")
        return RankPredicate(expr, _OPS[t.text], value)


def parse_predicate(text: str) -> QueryComponent:
    return _Parser(text).parse()


def parse_query(text: str):
    """``FROM Type[, Type] [WHERE predicate] [ORDER BY key_expression [DESC]]``.

    A bare field name is accepted as the sort expression.
    """
    from .model import Query

    toks = _lex(text)
    if not toks or toks[0].text.upper() != "FROM":
        raise PredicateSyntaxError("a query starts with FROM")
    where = order = None
    for i, t in enumerate(toks):
        word = t.text.upper() if t.kind == "word" else None
        if word == "WHERE" and where is None and order is None:
            where = i
        elif word == "ORDER" and i + 1 < len(toks) and toks[i + 1].text.upper() == "BY":
            order = i
    type_end = where if where is not None else order if order is not None else len(toks)
    types = [t.text for t in toks[1:type_end] if t.text != ","]
    if not types or any(t.kind not in ("word", "punct") for t in toks[1:type_end]):
        raise PredicateSyntaxError("FROM needs record type names")

    def span(a: int, b: int) -> str:
        end = toks[b].pos if b < len(toks) else len(text)
        return text[toks[a].pos : end].strip()

    predicate = None
    if where is not None:
        predicate = parse_predicate(span(where + 1, order if order is not None else len(toks)))
    sort = None
    reverse = False
    if order is not None:
        last = len(toks)
        if toks[-1].text.upper() == "DESC":
            reverse = True
            last -= 1
        sort_text = span(order + 2, last)
        if not sort_text:
            raise PredicateSyntaxError("ORDER BY needs an expression")
        sort = kx.parse(sort_text) if "(" in sort_text else kx.field(sort_text)
    return Query(types, predicate, sort, reverse)
