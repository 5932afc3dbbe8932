"""Rule-based planner: turns a :class:`Query` into a :class:`Plan`.

Each rule proposes candidate index plans for the top-level conjuncts of the
filter.  The best candidate wins, possibly intersected with other primary-key
ordered candidates; whatever a plan does not guarantee stays in a FILTER.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional

from .. import expressions as kx
from ..cursors import NO_LIMITS, Page, ScanLimits
from ..indexes.base import IndexState
from ..indexes.value import TupleRange
from ..metadata import IndexDefinition, IndexType, RecordMetadata
from ..predicates import (
    And,
    Comparator,
    FieldComparison,
    Nested,
    OneOfThem,
    Or,
    QueryComponent,
    RankPredicate,
    TextPredicate,
)
from .model import Query
from .plans import (
    FilterPlan,
    IndexScanPlan,
    IntersectionPlan,
    Plan,
    RankScanPlan,
    ScanPlan,
    TextScanPlan,
    UnionPlan,
)


class PlanningError(ValueError):
    pass


class UnsatisfiableSort(PlanningError):
    """No index delivers the requested order (results are never sorted in memory)."""


@dataclass
class Candidate:
    plan: Plan
    used: frozenset  # positions of the conjuncts the plan satisfies exactly
    score: int
    sort_ok: bool = False


# -- key expression columns ----------------------------------------------------------

@dataclass(frozen=True)
class Column:
    path: tuple[str, ...]
    kind: str  # "scalar", "fanout" or "opaque"


def columns(expr: kx.KeyExpression, prefix: tuple[str, ...] = ()) -> list[Column]:
    if isinstance(expr, kx.Field):
        kind = {kx.FanType.SCALAR: "scalar", kx.FanType.FAN_OUT: "fanout"}.get(expr.fan, "opaque")
        return [Column(prefix + (expr.name,), kind)]
    if isinstance(expr, kx.Nest) and expr.parent.fan is kx.FanType.SCALAR:
        return columns(expr.child, prefix + (expr.parent.name,))
    if isinstance(expr, kx.Then):
        return [c for child in expr.children for c in columns(child, prefix)]
    if isinstance(expr, kx.KeyWithValue):
        return columns(expr.key, prefix)
    if isinstance(expr, kx.Empty):
        return []
    return [Column(prefix, "opaque")] * max(expr.column_count, 1)


def _unwrap(c: QueryComponent) -> Optional[tuple[tuple[str, ...], str, Comparator, object]]:
    """``(path, kind, comparator, value)`` for a possibly nested single comparison."""
    path: tuple[str, ...] = ()
    while isinstance(c, Nested):
        path += (c.parent,)
        c = c.child
    if isinstance(c, FieldComparison):
        return path + (c.field,), "scalar", c.comparator, c.value
    if isinstance(c, OneOfThem):
        return path + (c.field,), "fanout", c.comparator, c.value
    return None


_LOW = {Comparator.GREATER_THAN, Comparator.GREATER_THAN_OR_EQUALS}
_HIGH = {Comparator.LESS_THAN, Comparator.LESS_THAN_OR_EQUALS}


def _equality(col: Column, info) -> tuple[bool, object]:
    path, kind, comparator, value = info
    if path != col.path or kind != col.kind:
        return False, None
    if comparator is Comparator.EQUALS and value is not None:
        return True, value
    if comparator is Comparator.IS_NULL and kind == "scalar":
        return True, None
    return False, None


class Planner:
    def __init__(
        self,
        metadata: RecordMetadata,
        index_states: Optional[dict[str, IndexState]] = None,
        rules: Optional[list[Callable[["Planner", Query, list[QueryComponent]], Iterable[Candidate]]]] = None,
    ):
        self.metadata = metadata
        self.index_states = index_states or {}
        self.rules = list(rules) if rules is not None else list(DEFAULT_RULES)

    @classmethod
    def for_store(cls, store) -> "Planner":
        return cls(store.metadata, store.index_states())

    def readable(self, ix: IndexDefinition) -> bool:
        return self.index_states.get(ix.name, IndexState.READABLE) is IndexState.READABLE

    def usable_indexes(self, query: Query, *types: IndexType) -> list[IndexDefinition]:
        wanted = set(query.record_types)
        return [
            ix
            for ix in self.metadata.indexes
            if ix.type in types and ix.filter is None and wanted <= set(ix.record_types) and self.readable(ix)
        ]

    # -- entry point ------------------------------------------------------------

    def plan(self, query: Query) -> Plan:
        for name in query.record_types:
            self.metadata.record_type(name)
            if query.filter is not None:
                problems = query.filter.validate(self.metadata.message(name), self.metadata.messages)
                if problems:
                    raise PlanningError("; ".join(problems))
        flt = self._bind_tokenizers(query, query.filter) if query.filter is not None else None
        query = Query(query.record_types, flt, query.sort, query.reverse)
        conjuncts = self._conjuncts(flt)
        candidates = self._candidates(query, conjuncts)
        pk_sort = query.sort is not None and self._is_pk_sort(query)
        if query.sort is not None:
            if pk_sort:
                candidates = [c for c in candidates if c.plan.pk_ordered and not query.reverse]
            else:
                candidates = [c for c in candidates if c.sort_ok]
        if not candidates:
            if query.sort is not None and not pk_sort:
                raise UnsatisfiableSort(f"no readable index provides the order {query.sort}")
            return self._with_filter(ScanPlan(query.record_types, reverse=query.reverse), conjuncts, frozenset())
        best = max(candidates, key=lambda c: c.score)
        chosen = [best]
        if best.plan.pk_ordered:
            used = set(best.used)
            for c in sorted(candidates, key=lambda c: -c.score):
                if c is not best and c.plan.pk_ordered and used.isdisjoint(c.used):
                    chosen.append(c)
                    used |= c.used
        if len(chosen) > 1:
            plan: Plan = IntersectionPlan(tuple(c.plan for c in chosen))
            used_all = frozenset().union(*(c.used for c in chosen))
        else:
            plan, used_all = best.plan, best.used
        return self._with_filter(plan, conjuncts, used_all)

    # -- helpers ------------------------------------------------------------------

    @staticmethod
    def _conjuncts(flt: Optional[QueryComponent]) -> list[QueryComponent]:
        if flt is None:
            return []
        return list(flt.children) if isinstance(flt, And) else [flt]

    def _with_filter(self, plan: Plan, conjuncts: list[QueryComponent], used: frozenset) -> Plan:
        rest = [c for i, c in enumerate(conjuncts) if i not in used]
        if not rest:
            return plan
        return FilterPlan(plan, rest[0] if len(rest) == 1 else And(*rest))

    def _candidates(self, query: Query, conjuncts: list[QueryComponent]) -> list[Candidate]:
        out: list[Candidate] = []
        for rule in self.rules:
            out.extend(rule(self, query, conjuncts))
        return out

    def _is_pk_sort(self, query: Query) -> bool:
        return all(self.metadata.record_type(t).primary_key == query.sort for t in query.record_types)

    def _text_index(self, query: Query, field_name: str) -> Optional[IndexDefinition]:
        for ix in self.usable_indexes(query, IndexType.TEXT):
            if ix.key_expression == kx.field(field_name):
                return ix
        return None

    def _bind_tokenizers(self, query: Query, c: QueryComponent) -> QueryComponent:
        """Text predicates match under the tokenizer of the field's TEXT index."""
        if isinstance(c, TextPredicate):
            ix = self._text_index(query, c.field)
            if ix is not None:
                return replace(c, tokenizer=ix.option("tokenizer", "default"))
            return c
        if isinstance(c, And):
            return And(*(self._bind_tokenizers(query, x) for x in c.children))
        if isinstance(c, Or):
            return Or(*(self._bind_tokenizers(query, x) for x in c.children))
        return c


# -- rules ------------------------------------------------------------------------------

def value_index_rule(planner: Planner, query: Query, conjuncts: list[QueryComponent]) -> Iterable[Candidate]:
    infos = [_unwrap(c) for c in conjuncts]
    sort_cols = columns(query.sort) if query.sort is not None else None
    for ix in planner.usable_indexes(query, IndexType.VALUE):
        cols = columns(ix.key_expression)
        # One candidate per conjunct that can fix the first column, so two
        # equalities on the same fanout index can be intersected.
        seeds = [i for i, info in enumerate(infos) if cols and info is not None and _equality(cols[0], info)[0]]
        for seed in seeds or [None]:
            candidate = _value_candidate(ix, cols, infos, seed, sort_cols, query)
            if candidate is not None:
                yield candidate


def _value_candidate(ix, cols, infos, seed, sort_cols, query) -> Optional[Candidate]:
    used: set[int] = set()
    eq_values: list = []
    for n, col in enumerate(cols):
        if col.kind == "opaque":
            break
        if n == 0 and seed is not None:
            hit = (seed, _equality(col, infos[seed])[1])
        else:
            hit = _find_equality(col, infos, used)
        if hit is None:
            break
        used.add(hit[0])
        eq_values.append(hit[1])
    n_eq = len(eq_values)
    if any(c.kind == "fanout" for c in cols[n_eq:]):
        return None  # a record could appear once per element
    rng = TupleRange.equals(tuple(eq_values)) if n_eq else TupleRange()
    inequality = False
    if n_eq < len(cols) and cols[n_eq].kind == "scalar":
        rng, extra = _inequality_range(cols[n_eq], tuple(eq_values), infos, used)
        inequality = bool(extra)
        used |= extra
    sort_ok = bool(sort_cols) and _sort_matches(cols, n_eq, sort_cols)
    if not used and not sort_ok:
        return None
    equality_only = n_eq == len(cols) and not inequality
    reverse = bool(query.reverse and sort_ok)
    plan = IndexScanPlan(ix.name, rng, query.record_types, reverse=reverse, equality_only=equality_only)
    score = 10 * n_eq + (5 if inequality else 0) + (1 if sort_ok else 0)
    return Candidate(plan, frozenset(used), score, sort_ok)


def _find_equality(col: Column, infos, used: set[int]) -> Optional[tuple[int, object]]:
    for i, info in enumerate(infos):
        if info is not None and i not in used:
            ok, value = _equality(col, info)
            if ok:
                return i, value
    return None


def _sort_matches(cols: list[Column], n_eq: int, sort_cols: list[Column]) -> bool:
    """The sort columns must be a run of index columns starting inside the equality prefix."""
    if any(c.kind != "scalar" for c in sort_cols):
        return False
    k = len(sort_cols)
    return any(cols[i : i + k] == sort_cols for i in range(n_eq + 1))


def _inequality_range(col: Column, eq: tuple, infos, used: set[int]) -> tuple[TupleRange, set[int]]:
    low = high = None
    prefix = None
    taken: set[int] = set()
    for i, info in enumerate(infos):
        if info is None or i in used or info[0] != col.path or info[1] != "scalar" or info[3] is None:
            continue
        comparator, value = info[2], info[3]
        if comparator in _LOW and low is None:
            low = (value, comparator is Comparator.GREATER_THAN_OR_EQUALS)
            taken.add(i)
        elif comparator in _HIGH and high is None:
            high = (value, comparator is Comparator.LESS_THAN_OR_EQUALS)
            taken.add(i)
        elif comparator is Comparator.STARTS_WITH and prefix is None and isinstance(value, (str, bytes)):
            prefix = (i, value)
    if low is None and high is None:
        if prefix is not None:
            return TupleRange(eq + (prefix[1],), eq + (prefix[1],), prefix_string=True), {prefix[0]}
        return (TupleRange.equals(eq) if eq else TupleRange()), set()
    if low is not None:
        lo, lo_inc = eq + (low[0],), low[1]
    else:
        # Unset values sort first; comparisons never match them.
        lo, lo_inc = eq + (None,), False
    if high is not None:
        hi, hi_inc = eq + (high[0],), high[1]
    else:
        hi, hi_inc = (eq if eq else None), True
    return TupleRange(lo, hi, lo_inc, hi_inc), taken


def text_index_rule(planner: Planner, query: Query, conjuncts: list[QueryComponent]) -> Iterable[Candidate]:
    for i, c in enumerate(conjuncts):
        if not isinstance(c, TextPredicate):
            continue
        ix = planner._text_index(query, c.field)
        if ix is None or ix.option("tokenizer", "default") != c.tokenizer:
            continue
        plan = TextScanPlan(ix.name, c.mode, tuple(c.token_list()), c.window, query.record_types)
        yield Candidate(plan, frozenset({i}), 30)


def rank_index_rule(planner: Planner, query: Query, conjuncts: list[QueryComponent]) -> Iterable[Candidate]:
    infos = [_unwrap(c) for c in conjuncts]
    for i, c in enumerate(conjuncts):
        if not isinstance(c, RankPredicate) or c.comparator not in _LOW | _HIGH | {Comparator.EQUALS}:
            continue
        for ix in planner.usable_indexes(query, IndexType.RANK):
            if ix.key_expression != c.expression:
                continue
            group_cols = columns(ix.key_expression.grouping)
            used = {i}
            group: list = []
            for col in group_cols:
                hit = _find_equality(col, infos, used) if col.kind == "scalar" else None
                if hit is None:
                    break
                used.add(hit[0])
                group.append(hit[1])
            if len(group) != len(group_cols):
                continue
            r = c.rank
            low, high = {
                Comparator.LESS_THAN: (0, r),
                Comparator.LESS_THAN_OR_EQUALS: (0, r + 1),
                Comparator.EQUALS: (r, r + 1),
                Comparator.GREATER_THAN: (r + 1, None),
                Comparator.GREATER_THAN_OR_EQUALS: (r, None),
            }[c.comparator]
            plan = RankScanPlan(ix.name, tuple(group), max(low, 0), high, query.record_types)
            sort_ok = query.sort is not None and not query.reverse and query.sort == ix.key_expression.grouped
            yield Candidate(plan, frozenset(used), 30 + 10 * len(group), sort_ok)
            break


def union_rule(planner: Planner, query: Query, conjuncts: list[QueryComponent]) -> Iterable[Candidate]:
    for i, c in enumerate(conjuncts):
        if not isinstance(c, Or):
            continue
        branches = []
        for d in c.children:
            sub = Query(query.record_types, d)
            parts = planner._conjuncts(d)
            options = [x for x in planner._candidates(sub, parts) if x.plan.pk_ordered]
            if not options:
                break
            best = max(options, key=lambda x: x.score)
            branches.append(planner._with_filter(best.plan, parts, best.used))
        else:
            yield Candidate(UnionPlan(tuple(branches)), frozenset({i}), 8)


DEFAULT_RULES = [text_index_rule, rank_index_rule, value_index_rule, union_rule]


# -- convenience -------------------------------------------------------------------------

def plan_query(store, query: Query) -> Plan:
    return Planner.for_store(store).plan(query)


def execute_query(
    store, query: Query, continuation: Optional[bytes] = None, limits: ScanLimits = NO_LIMITS
) -> Page:
    return plan_query(store, query).execute(store, continuation, limits)
