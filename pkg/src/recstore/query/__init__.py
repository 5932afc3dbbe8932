"""Declarative queries, the planner and executable plans."""
from .model import Query
from .planner import Planner, PlanningError, UnsatisfiableSort, execute_query, plan_query
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
from .text import PredicateSyntaxError, parse_predicate, parse_query

__all__ = [
    "Query",
    "Planner",
    "PlanningError",
    "UnsatisfiableSort",
    "execute_query",
    "plan_query",
    "Plan",
    "ScanPlan",
    "IndexScanPlan",
    "TextScanPlan",
    "RankScanPlan",
    "FilterPlan",
    "UnionPlan",
    "IntersectionPlan",
    "PredicateSyntaxError",
    "parse_predicate",
    "parse_query",
]
