from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from .. import expressions as kx
from ..predicates import QueryComponent


@dataclass(frozen=True)
class Query:
    """Records of ``record_types`` matching ``filter``, optionally ordered by ``sort``."""

    record_types: tuple[str, ...]
    filter: Optional[QueryComponent] = None
    sort: Optional[kx.KeyExpression] = None
    reverse: bool = False

    def __init__(
        self,
        record_types: Union[str, Sequence[str]],
        filter: Optional[QueryComponent] = None,
        sort: Optional[Union[kx.KeyExpression, str]] = None,
        reverse: bool = False,
    ):
        types = (record_types,) if isinstance(record_types, str) else tuple(record_types)
        if not types:
            raise ValueError("a query needs at least one record type")
        if isinstance(sort, str):
            sort = kx.parse(sort)
        object.__setattr__(self, "record_types", types)
        object.__setattr__(self, "filter", filter)
        object.__setattr__(self, "sort", sort)
        object.__setattr__(self, "reverse", reverse)
