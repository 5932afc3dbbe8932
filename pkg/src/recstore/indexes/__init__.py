"""Index maintainers.  Importing this package registers every built-in index type."""
from .base import IndexMaintainer, IndexMaintenanceError, IndexNotReadable, IndexState, register_maintainer
from . import aggregate, rank, text, value  # noqa: F401  (registration side effects)
from .value import IndexEntry, TupleRange

__all__ = [
    "IndexMaintainer",
    "IndexMaintenanceError",
    "IndexNotReadable",
    "IndexState",
    "IndexEntry",
    "TupleRange",
    "register_maintainer",
]
