"""A record-oriented layer over an ordered, transactional key-value engine."""
from . import indexes  # noqa: F401  (registers index maintainers)
from .kv import Engine, Transaction
from .message import Message
from .metadata import MetaDataBuilder, RecordMetadata, compile_schema, validate_evolution
from .query import Query, parse_predicate
from .store import RecordStore, open_record_store, delete_store

__all__ = [
    "Engine",
    "Transaction",
    "Message",
    "MetaDataBuilder",
    "RecordMetadata",
    "compile_schema",
    "validate_evolution",
    "Query",
    "parse_predicate",
    "RecordStore",
    "open_record_store",
    "delete_store",
]
