"""Command-line harness: schema setup, ingestion, queries, index builds and statistics.

Every verb is a thin wrapper over library calls.  Output is one ``key=value``
pair per line, except query results, which are printed as JSON lines.
"""
from __future__ import annotations

import argparse
import gzip
import json
import random
import sys
import threading
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

from . import tuples
from .cursors import ScanLimits
from .indexes.builder import build_index
from .indexes.text import format_kb, space_model
from .kv import Engine
from .message import Message
from .metadata import IndexType, MetaDataStore, RecordMetadata, compile_schema
from .predicates import TextMode
from .query import parse_query
from .store import delete_store, open_record_store
from .subspace import Subspace

DEFAULT_DOC_BYTES = 5000


class CliError(Exception):
    pass


@dataclass
class CliConfig:
    store: Optional[str] = None  # journal file; None keeps everything in memory
    keyspace: tuple = ("default",)
    schema: Optional[str] = None
    seed: int = 0
    engine: Optional[Engine] = field(default=None, repr=False)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "CliConfig":
        keyspace = tuple(p for p in (args.keyspace or "default").split("/") if p)
        if not keyspace:
            raise CliError("--keyspace must name at least one path segment")
        if args.schema is not None and args.command != "init":
            raise CliError("--schema is only read by init")
        return cls(args.store, keyspace, args.schema, args.seed)

    def open_engine(self) -> Engine:
        if self.engine is None:
            self.engine = Engine(journal_path=self.store)
        return self.engine

    @property
    def store_location(self) -> Subspace:
        return Subspace(("data",) + self.keyspace)

    @property
    def metadata_store(self) -> MetaDataStore:
        return MetaDataStore(Subspace(("meta",) + self.keyspace))


def _emit(out, **pairs: Any) -> None:
    for k, v in pairs.items():
        out.write(f"{k}={v}\n")


def load_metadata(cfg: CliConfig) -> RecordMetadata:
    engine = cfg.open_engine()
    meta = engine.run(lambda txn: cfg.metadata_store.load(txn, missing_ok=True))
    if meta is None:
        raise CliError("no schema for this keyspace: run init first")
    return meta


# -- verbs -------------------------------------------------------------------------------

def cmd_init(cfg: CliConfig, args, out) -> None:
    if cfg.schema is None:
        raise CliError("init needs --schema")
    with open(cfg.schema, encoding="utf-8") as fh:
        text = fh.read()
    engine = cfg.open_engine()

    def run(txn):
        previous = cfg.metadata_store.load(txn, missing_ok=True)
        meta = compile_schema(text, previous)
        if previous is None or meta.version != previous.version:
            cfg.metadata_store.save(txn, meta)
        store = open_record_store(txn, cfg.store_location, meta)
        return meta, store.index_states()

    meta, states = engine.run(run)
    _emit(out, metadata_version=meta.version, record_types=",".join(sorted(meta.record_types)))
    for name, state in sorted(states.items()):
        _emit(out, **{f"index.{name}": state.value})


def _to_value(meta: RecordMetadata, desc, name: str, value: Any) -> Any:
    f = desc.field(name)
    if f is None:
        raise CliError(f"{desc.name} has no field {name!r}")
    if value is None:
        return None

    def one(v):
        if f.kind == "message":
            if not isinstance(v, dict):
                raise CliError(f"field {name!r} needs an object")
            return to_message(meta, f.message_type, v)
        if f.kind == "bytes" and isinstance(v, str):
            return bytes.fromhex(v)
        if f.kind == "float64" and isinstance(v, int):
            return float(v)
        return v

    if f.repeated:
        if not isinstance(value, list):
            raise CliError(f"field {name!r} is repeated and needs a list")
        return [one(v) for v in value]
    return one(value)


def to_message(meta: RecordMetadata, type_name: str, obj: dict) -> Message:
    desc = meta.message(type_name)
    return Message(type_name, {k: _to_value(meta, desc, k, v) for k, v in obj.items()})


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rt", encoding="utf-8", errors="replace") as fh:
        return fh.read()


def split_documents(text: str, doc_bytes: int = DEFAULT_DOC_BYTES) -> list[str]:
    """Cut ``text`` into documents of about ``doc_bytes`` bytes at whitespace."""
    words = text.split()
    docs: list[str] = []
    current: list[str] = []
    size = 0
    for w in words:
        current.append(w)
        size += len(w.encode("utf-8")) + 1
        if size >= doc_bytes:
            docs.append(" ".join(current))
            current, size = [], 0
    if current:
        docs.append(" ".join(current))
    return docs


def _input_records(cfg: CliConfig, meta: RecordMetadata, args) -> Iterator[Message]:
    if args.text_field:
        if not args.type:
            raise CliError("text-corpus ingest needs --type")
        rt = meta.record_type(args.type)
        pk_fields = rt.primary_key.fields_used()
        if len(pk_fields) != 1 or meta.message(args.type).field(pk_fields[0]).kind != "int64":
            raise CliError("text-corpus ingest needs a single int64 primary key field")
        for i, doc in enumerate(split_documents(_read_text(args.input), args.doc_bytes)):
            yield Message(args.type, {pk_fields[0]: args.start_id + i, args.text_field: doc})
        return
    mapping = {}
    if args.mapping:
        with open(args.mapping, encoding="utf-8") as fh:
            mapping = json.load(fh)
    for lineno, line in enumerate(_read_text(args.input).splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CliError(f"line {lineno}: {exc}") from None
        obj = {mapping.get(k, k): v for k, v in obj.items()}
        type_name = obj.pop("_type", None) or args.type
        if not type_name:
            raise CliError(f"line {lineno}: no record type (use --type or a _type key)")
        yield to_message(meta, type_name, obj)


def cmd_ingest(cfg: CliConfig, args, out) -> None:
    meta = load_metadata(cfg)
    engine = cfg.open_engine()
    records = list(_input_records(cfg, meta, args))
    for r in records:
        meta.validate_record(r)
    workers = max(1, args.workers)
    if workers > 1:
        random.Random(cfg.seed).shuffle(records)
    shards = [records[i::workers] for i in range(workers)]
    conflicts_before = engine.conflict_count
    errors: list[BaseException] = []
    commits = [0] * workers

    def work(w: int) -> None:
        shard = shards[w]
        try:
            for i in range(0, len(shard), args.batch):
                batch = shard[i : i + args.batch]

                def save(txn, batch=batch):
                    store = open_record_store(txn, cfg.store_location, meta)
                    for rec in batch:
                        store.save_record(rec)

                engine.run(save)
                commits[w] += 1
        except BaseException as exc:  # noqa: BLE001  (reported after join)
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(w,)) for w in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    _emit(out, records=len(records), commits=sum(commits), conflicts=engine.conflict_count - conflicts_before)


def _record_json(rec) -> str:
    return json.dumps({"_type": rec.type_name, **rec.record.to_dict()}, sort_keys=True, default=_json_default)


def _json_default(v):
    if isinstance(v, bytes):
        return v.hex()
    if isinstance(v, tuples.Versionstamp):
        return v.to_bytes().hex()
    raise TypeError(f"cannot render {type(v).__name__}")


def cmd_query(cfg: CliConfig, args, out) -> None:
    meta = load_metadata(cfg)
    query = parse_query(args.text)
    engine = cfg.open_engine()
    limits = ScanLimits(limit=args.limit, max_records_scanned=args.max_scanned)
    continuation = bytes.fromhex(args.continuation) if args.continuation else None

    def run(txn):
        store = open_record_store(txn, cfg.store_location, meta, create=False)
        plan = store.plan_query(query)
        if args.explain:
            return plan, None
        return plan, plan.execute(store, continuation, limits)

    plan, page = engine.run(run)
    if args.explain:
        out.write(plan.explain() + "\n")
        return
    for rec in page.items:
        out.write(_record_json(rec) + "\n")
    _emit(out, count=len(page.items), stop_reason=page.stop_reason)
    if page.continuation is not None:
        _emit(out, continuation=page.continuation.hex())


def cmd_build_index(cfg: CliConfig, args, out) -> None:
    meta = load_metadata(cfg)
    report = build_index(cfg.open_engine(), cfg.store_location, meta, args.name, batch_size=args.batch)
    _emit(out, index=report.index, records=report.records, batches=report.batches, retries=report.retries, state=report.final_state.value)


def _parse_model(pairs: list[str]) -> dict:
    allowed = {"prefix", "token", "pk", "overhead", "bunch", "tokens_per_doc", "offsets_single", "offsets_bunched"}
    params: dict[str, Any] = {}
    for p in pairs:
        if "=" not in p:
            raise CliError(f"model parameter {p!r} is not key=value")
        k, v = p.split("=", 1)
        if k not in allowed:
            raise CliError(f"unknown model parameter {k!r}; expected one of {', '.join(sorted(allowed))}")
        params[k] = int(v) if k == "bunch" else v
    return params


def _text_index(meta: RecordMetadata, name: Optional[str]):
    texts = [ix for ix in meta.indexes if ix.type is IndexType.TEXT]
    if name is None:
        if len(texts) != 1:
            raise CliError("name the TEXT index (there is not exactly one)")
        return texts[0]
    ix = meta.index(name)
    if ix.type is not IndexType.TEXT:
        raise CliError(f"index {name!r} is not a TEXT index")
    return ix


def cmd_stats(cfg: CliConfig, args, out) -> None:
    if args.kind == "text" and args.model is not None:
        m = space_model(**_parse_model(args.model))
        _emit(
            out,
            key_bytes=m["key_size"],
            entry_bytes_unbunched=m["entry_size_unbunched"],
            entry_bytes_bunched=m["entry_size_bunched"],
            entries_per_doc_unbunched=m["entries_unbunched"],
            entries_per_doc_bunched=m["entries_bunched"],
            doc_bytes_unbunched=m["doc_bytes_unbunched"],
            doc_bytes_bunched=m["doc_bytes_bunched"],
            doc_size_unbunched=format_kb(m["doc_bytes_unbunched"]).replace(" ", ""),
            doc_size_bunched=format_kb(m["doc_bytes_bunched"]).replace(" ", ""),
        )
        return
    meta = load_metadata(cfg)
    engine = cfg.open_engine()

    def run(txn):
        store = open_record_store(txn, cfg.store_location, meta, create=False)
        if args.kind == "text":
            ix = _text_index(meta, args.index)
            return {"index": ix.name, **store.maintainer(ix).stats().as_dict()}
        if args.kind == "indexes":
            return {f"index.{k}": v.value for k, v in sorted(store.index_states().items())}
        keys = nbytes = 0
        begin, end = store.subspace.full_range()
        for k, v in txn.get_range(begin, end):
            keys += 1
            nbytes += len(k) + len(v)
        return {"records": len(store.all_records()), "keys": keys, "bytes": nbytes}

    _emit(out, **engine.run(run))


def cmd_search(cfg: CliConfig, args, out) -> None:
    meta = load_metadata(cfg)
    ix = _text_index(meta, args.index)
    mode = TextMode[args.mode.upper()] if args.mode != "near" else TextMode.PROXIMITY

    def run(txn):
        store = open_record_store(txn, cfg.store_location, meta, create=False)
        m = store.maintainer(ix)
        words = args.words.split()
        tokens = [w.lower() for w in words] if mode is TextMode.PREFIX else [t for w in words for t, _ in m.tokenizer.tokenize(w)]
        return m.search(mode, tokens, args.window)

    hits = cfg.open_engine().run(run)
    for pk, positions in hits:
        _emit(out, hit=f"{json.dumps(list(pk))} {' '.join(map(str, positions))}")
    _emit(out, count=len(hits))


def cmd_compact_text(cfg: CliConfig, args, out) -> None:
    meta = load_metadata(cfg)
    ix = _text_index(meta, args.index)

    def run(txn):
        store = open_record_store(txn, cfg.store_location, meta, create=False)
        m = store.maintainer(ix)
        removed = m.compact()
        return removed, m.stats()

    removed, stats = cfg.open_engine().run(run)
    _emit(out, index=ix.name, removed_entries=removed, entries=stats.entries, avg_bunch_fill=round(stats.avg_bunch_fill, 3))


def cmd_delete_store(cfg: CliConfig, args, out) -> None:
    cfg.open_engine().run(lambda txn: delete_store(txn, cfg.store_location))
    _emit(out, deleted="/".join(cfg.keyspace))


# -- argument parsing ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="recstore", description="Record store harness.")
    p.add_argument("--store", help="journal file backing the engine (default: in memory)")
    p.add_argument("--keyspace", default="default", help="slash-separated store path, e.g. app/tenant1")
    p.add_argument("--schema", help="YAML schema file (init)")
    p.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("init", help="compile the schema and create or upgrade the store")

    ing = sub.add_parser("ingest", help="load JSON-lines records or a raw text corpus")
    ing.add_argument("input", help="file path, .gz accepted, or - for stdin")
    ing.add_argument("--type", help="record type (JSON lines may carry _type instead)")
    ing.add_argument("--mapping", help="JSON object renaming input keys to field names")
    ing.add_argument("--text-field", help="treat input as raw text split into documents stored in this field")
    ing.add_argument("--doc-bytes", type=int, default=DEFAULT_DOC_BYTES)
    ing.add_argument("--start-id", type=int, default=0)
    ing.add_argument("--batch", type=int, default=100)
    ing.add_argument("--workers", type=int, default=1)

    q = sub.add_parser("query", help='run e.g. "FROM Order WHERE x = 5 ORDER BY x"')
    q.add_argument("text")
    q.add_argument("--explain", action="store_true")
    q.add_argument("--limit", type=int)
    q.add_argument("--max-scanned", type=int)
    q.add_argument("--continuation", help="hex continuation from a previous page")

    b = sub.add_parser("build-index", help="build a DISABLED or WRITE_ONLY index online")
    b.add_argument("name")
    b.add_argument("--batch", type=int, default=200)

    st = sub.add_parser("stats", help="store, index state or text index statistics")
    st.add_argument("kind", choices=["store", "indexes", "text"])
    st.add_argument("index", nargs="?")
    st.add_argument("--model", nargs="*", metavar="KEY=VALUE", help="analytic text space model instead of measuring")

    ts = sub.add_parser("text-stats", help="same as: stats text")
    ts.add_argument("index", nargs="?")
    ts.add_argument("--model", nargs="*", metavar="KEY=VALUE")

    se = sub.add_parser("search", help="query a TEXT index directly")
    se.add_argument("index")
    se.add_argument("words")
    se.add_argument("--mode", choices=["token", "all", "prefix", "phrase", "near"], default="all")
    se.add_argument("--window", type=int, default=0)

    ct = sub.add_parser("compact-text", help="merge under-filled bunches of a TEXT index")
    ct.add_argument("index", nargs="?")

    sub.add_parser("delete-store", help="remove every key of the store")
    return p


COMMANDS = {
    "init": cmd_init,
    "ingest": cmd_ingest,
    "query": cmd_query,
    "build-index": cmd_build_index,
    "stats": cmd_stats,
    "text-stats": cmd_stats,
    "search": cmd_search,
    "compact-text": cmd_compact_text,
    "delete-store": cmd_delete_store,
}


def main(argv: Optional[list[str]] = None, out=None, engine: Optional[Engine] = None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "text-stats":
        args.kind = "text"
    cfg: Optional[CliConfig] = None
    try:
        cfg = CliConfig.from_args(args)
        cfg.engine = engine
        for name in ("batch", "doc_bytes", "workers", "limit", "max_scanned"):
            value = getattr(args, name, None)
            if value is not None and value < 1:
                raise CliError(f"--{name.replace('_', '-')} must be positive")
        COMMANDS[args.command](cfg, args, out)
    except Exception as exc:  # noqa: BLE001  (every failure becomes a message and exit code)
        sys.stderr.write(f"error: {exc}\n")
        return 1
    finally:
        if engine is None and cfg is not None and cfg.engine is not None:
            cfg.engine.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
