"""Brute-force reference models used by the tests.

Nothing here calls into the code paths under test beyond the public entry
points needed to drive them; expected values are recomputed from plain
Python data.
"""
from __future__ import annotations

import hashlib
import math
import queue
import random
import re
import threading
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Optional

from recstore.kv import Engine, MutationType, NotCommitted

# -- serializability ----------------------------------------------------------

N_COUNTERS = 10


def kv_key(i: int) -> bytes:
    return b"k%03d" % i


def counter_key(i: int) -> bytes:
    return b"c%d" % i


class _DictIO:
    """Serial executor against a plain dict."""

    def __init__(self, data: dict):
        self.data = data

    def get(self, key):
        return self.data.get(key)

    def range(self, begin, end):
        return [(k, self.data[k]) for k in sorted(self.data) if begin <= k < end]

    def set(self, key, value):
        self.data[key] = value

    def clear(self, key):
        self.data.pop(key, None)

    def add(self, key, n):
        cur = int.from_bytes(self.data.get(key, b"\x00" * 8), "little")
        self.data[key] = ((cur + n) % (1 << 64)).to_bytes(8, "little")


class _TxnIO:
    """Same operations against an engine transaction, recording read and write sets."""

    def __init__(self, txn):
        self.txn = txn
        self.read_keys: set[bytes] = set()
        self.read_ranges: list[tuple[bytes, bytes]] = []
        self.write_keys: set[bytes] = set()

    def get(self, key):
        self.read_keys.add(key)
        return self.txn.get(key)

    def range(self, begin, end):
        self.read_ranges.append((begin, end))
        return self.txn.get_range(begin, end)

    def set(self, key, value):
        self.write_keys.add(key)
        self.txn.set(key, value)

    def clear(self, key):
        self.write_keys.add(key)
        self.txn.clear(key)

    def add(self, key, n):
        self.write_keys.add(key)
        self.txn.atomic(MutationType.ADD, key, n.to_bytes(8, "little"))


def txn_logic(seed: int, io, n_keys: int, yield_fn=None) -> list:
    """A deterministic transaction whose writes depend on what it read."""
    rng = random.Random(seed)
    seen = []
    for k in rng.sample(range(n_keys), rng.randint(1, 4)):
        seen.append(io.get(kv_key(k)))
    if rng.random() < 0.3:
        a = rng.randrange(n_keys - 5)
        seen.append(tuple(io.range(kv_key(a), kv_key(a + 5))))
    if rng.random() < 0.1:
        seen.append(io.get(counter_key(rng.randrange(N_COUNTERS))))
    if yield_fn is not None:
        yield_fn()
    stamp = hashlib.sha1(repr((seed, seen)).encode()).digest()[:8]
    for k in rng.sample(range(n_keys), rng.randint(1, 3)):
        if rng.random() < 0.1:
            io.clear(kv_key(k))
        else:
            io.set(kv_key(k), stamp)
    if rng.random() < 0.2:
        io.add(counter_key(rng.randrange(N_COUNTERS)), 1)
    return seen


@dataclass
class Attempt:
    seed: int
    read_version: int
    bound: int  # last commit version visible to the conflict check
    version: Optional[int]  # commit version, None when aborted
    read_keys: set
    read_ranges: list
    write_keys: set
    seen: list = field(default_factory=list)


def run_kv_workload(n_workers: int, n_txns: int, n_keys: int, seed: int = 0) -> tuple[Engine, list[Attempt]]:
    engine = Engine()
    work: "queue.Queue[int]" = queue.Queue()
    rng = random.Random(seed)
    for _ in range(n_txns):
        work.put(rng.getrandbits(48))
    attempts: list[Attempt] = []
    lock = threading.Lock()
    pause = threading.Event()

    def worker():
        while True:
            try:
                s = work.get_nowait()
            except queue.Empty:
                return
            while True:
                txn = engine.begin()
                io = _TxnIO(txn)
                # Waiting on an event releases the GIL so other workers interleave.
                seen = txn_logic(s, io, n_keys, lambda: pause.wait(0.0005))
                try:
                    version = txn.commit()
                    bound = version - 1
                except NotCommitted as exc:
                    version, bound = None, exc.bound
                with lock:
                    attempts.append(
                        Attempt(s, txn.read_version, bound, version, io.read_keys, io.read_ranges, io.write_keys, seen)
                    )
                if version is not None:
                    break

    threads = [threading.Thread(target=worker) for _ in range(n_workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return engine, attempts


def _reads_hit(attempt: Attempt, writes: set) -> bool:
    if attempt.read_keys & writes:
        return True
    return any(b <= k < e for b, e in attempt.read_ranges for k in writes)


def check_serializable(engine: Engine, attempts: list[Attempt], n_keys: int) -> list[str]:
    """Problems found; empty when the history is serializable and aborts match the rule."""
    problems = []
    committed = sorted((a for a in attempts if a.version is not None), key=lambda a: a.version)
    versions = [a.version for a in committed]
    if len(set(versions)) != len(versions):
        problems.append("duplicate commit versions")
    state: dict = {}
    io = _DictIO(state)
    for a in committed:
        seen = txn_logic(a.seed, io, n_keys)
        if seen != a.seen:
            problems.append(f"commit {a.version} observed reads that differ from the serial replay")
    actual = dict(engine.latest_range())
    if actual != state:
        problems.append(f"final state differs from serial replay ({len(actual)} vs {len(state)} keys)")
    for a in attempts:
        predicted = any(
            a.read_version < c.version <= a.bound and _reads_hit(a, c.write_keys) for c in committed
        )
        if predicted != (a.version is None):
            problems.append(
                f"seed {a.seed}: {'aborted' if a.version is None else 'committed'} but rule predicts "
                f"{'abort' if predicted else 'commit'}"
            )
    return problems


# -- text ---------------------------------------------------------------------

_WORD = re.compile(r"[a-z0-9]+")


def simple_tokens(text: Optional[str]) -> dict[str, list[int]]:
    """Lowercase ASCII words with their ordinal positions."""
    out: dict[str, list[int]] = defaultdict(list)
    for i, w in enumerate(_WORD.findall((text or "").lower())):
        out[w].append(i)
    return dict(out)


def text_oracle(docs: dict[tuple, Optional[str]]) -> dict[str, dict[tuple, list[int]]]:
    out: dict[str, dict[tuple, list[int]]] = defaultdict(dict)
    for pk, text in docs.items():
        for tok, pos in simple_tokens(text).items():
            out[tok][pk] = pos
    return dict(out)


def phrase_match(text: str, words: list[str]) -> bool:
    toks = _WORD.findall(text.lower())
    n = len(words)
    return any(toks[i : i + n] == words for i in range(len(toks) - n + 1))


def near_match(text: str, words: list[str], window: int) -> bool:
    """Some occurrence of every word lies within ``window`` positions of the earliest one."""
    toks = _WORD.findall(text.lower())
    pos = {w: [i for i, t in enumerate(toks) if t == w] for w in set(words)}
    if any(not p for p in pos.values()):
        return False
    return any(all(any(s <= p <= s + window for p in ps) for ps in pos.values()) for s in range(len(toks)))


# -- rank ---------------------------------------------------------------------


def rank_oracle(values) -> list:
    return sorted(values)


# -- aggregates ---------------------------------------------------------------


@dataclass
class AggregateOracle:
    """Running expectations for COUNT/SUM-style indexes and monotone extremes."""

    count: Counter = field(default_factory=Counter)
    count_non_null: Counter = field(default_factory=Counter)
    total: Counter = field(default_factory=Counter)
    min_ever: dict = field(default_factory=dict)
    max_ever: dict = field(default_factory=dict)

    def observe(self, group, value) -> None:
        if value is None:
            return
        self.min_ever[group] = min(self.min_ever.get(group, value), value)
        self.max_ever[group] = max(self.max_ever.get(group, value), value)


# -- tuple ordering -----------------------------------------------------------

_TYPE_ORDER = {type(None): 0, bytes: 1, str: 2, tuple: 5, int: 20, float: 33, bool: 38}


def element_key(v):
    """Sort key reproducing the documented cross-type order without encoding anything."""
    if isinstance(v, bool):
        return (38, v)
    kind = _TYPE_ORDER[type(v)]
    if v is None:
        return (kind,)
    if isinstance(v, str):
        return (kind, v.encode("utf-8"))
    if isinstance(v, tuple):
        return (kind, tuple_key(v))
    if isinstance(v, float):
        return (kind, v, math.copysign(1.0, v))
    return (kind, v)


def tuple_key(t: tuple):
    return tuple(element_key(v) for v in t)


_STRINGS = ["", "a", "ab", "a\x00", "\x00", "b", "é", "z中", "A"]
_BYTES = [b"", b"\x00", b"\x00\xff", b"\x01", b"a", b"\xff", b"ab\x00c"]


def random_element(rng: random.Random, depth: int = 0):
    kind = rng.randrange(9 if depth < 2 else 8)
    if kind == 0:
        return None
    if kind == 1:
        return rng.choice(_BYTES) if rng.random() < 0.5 else rng.randbytes(rng.randrange(4))
    if kind == 2:
        return rng.choice(_STRINGS) if rng.random() < 0.5 else "".join(rng.choice("ab\x00é") for _ in range(rng.randrange(4)))
    if kind == 3:
        bits = rng.choice([4, 8, 16, 32, 64])
        return rng.randrange(-(1 << bits) + 1, 1 << bits)
    if kind == 4:
        return rng.choice([0, 1, -1, 255, 256, -255, -256, (1 << 64) - 1, -(1 << 64) + 1])
    if kind == 5:
        return rng.choice([0.0, -0.0, 1.5, -1.5, float("inf"), -float("inf"), 1e-300, -1e300])
    if kind == 6:
        return rng.uniform(-1e6, 1e6)
    if kind == 7:
        return rng.random() < 0.5
    return random_tuple(rng, depth + 1)


def random_tuple(rng: random.Random, depth: int = 0) -> tuple:
    return tuple(random_element(rng, depth) for _ in range(rng.randrange(4)))


def _sign(x) -> int:
    return (x > 0) - (x < 0)


def check_tuple_pairs(pack, unpack, n_pairs: int, seed: int = 0) -> list[str]:
    """Order preservation and round trip over random pairs, many sharing a prefix."""
    rng = random.Random(seed)
    problems = []
    for _ in range(n_pairs):
        a = random_tuple(rng)
        if rng.random() < 0.5:
            cut = rng.randrange(len(a) + 1)
            b = a[:cut] + random_tuple(rng)
        else:
            b = random_tuple(rng)
        pa, pb = pack(a), pack(b)
        ka, kb = tuple_key(a), tuple_key(b)
        expected = _sign((ka > kb) - (ka < kb))
        got = _sign((pa > pb) - (pa < pb))
        if expected != got:
            problems.append(f"order {a!r} vs {b!r}: bytes say {got}, oracle says {expected}")
        for t, p in ((a, pa), (b, pb)):
            back = unpack(p)
            if tuple_key(back) != tuple_key(t):
                problems.append(f"round trip {t!r} -> {back!r}")
        if len(problems) > 20:
            break
    return problems


# -- record store index oracle ---------------------------------------------------


class MixedModel:
    """Plain-dict model of a store using the mixed schema, plus write history."""

    def __init__(self, metadata):
        self.meta = metadata
        self.records: dict[tuple, object] = {}
        self.versions: dict[tuple, object] = {}
        self.saved_amounts: list[tuple[tuple, int]] = []  # (owner group, amount) for every Doc save
        self.event_saves: Counter = Counter()

    def pk(self, rec) -> tuple:
        return (self.meta.record_type(rec.type_name).type_key, rec["id"])

    def save(self, rec, stamp) -> None:
        pk = self.pk(rec)
        self.records[pk] = rec
        self.versions[pk] = stamp
        if rec.type_name == "Doc" and rec.get("amount") is not None:
            self.saved_amounts.append(((rec.get("owner"),), rec["amount"]))
        if rec.type_name == "Event":
            self.event_saves[(rec.get("owner"),)] += 1

    def delete(self, pk) -> None:
        self.records.pop(pk, None)
        self.versions.pop(pk, None)

    def of(self, *types):
        return [(pk, r) for pk, r in sorted(self.records.items()) if r.type_name in types]

    # expected index contents, computed straight from the field values
    def expected(self) -> dict:
        exp: dict = {}
        exp["by_owner"] = Counter((r.get("owner"),) + pk for pk, r in self.of("Doc", "Note"))
        exp["by_tag"] = Counter((t,) + pk for pk, r in self.of("Doc") for t in r.get("tags", []))
        exp["owner_amount"] = Counter((r.get("owner"), r.get("amount")) + pk for pk, r in self.of("Doc"))
        exp["count_by_owner"] = dict(Counter((r.get("owner"),) for _, r in self.of("Doc", "Note", "Event")))
        nn: Counter = Counter()
        total: Counter = Counter()
        for _, r in self.of("Doc", "Note"):
            if r.get("amount") is not None:
                nn[(r.get("owner"),)] += 1
                total[(r.get("owner"),)] += r["amount"]
        exp["amount_non_null"] = dict(nn)
        exp["amount_sum"] = {g: v for g, v in total.items() if v != 0}
        if self.saved_amounts:
            exp["amount_min"] = {(): min(a for _, a in self.saved_amounts)}
        else:
            exp["amount_min"] = {}
        mx: dict = {}
        for g, a in self.saved_amounts:
            mx[g] = max(mx.get(g, a), a)
        exp["amount_max"] = mx
        exp["event_saves"] = dict(self.event_saves)
        exp["versions"] = Counter((self.versions[pk],) + pk for pk, _ in self.of("Doc", "Note", "Event"))
        ranks: dict = defaultdict(list)
        for pk, r in self.of("Event"):
            ranks[(r.get("owner"),)].append((r.get("score"),) + pk)
        exp["score_rank"] = {g: sorted(v, key=tuple_key) for g, v in ranks.items()}
        exp["body_text"] = text_oracle({pk: r.get("body") for pk, r in self.of("Doc")})
        return exp


def index_discrepancies(store, model: MixedModel) -> list[str]:
    """Differences between every index of ``store`` and the model's recomputation."""
    from recstore.metadata import IndexType

    exp = model.expected()
    problems = []
    for ix in store.metadata.indexes:
        m = store.maintainer(ix)
        want = exp[ix.name]
        if ix.type in (IndexType.VALUE, IndexType.VERSION):
            got = Counter(e.key for e in m.all_entries())
        elif ix.type.is_aggregate:
            got = m.all_groups()
        elif ix.type is IndexType.RANK:
            got = {}
            for g in m.groups():
                rs = m.ranked_set(g)
                got[g] = rs.members()
                problems += [f"{ix.name} {g}: {p}" for p in rs.check()]
                for i, v in enumerate(want.get(g, [])):
                    if rs.rank_of(v) != i or rs.value_at_rank(i) != v:
                        problems.append(f"{ix.name} {g}: rank mismatch at {i}")
                        break
        elif ix.type is IndexType.TEXT:
            got = m.map.flatten()
        else:
            raise AssertionError(ix.type)
        if got != want:
            problems.append(f"index {ix.name} differs from recomputation")
    return problems


def run_mixed_workload(engine, location, metadata, n_ops: int, seed: int = 0, model=None, batch=(1, 8)):
    """Random saves, updates and deletes; returns the model kept in step with commits."""
    from recstore import open_record_store
    from recstore.kv import version_bytes
    from recstore.tuples import Versionstamp
    from fixtures import MIXED_TYPES, random_mixed_record

    rng = random.Random(seed)
    model = model or MixedModel(metadata)
    done = 0
    while done < n_ops:
        ops = []
        for _ in range(min(rng.randint(*batch), n_ops - done)):
            type_name = rng.choice(MIXED_TYPES)
            rid = rng.randrange(120)
            pk = (metadata.record_type(type_name).type_key, rid)
            if pk in model.records and rng.random() < 0.2:
                ops.append(("delete", pk))
            else:
                ops.append(("save", random_mixed_record(rng, type_name, rid)))
        done += len(ops)
        txn = engine.begin()
        store = open_record_store(txn, location, metadata)
        for kind, arg in ops:
            if kind == "save":
                store.save_record(arg)
            else:
                store.delete_record(arg)
        version = txn.commit()
        counter = 0
        for kind, arg in ops:
            if kind == "save":
                model.save(arg, Versionstamp(version_bytes(version), counter))
                counter += 1
            else:
                model.delete(arg)
    return model


# -- online index build -------------------------------------------------------


def build_metadata():
    """Version 1 has no secondary indexes; version 2 adds three that need building."""
    from recstore.metadata import FieldDescriptor as F, MetaDataBuilder

    b = MetaDataBuilder()
    b.add_record_type("Item", [F("id", 1, "int64"), F("group", 2, "text"), F("qty", 3, "int64")], "field('id')")
    v1 = b.build()
    b = MetaDataBuilder(v1)
    b.add_record_type("Item", [F("id", 1, "int64"), F("group", 2, "text"), F("qty", 3, "int64")], "field('id')")
    b.add_index("by_qty", "VALUE", "field('qty')", ["Item"])
    b.add_index("qty_sum", "SUM", "group_by(field('qty'), by=field('group'))", ["Item"])
    b.add_index("qty_rank", "RANK", "group_by(field('qty'), by=field('group'))", ["Item"], levels=4)
    return v1, b.build()


@dataclass
class BuildOutcome:
    reads_before_readable: int
    refused_after_readable: int
    successful_reads: int
    refused_reads: int
    writer_commits: int
    problems: list
    report: object


def _item(rng, i):
    from recstore import Message

    return Message("Item", id=i, group=rng.choice("abcd"), qty=rng.randrange(-100, 1000))


def run_online_build(
    n_records: int,
    batch: int,
    n_writers: int,
    seed: int = 0,
    writer_pause: float = 0.004,
    indexes: tuple = ("by_qty", "qty_sum", "qty_rank"),
) -> BuildOutcome:
    """Build three indexes over ``n_records`` while writers and readers hit the store."""
    import threading

    from recstore import Engine, open_record_store
    from recstore.indexes.base import IndexNotReadable
    from recstore.indexes.builder import build_index
    from recstore.indexes.value import TupleRange
    from recstore.subspace import Subspace

    v1, v2 = build_metadata()
    loc = Subspace(("build",))
    engine = Engine(record_history=True)
    rng = random.Random(seed)
    for start in range(0, n_records, 500):
        def load(t, start=start):
            s = open_record_store(t, loc, v1)
            for i in range(start, min(start + 500, n_records)):
                s.save_record(_item(rng, i))

        engine.run(load)
    engine.run(lambda t: open_record_store(t, loc, v2))  # upgrade: new indexes start DISABLED
    engine.history.clear()

    done = threading.Event()
    reads: list[tuple[int, bool]] = []  # (read version, served)
    commits = []
    lock = threading.Lock()

    def writer(w):
        wrng = random.Random(seed * 100 + w)
        ops = after_build = 0
        # keep going a little past the build so reads of the finished index are exercised too
        while after_build < 5:
            ops += 1
            after_build += done.is_set()
            i = wrng.randrange(int(n_records * 1.1))

            def op(t):
                s = open_record_store(t, loc, v2)
                if wrng.random() < 0.2:
                    s.delete_record((i,))
                else:
                    s.save_record(_item(wrng, i))

            engine.run(op)
            with lock:
                commits.append(i)
            t = engine.begin()
            s = open_record_store(t, loc, v2)
            try:
                for name in indexes:
                    m = s.maintainer(name)
                    if name == "qty_rank":
                        m.size(("a",))
                    elif name == "qty_sum":
                        m.get(("a",))
                    else:
                        next(m.scan_events(TupleRange()), None)
                served = True
            except IndexNotReadable:
                served = False
            with lock:
                reads.append((t.read_version, served))
            done.wait(writer_pause)

    threads = [threading.Thread(target=writer, args=(w,)) for w in range(n_writers)]
    for th in threads:
        th.start()
    reports = [build_index(engine, loc, v2, name, batch_size=batch) for name in indexes]
    done.set()
    for th in threads:
        th.join()

    # the commit that made each index readable cleared its state key
    store = open_record_store(engine.begin(), loc, v2)
    ready = None
    for rec in engine.history:
        state_keys = {store._state_key(v2.index(n)) for n in indexes}
        if any(op[0] == "clear" and op[1] in state_keys for op in rec.ops):
            ready = rec.version if ready is None else max(ready, rec.version)
    problems = [] if ready is not None else ["no commit made the indexes readable"]
    ready = ready or 0
    before = sum(1 for v, served in reads if served and v < ready)
    refused_after = sum(1 for v, served in reads if not served and v >= ready)

    records = [r.record for r in store.all_records()]
    want_value = sorted(((r["qty"], r["id"]) for r in records), key=tuple_key)
    if "by_qty" in indexes and [e.key for e in store.maintainer("by_qty").scan()] != want_value:
        problems.append("by_qty differs from recomputation")
    sums: Counter = Counter()
    for r in records:
        sums[(r["group"],)] += r["qty"]
    if "qty_sum" in indexes and store.maintainer("qty_sum").all_groups() != {g: v for g, v in sums.items() if v}:
        problems.append("qty_sum differs from recomputation")
    for g in "abcd" if "qty_rank" in indexes else "":
        want = sorted((r["qty"], r["id"]) for r in records if r["group"] == g)
        rs = store.maintainer("qty_rank").ranked_set((g,))
        if rs.members() != want or rs.check():
            problems.append(f"qty_rank group {g} differs from recomputation")
    for name in indexes:
        if not store.is_readable(name):
            problems.append(f"{name} not readable after its build")
    return BuildOutcome(before, refused_after, sum(1 for _, s in reads if s), sum(1 for _, s in reads if not s),
                        len(commits), problems, reports)
